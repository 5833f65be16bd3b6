import json
import math
import os

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from crossreg.cloud import PointCloud, SimilarityTransform, apply_transform
from crossreg.errors import DataError
from crossreg.esf import (
    ESF_LENGTH,
    LineClass,
    SUBHIST_BINS,
    _GRID_PAD,
    compute_esf,
    descriptor_distance,
    subhistograms,
    trace_line_class,
    voxelize,
)

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def lattice_cloud(seed, n=800, step=2.0**-10, span=2**20):
    """Cloud whose coordinates are exact dyadic lattice multiples, so
    translation/scale arithmetic in the descriptor is exact."""
    rng = np.random.default_rng(seed)
    return PointCloud(rng.integers(0, span, size=(n, 3)).astype(np.float64) * step)


# ---------------------------------------------------------------------------
# voxelize
# ---------------------------------------------------------------------------

def test_voxelize_single_point():
    grid = voxelize(PointCloud([[2.0, 3.0, 4.0]]))
    assert grid.occupied_count() == 1


def test_voxelize_opposite_corners_res2():
    grid = voxelize(PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]), resolution=2)
    assert grid.occupancy.shape == (2, 2, 2)
    assert grid.occupied_count() == 2
    assert grid.occupancy[0, 0, 0] and grid.occupancy[1, 1, 1]


def test_voxelize_count_matches_hash_oracle(rng):
    pts = rng.normal(scale=3.0, size=(1000, 3))
    grid = voxelize(PointCloud(pts))
    # independent recount: same mapping recomputed from scratch
    lower = pts.min(axis=0)
    extent = (pts.max(axis=0) - lower).max()
    u = (pts - lower) / extent
    g = np.floor((u + _GRID_PAD) * (64 / (1 + 2 * _GRID_PAD))).astype(int)
    cells = {tuple(c) for c in np.clip(g, 0, 63)}
    assert grid.occupied_count() == len(cells)


def test_voxelize_no_point_on_upper_face(rng):
    pts = rng.random((200, 3)) * 7
    grid = voxelize(PointCloud(pts))
    assert (grid.cell_index(pts) <= grid.resolution - 1).all()
    lo, hi = grid.bounds
    assert (pts < hi).all() and (pts > lo).all()


def test_voxelize_degenerate_cloud_single_cell():
    grid = voxelize(PointCloud(np.full((5, 3), 1.25)))
    assert grid.occupied_count() == 1


def test_voxelize_resolution_validation():
    with pytest.raises(DataError, match="resolution"):
        voxelize(PointCloud([[0, 0, 0]]), resolution=1)


# ---------------------------------------------------------------------------
# line tracing
# ---------------------------------------------------------------------------

def test_trace_degenerate_segment_on():
    grid = voxelize(PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]), resolution=4)
    cls, frac = trace_line_class(grid, [0, 0, 0], [0, 0, 0])
    assert cls is LineClass.ON and frac == 1.0


def test_trace_off_between_occupied_endpoints():
    # two occupied corner cells, nothing in between
    grid = voxelize(PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]), resolution=8)
    cls, frac = trace_line_class(grid, [0, 0, 0], [1.0, 1.0, 1.0])
    assert cls is LineClass.OFF
    assert 0.0 < frac < 1.0


def test_trace_solid_cube_interior_on(rng):
    # fully occupied grid: every traversal must be ON with fraction 1
    side = np.linspace(0.0, 1.0, 9)
    pts = np.array(np.meshgrid(side, side, side)).reshape(3, -1).T
    grid = voxelize(PointCloud(pts), resolution=8)
    assert grid.occupied_count() == 8**3
    for _ in range(20):
        p, q = rng.random((2, 3))
        cls, frac = trace_line_class(grid, p, q)
        assert cls is LineClass.ON and frac == 1.0


def test_trace_mixed(rng):
    # occupied along one straight wall, a gap, then more occupancy
    pts = np.vstack([
        np.stack([np.linspace(0, 0.45, 40), np.zeros(40), np.zeros(40)], axis=1),
        [[1.0, 0.0, 0.0]],
        [[0.0, 1.0, 1.0]],
    ])
    grid = voxelize(PointCloud(pts), resolution=16)
    cls, frac = trace_line_class(grid, [0.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert cls is LineClass.MIXED
    assert 0.0 < frac < 1.0


def test_trace_outside_bounds_errors():
    grid = voxelize(PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
    with pytest.raises(DataError, match="outside grid bounds"):
        trace_line_class(grid, [0.5, 0.5, 0.5], [3.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# descriptor
# ---------------------------------------------------------------------------

def test_esf_length_and_block_sums(rng):
    cloud = PointCloud(rng.random((400, 3)) * 5)
    desc = compute_esf(cloud, samples=3000, seed=0)
    assert desc.shape == (ESF_LENGTH,)
    assert (desc >= 0).all()
    for block in subhistograms(desc):
        total = block.sum()
        assert total == pytest.approx(1.0, abs=1e-9) or total == 0.0


def test_esf_deterministic(rng):
    cloud = PointCloud(rng.random((200, 3)))
    a = compute_esf(cloud, samples=2000, seed=7)
    b = compute_esf(cloud, samples=2000, seed=7)
    assert np.array_equal(a, b)


def test_esf_needs_three_points():
    with pytest.raises(DataError, match="3 points"):
        compute_esf(PointCloud([[0, 0, 0], [1, 1, 1]]), samples=10, seed=0)


def test_esf_translation_bit_identical():
    cloud = lattice_cloud(5)
    moved = PointCloud(cloud.points + np.array([512.25, -101.5, 33.0]))
    a = compute_esf(cloud, samples=3000, seed=2)
    b = compute_esf(moved, samples=3000, seed=2)
    assert np.array_equal(a, b)


def test_esf_scale_bit_identical():
    cloud = lattice_cloud(6)
    a = compute_esf(cloud, samples=3000, seed=2)
    for factor in (3.0, 4.0, 0.5):
        scaled = PointCloud(cloud.points * factor)
        assert np.array_equal(a, compute_esf(scaled, samples=3000, seed=2))


def test_esf_rotation_within_recorded_envelope():
    with open(os.path.join(DATA_DIR, "esf_stability.json")) as fh:
        envelope = json.load(fh)["envelope"]
    cloud = PointCloud(lattice_cloud(8, n=600).points * 0.01)
    for trial in range(3):
        rot = Rotation.random(random_state=trial).as_matrix()
        moved = apply_transform(cloud, SimilarityTransform(rot, np.zeros(3), 1.0))
        d = descriptor_distance(
            compute_esf(cloud, samples=20000, seed=trial),
            compute_esf(moved, samples=20000, seed=100 + trial),
        )
        assert d < envelope


# ---------------------------------------------------------------------------
# descriptor distance
# ---------------------------------------------------------------------------

def test_distance_identity(rng):
    d = rng.random(ESF_LENGTH)
    assert descriptor_distance(d, d) == 0.0


def test_distance_sqrt_ten():
    a = np.zeros(ESF_LENGTH)
    b = np.zeros(ESF_LENGTH)
    b[np.arange(10) * SUBHIST_BINS] = 1.0
    assert descriptor_distance(a, b) == pytest.approx(math.sqrt(10.0), rel=1e-15)


def test_distance_matches_resummation(rng):
    a, b = rng.random((2, ESF_LENGTH))
    want = math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(a, b)))
    assert descriptor_distance(a, b) == pytest.approx(want, rel=1e-12)


def test_distance_metric_properties(rng):
    for _ in range(20):
        a, b, c = rng.random((3, ESF_LENGTH))
        dab = descriptor_distance(a, b)
        assert dab == pytest.approx(descriptor_distance(b, a), rel=1e-12, abs=1e-15)
        assert dab <= descriptor_distance(a, c) + descriptor_distance(c, b) + 1e-12


def test_distance_length_mismatch():
    with pytest.raises(DataError, match="length mismatch"):
        descriptor_distance(np.zeros(ESF_LENGTH), np.zeros(639))
