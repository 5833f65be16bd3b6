"""Ensemble-of-shape-functions global descriptor.

The descriptor is a 640-vector: ten 64-bin sub-histograms, each
normalized to unit sum, concatenated in the order

    d2_on, d2_off, d2_mixed, a3_on, a3_off, a3_mixed,
    d3_on, d3_off, d3_mixed, d2_ratio

Sampled point triples contribute pairwise distances (d2), triangle
angles (a3), square-root triangle areas (d3) and one segment-length
ratio per triple, with the d2/a3/d3 entries split by how the segment
traverses an occupancy voxel grid (on / off / mixed surface).

All accumulated lengths are measured in grid coordinates and divided by
the grid diagonal, so descriptors are invariant to translation and
uniform scaling of the input cloud: the only scale-dependent float
operation is the single division by the longest-axis extent.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cloud import PointCloud
from .errors import DataError

ESF_LENGTH = 640
SUBHIST_BINS = 64
ESF_RESOLUTION = 64
DEFAULT_ESF_SAMPLES = 20000

BLOCK_NAMES = (
    "d2_on", "d2_off", "d2_mixed",
    "a3_on", "a3_off", "a3_mixed",
    "d3_on", "d3_off", "d3_mixed",
    "d2_ratio",
)

# Relative padding keeping every point strictly inside the grid cube.
_GRID_PAD = 1e-6

_ON, _OFF, _MIXED = 0, 1, 2


class LineClass(Enum):
    ON = "on"
    OFF = "off"
    MIXED = "mixed"


_CLASS_BY_CODE = {_ON: LineClass.ON, _OFF: LineClass.OFF, _MIXED: LineClass.MIXED}


@dataclass(frozen=True)
class VoxelGrid:
    """Cubic occupancy grid over a cloud's bounding box.

    The cube is anchored at the per-axis minimum corner with side equal
    to the longest-axis extent, padded so no point lies on the upper
    boundary face.
    """

    lower: np.ndarray
    extent: float
    resolution: int
    occupancy: np.ndarray

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """World-coordinate (lower, upper) corners of the grid cube."""
        lo = self.lower - _GRID_PAD * self.extent
        hi = self.lower + (1.0 + _GRID_PAD) * self.extent
        return lo, hi

    @property
    def diagonal(self) -> float:
        """Grid cube diagonal in grid coordinates."""
        return self.resolution * np.sqrt(3.0)

    def to_grid(self, points: np.ndarray) -> np.ndarray:
        """Map world points to continuous grid coordinates in [0, res)."""
        u = (np.asarray(points, dtype=np.float64) - self.lower) / self.extent
        return (u + _GRID_PAD) * (self.resolution / (1.0 + 2.0 * _GRID_PAD))

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        g = np.floor(self.to_grid(points)).astype(np.int64)
        return np.clip(g, 0, self.resolution - 1)

    def occupied_count(self) -> int:
        return int(self.occupancy.sum())


def voxelize(cloud: PointCloud, resolution: int = ESF_RESOLUTION) -> VoxelGrid:
    """Build the occupancy grid: a cell is occupied iff >= 1 point maps to it.

    A degenerate cloud (all points identical) yields a single occupied
    cell rather than an error.
    """
    cloud.require_nonempty("voxelize")
    if resolution < 2:
        raise DataError(f"voxelize: resolution must be >= 2, got {resolution}")
    pts = cloud.points
    lower = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lower).max())
    if extent == 0.0:
        extent = 1.0
    occupancy = np.zeros((resolution,) * 3, dtype=bool)
    grid = VoxelGrid(lower=lower.copy(), extent=extent, resolution=resolution,
                     occupancy=occupancy)
    ix = grid.cell_index(pts)
    occupancy[ix[:, 0], ix[:, 1], ix[:, 2]] = True
    occupancy.setflags(write=False)
    return grid


def _trace_batch(occ_flat: np.ndarray, res: int, g0: np.ndarray, g1: np.ndarray):
    """Vectorized 3D DDA over segments in grid coordinates.

    Returns per segment: visited cell count, occupied visited count,
    occupied distinct-endpoint-cell count, distinct endpoint cell count.
    All segments advance in lockstep, one cell per iteration, with the
    live set compacted as segments reach their end cell.
    """
    m = g0.shape[0]
    cur = np.clip(np.floor(g0).astype(np.int64), 0, res - 1)
    end = np.clip(np.floor(g1).astype(np.int64), 0, res - 1)
    d = g1 - g0
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0.0, 1.0 / np.abs(d), np.inf)
        boundary = cur + (step > 0)
        t_max = np.where(d != 0.0, (boundary - g0) / d, np.inf)

    cx, cy, cz = cur[:, 0].copy(), cur[:, 1].copy(), cur[:, 2].copy()
    sx, sy, sz = step[:, 0], step[:, 1], step[:, 2]
    tx, ty, tz = t_max[:, 0].copy(), t_max[:, 1].copy(), t_max[:, 2].copy()
    dtx, dty, dtz = t_delta[:, 0], t_delta[:, 1], t_delta[:, 2]

    flat = (cx * res + cy) * res + cz
    flat_end = (end[:, 0] * res + end[:, 1]) * res + end[:, 2]
    distinct = flat != flat_end
    end_cells = 1 + distinct.astype(np.int64)
    end_occ = occ_flat[flat].astype(np.int64)
    end_occ += np.where(distinct, occ_flat[flat_end], 0)

    n_vis = np.ones(m, dtype=np.int64)
    n_occ = occ_flat[flat].astype(np.int64)

    alive = np.flatnonzero(distinct)
    # An in-grid segment crosses at most 3*(res-1) boundaries; the extra
    # margin absorbs float round-off at cell corners.
    for _ in range(3 * res + 3):
        if alive.size == 0:
            break
        txa, tya, tza = tx[alive], ty[alive], tz[alive]
        pick_x = (txa <= tya) & (txa <= tza)
        pick_y = ~pick_x & (tya <= tza)
        rows_x = alive[pick_x]
        rows_y = alive[pick_y]
        rows_z = alive[~pick_x & ~pick_y]
        if rows_x.size:
            cx[rows_x] = np.clip(cx[rows_x] + sx[rows_x], 0, res - 1)
            tx[rows_x] += dtx[rows_x]
        if rows_y.size:
            cy[rows_y] = np.clip(cy[rows_y] + sy[rows_y], 0, res - 1)
            ty[rows_y] += dty[rows_y]
        if rows_z.size:
            cz[rows_z] = np.clip(cz[rows_z] + sz[rows_z], 0, res - 1)
            tz[rows_z] += dtz[rows_z]
        now = (cx[alive] * res + cy[alive]) * res + cz[alive]
        n_vis[alive] += 1
        n_occ[alive] += occ_flat[now]
        alive = alive[now != flat_end[alive]]
    if alive.size:
        # Round-off stragglers: account for the end cell and stop.
        n_vis[alive] += 1
        n_occ[alive] += occ_flat[flat_end[alive]]
    return n_vis, n_occ, end_occ, end_cells


def _classify(n_vis, n_occ, end_occ, end_cells):
    """ON: every visited cell occupied. OFF: exactly the endpoint cells
    occupied. MIXED: anything else."""
    cls = np.full(n_vis.shape, _MIXED, dtype=np.int64)
    on = n_occ == n_vis
    off = ~on & (n_occ == end_occ) & (end_occ == end_cells)
    cls[on] = _ON
    cls[off] = _OFF
    return cls


def trace_line_class(grid: VoxelGrid, p, q) -> tuple[LineClass, float]:
    """Classify the voxel traversal of segment pq and return the fraction
    of visited voxels that are occupied."""
    pq = np.asarray([p, q], dtype=np.float64).reshape(2, 3)
    lo, hi = grid.bounds
    if ((pq < lo) | (pq > hi)).any():
        raise DataError("trace_line_class: segment endpoint outside grid bounds")
    g = grid.to_grid(pq)
    occ_flat = np.ascontiguousarray(grid.occupancy).reshape(-1)
    n_vis, n_occ, end_occ, end_cells = _trace_batch(
        occ_flat, grid.resolution, g[:1], g[1:]
    )
    code = int(_classify(n_vis, n_occ, end_occ, end_cells)[0])
    return _CLASS_BY_CODE[code], float(n_occ[0] / n_vis[0])


def _sample_triples(rng: np.random.Generator, n: int, samples: int) -> np.ndarray:
    """Seeded (samples, 3) index triples with three distinct members each."""
    idx = rng.integers(0, n, size=(samples, 3))
    while True:
        dup = (
            (idx[:, 0] == idx[:, 1])
            | (idx[:, 1] == idx[:, 2])
            | (idx[:, 0] == idx[:, 2])
        )
        bad = np.flatnonzero(dup)
        if bad.size == 0:
            return idx
        idx[bad] = rng.integers(0, n, size=(bad.size, 3))


def _hist64(values: np.ndarray) -> np.ndarray:
    bins = np.clip((values * SUBHIST_BINS).astype(np.int64), 0, SUBHIST_BINS - 1)
    return np.bincount(bins, minlength=SUBHIST_BINS).astype(np.float64)


def compute_esf(
    cloud: PointCloud,
    samples: int = DEFAULT_ESF_SAMPLES,
    seed: int = 0,
) -> np.ndarray:
    """Compute the 640-bin descriptor from seeded random point triples.

    Deterministic for fixed (cloud, samples, seed). Pure function; safe
    to call concurrently on different clouds.
    """
    if len(cloud) < 3:
        raise DataError(f"compute_esf: need >= 3 points, got {len(cloud)}")
    if samples < 1:
        raise DataError(f"compute_esf: samples must be >= 1, got {samples}")

    grid = voxelize(cloud, ESF_RESOLUTION)
    g = grid.to_grid(cloud.points)
    diag = grid.diagonal

    rng = np.random.default_rng(seed)
    tri = _sample_triples(rng, len(cloud), samples)
    ratio_pick = rng.integers(0, 3, size=samples)

    a, b, c = g[tri[:, 0]], g[tri[:, 1]], g[tri[:, 2]]
    seg_p = np.concatenate([a, b, c])
    seg_q = np.concatenate([b, c, a])

    occ_flat = np.ascontiguousarray(grid.occupancy).reshape(-1)
    cls = _classify(*_trace_batch(occ_flat, grid.resolution, seg_p, seg_q))
    seg_cls = cls.reshape(3, samples)          # rows: AB, BC, CA

    seg_len = np.linalg.norm(seg_q - seg_p, axis=1).reshape(3, samples)
    d2 = seg_len / diag

    # Angle at each vertex, keyed by the class of the opposite side.
    ab, bc, ca = seg_len[0], seg_len[1], seg_len[2]
    ang_a = _triangle_angle(b - a, c - a, ab, ca)   # opposite BC
    ang_b = _triangle_angle(a - b, c - b, ab, bc)   # opposite CA
    ang_c = _triangle_angle(a - c, b - c, ca, bc)   # opposite AB
    angles = np.stack([ang_a, ang_b, ang_c]) / np.pi
    angle_cls = np.stack([seg_cls[1], seg_cls[2], seg_cls[0]])

    # sqrt triangle area, keyed by the majority class of the three sides.
    cross = np.cross(b - a, c - a)
    d3 = np.sqrt(0.5 * np.linalg.norm(cross, axis=1)) / diag
    on_cnt = (seg_cls == _ON).sum(axis=0)
    off_cnt = (seg_cls == _OFF).sum(axis=0)
    d3_cls = np.where(on_cnt >= 2, _ON, np.where(off_cnt >= 2, _OFF, _MIXED))

    # Ratio of two segment lengths drawn per triple, shorter over longer.
    s1 = seg_len[ratio_pick, np.arange(samples)]
    s2 = seg_len[(ratio_pick + 1) % 3, np.arange(samples)]
    hi = np.maximum(s1, s2)
    ratio = np.where(hi > 0.0, np.minimum(s1, s2) / np.where(hi > 0, hi, 1.0), 1.0)

    desc = np.zeros(ESF_LENGTH)
    flat_d2, flat_ang = d2.reshape(-1), angles.reshape(-1)
    flat_d2_cls, flat_ang_cls = seg_cls.reshape(-1), angle_cls.reshape(-1)
    for code in (_ON, _OFF, _MIXED):
        desc[_block(0 + code)] = _hist64(flat_d2[flat_d2_cls == code])
        desc[_block(3 + code)] = _hist64(flat_ang[flat_ang_cls == code])
        desc[_block(6 + code)] = _hist64(d3[d3_cls == code])
    desc[_block(9)] = _hist64(ratio)

    for blk in range(10):
        total = desc[_block(blk)].sum()
        if total > 0.0:
            desc[_block(blk)] /= total
    return desc


def _block(i: int) -> slice:
    return slice(i * SUBHIST_BINS, (i + 1) * SUBHIST_BINS)


def _triangle_angle(v1: np.ndarray, v2: np.ndarray, n1: np.ndarray, n2: np.ndarray):
    denom = n1 * n2
    with np.errstate(divide="ignore", invalid="ignore"):
        cosang = np.where(denom > 0.0, np.einsum("ij,ij->i", v1, v2) / np.where(denom > 0, denom, 1.0), 1.0)
    return np.arccos(np.clip(cosang, -1.0, 1.0))


def subhistograms(descriptor: np.ndarray) -> np.ndarray:
    """View the 640-vector as a (10, 64) array of sub-histograms."""
    d = np.asarray(descriptor, dtype=np.float64)
    if d.shape != (ESF_LENGTH,):
        raise DataError(f"descriptor must have length {ESF_LENGTH}, got shape {d.shape}")
    return d.reshape(10, SUBHIST_BINS)


def descriptor_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean norm of the element-wise descriptor difference."""
    da = np.asarray(a, dtype=np.float64)
    db = np.asarray(b, dtype=np.float64)
    if da.shape != (ESF_LENGTH,) or db.shape != (ESF_LENGTH,):
        raise DataError(
            f"descriptor length mismatch: {da.shape} vs {db.shape}, expected ({ESF_LENGTH},)"
        )
    return float(np.linalg.norm(da - db))
