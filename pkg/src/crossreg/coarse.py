"""Coarse matching: multi-scale spherical candidate regions from the
scene cloud, per-candidate scale estimation, query scale normalization,
and descriptor-based top-K selection.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cloud import (
    PointCloud,
    SimilarityTransform,
    SpatialIndex,
    apply_transform,
    bounding_radius,
    centroid,
    derive_seed,
)
from .errors import ConfigError, DataError, DegenerateGeometryError
from .esf import DEFAULT_ESF_SAMPLES, ESF_LENGTH, compute_esf, descriptor_distance

log = logging.getLogger(__name__)

DEFAULT_RADII = (30.0, 35.0, 40.0, 45.0, 50.0, 55.0, 60.0)

# Crops with fewer points cannot support triple sampling meaningfully.
MIN_REGION_POINTS = 50

# Candidate centers are resampled up to this multiple of the budget.
_RESAMPLE_FACTOR = 10


@dataclass(frozen=True)
class MatchConfig:
    radii: tuple[float, ...] = DEFAULT_RADII
    regions_per_scale: int = 100
    top_k: int = 20
    esf_samples: int = DEFAULT_ESF_SAMPLES
    seed: int = 0
    min_region_points: int = MIN_REGION_POINTS

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        if not radii:
            raise ConfigError("radii must be non-empty")
        if any(r <= 0 for r in radii):
            raise ConfigError(f"radii must be strictly positive: {radii}")
        if any(a >= b for a, b in zip(radii, radii[1:])):
            raise ConfigError(f"radii must be sorted strictly ascending: {radii}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.regions_per_scale < 0:
            raise ConfigError(f"regions_per_scale must be >= 0, got {self.regions_per_scale}")
        if self.esf_samples < 1:
            raise ConfigError(f"esf_samples must be >= 1, got {self.esf_samples}")


@dataclass(frozen=True)
class CandidateRegion:
    """Spherical crop of the scene: every member point lies within
    `radius` of `center`. `scale` and `similarity` are filled in by
    top_k_matches for a concrete query."""

    center: np.ndarray
    radius: float
    cloud: PointCloud
    descriptor: np.ndarray
    indices: np.ndarray = field(repr=False, default=None)
    scale: float | None = None
    similarity: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if self.radius <= 0:
            raise DataError(f"candidate radius must be positive, got {self.radius}")


def _esf_task(args) -> np.ndarray:
    points, samples, seed = args
    return compute_esf(PointCloud(points), samples, seed)


def generate_candidates(
    scene: PointCloud,
    index: SpatialIndex,
    cfg: MatchConfig,
    pool=None,
) -> list[CandidateRegion]:
    """Seeded multi-scale candidate regions with descriptors.

    For each radius, sphere centers are drawn uniformly from scene
    points; crops with fewer than cfg.min_region_points points are
    rejected and redrawn, up to 10x the per-scale budget. Candidates are
    ordered by (radius index, acceptance index) regardless of how the
    descriptor work is scheduled, so results are deterministic for a
    fixed seed. `pool` may be a concurrent.futures executor for the
    descriptor computations.
    """
    scene.require_nonempty("generate_candidates")
    specs: list[tuple[np.ndarray, float, np.ndarray, int]] = []
    for ridx, radius in enumerate(cfg.radii):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, ridx]))
        accepted = 0
        attempts = 0
        budget = cfg.regions_per_scale * _RESAMPLE_FACTOR
        while accepted < cfg.regions_per_scale and attempts < budget:
            attempts += 1
            center = scene.points[int(rng.integers(0, len(scene)))]
            members = index.within_radius(center, radius)
            if members.size < cfg.min_region_points:
                continue
            specs.append((center, radius, members, derive_seed(cfg.seed, ridx, accepted)))
            accepted += 1
        if accepted < cfg.regions_per_scale:
            log.warning(
                "radius %.3g: only %d of %d candidate regions found",
                radius, accepted, cfg.regions_per_scale,
            )

    tasks = [(scene.points[m], cfg.esf_samples, s) for _, _, m, s in specs]
    if pool is None:
        descriptors = [_esf_task(t) for t in tasks]
    else:
        descriptors = list(pool.map(_esf_task, tasks, chunksize=8))

    return [
        CandidateRegion(
            center=center,
            radius=radius,
            cloud=PointCloud(scene.points[members], id=scene.id),
            descriptor=desc,
            indices=members,
        )
        for (center, radius, members, _), desc in zip(specs, descriptors)
    ]


def estimate_scale(candidate_radius: float, query: PointCloud) -> float:
    """Scale factor mapping the query into a candidate region: the
    candidate radius over the query's bounding radius about its centroid."""
    if candidate_radius <= 0:
        raise DataError(f"candidate_radius must be positive, got {candidate_radius}")
    r_query = bounding_radius(query, centroid(query))
    if r_query <= 0.0:
        raise DegenerateGeometryError("estimate_scale: query has zero bounding radius")
    return float(candidate_radius) / r_query


def scale_normalization_transform(query: PointCloud, scale: float) -> SimilarityTransform:
    """Similarity transform scaling the query by `scale` about its centroid."""
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale}")
    c = centroid(query)
    return SimilarityTransform(np.eye(3), (1.0 - scale) * c, scale)


def normalize_query(query: PointCloud, scale: float) -> PointCloud:
    """Scale every query point by `scale` about the query centroid."""
    if scale == 1.0:
        return query
    return apply_transform(query, scale_normalization_transform(query, scale))


def top_k_matches(
    candidates: list[CandidateRegion],
    query: PointCloud,
    cfg: MatchConfig,
) -> list[CandidateRegion]:
    """Rank candidates by descriptor distance to the scale-normalized query.

    The query descriptor is computed once per distinct scale (rounded to
    1e-6) and cached. Returns the top_k candidates with the smallest
    distance; ties break by smaller radius, then input order.
    """
    if not candidates:
        raise DataError("top_k_matches: no candidates")
    cache: dict[float, np.ndarray] = {}
    scored: list[tuple[float, float, int, CandidateRegion]] = []
    for i, cand in enumerate(candidates):
        scale = estimate_scale(cand.radius, query)
        key = round(scale, 6)
        if key not in cache:
            normalized = normalize_query(query, scale)
            cache[key] = compute_esf(normalized, cfg.esf_samples, seed=cfg.seed)
        similarity = descriptor_distance(cand.descriptor, cache[key])
        scored.append((similarity, cand.radius, i, replace(cand, scale=scale, similarity=similarity)))
    scored.sort(key=lambda t: (t[0], t[1], t[2]))
    return [c for _, _, _, c in scored[: cfg.top_k]]


# ---------------------------------------------------------------------------
# candidate cache file
# ---------------------------------------------------------------------------

def save_candidates_csv(candidates: list[CandidateRegion], path) -> None:
    """CSV rows: center x, y, z, radius, then the 640 descriptor values."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        for cand in candidates:
            row = [f"{v:.17g}" for v in (*cand.center, cand.radius)]
            row += [f"{v:.17g}" for v in cand.descriptor]
            writer.writerow(row)


def load_candidates_csv(path, scene: PointCloud, index: SpatialIndex) -> list[CandidateRegion]:
    """Rebuild candidate regions from a cache file by re-cropping the scene."""
    out: list[CandidateRegion] = []
    with open(path, "r", newline="", encoding="ascii") as fh:
        for rownum, row in enumerate(csv.reader(fh)):
            if len(row) != 4 + ESF_LENGTH:
                raise DataError(
                    f"{path}: row {rownum}: expected {4 + ESF_LENGTH} fields, got {len(row)}"
                )
            vals = np.asarray([float(v) for v in row], dtype=np.float64)
            center, radius, desc = vals[:3], float(vals[3]), vals[4:]
            members = index.within_radius(center, radius)
            out.append(
                CandidateRegion(
                    center=center,
                    radius=radius,
                    cloud=PointCloud(scene.points[members], id=scene.id),
                    descriptor=desc,
                    indices=members,
                )
            )
    return out
