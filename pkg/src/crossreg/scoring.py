"""Residual error of a registration, scale-penalized final score, and
re-ranking with a rank cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .cloud import PointCloud, SimilarityTransform, SpatialIndex, apply_transform
from .coarse import CandidateRegion
from .errors import ConfigError, DataError
from .registration import RegistrationResult


@dataclass(frozen=True)
class ScoringConfig:
    alpha: float = 25.0
    cutoff: int = 5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.cutoff < 1:
            raise ConfigError(f"cutoff must be >= 1, got {self.cutoff}")


@dataclass(frozen=True)
class RankedMatch:
    candidate: CandidateRegion
    result: RegistrationResult
    rank: int


def residual_error(
    scene_region: PointCloud,
    query_original: PointCloud,
    transform: SimilarityTransform,
    index: SpatialIndex | None = None,
) -> float:
    """Mean distance from each region point to its nearest transformed
    query point.

    Computed on the original (non-downsampled) clouds; `index` may carry
    a prebuilt SpatialIndex over the transformed query.
    """
    scene_region.require_nonempty("residual_error")
    query_original.require_nonempty("residual_error")
    if index is None:
        index = SpatialIndex(apply_transform(query_original, transform))
    dists, _ = index.query_batch(scene_region.points)
    return float(dists.mean())


def final_score(r_score: float, scale: float, cfg: ScoringConfig) -> float:
    """Residual damped by the scale penalty exp(-scale^2 / alpha)."""
    if r_score < 0:
        raise DataError(f"r_score must be non-negative, got {r_score}")
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale}")
    return math.exp(-(scale * scale) / cfg.alpha) * r_score


def rerank(
    matches: list[tuple[CandidateRegion, RegistrationResult]],
    cfg: ScoringConfig,
) -> list[RankedMatch]:
    """Sort ascending by final score and keep the best cfg.cutoff.

    Ties break by smaller residual, then smaller candidate radius, then
    input order. Ranks run 1..n.
    """
    if not matches:
        raise DataError("rerank: no matches")
    order = sorted(
        range(len(matches)),
        key=lambda i: (
            matches[i][1].final_score,
            matches[i][1].r_score,
            matches[i][0].radius,
            i,
        ),
    )
    return [
        RankedMatch(candidate=matches[i][0], result=matches[i][1], rank=rank)
        for rank, i in enumerate(order[: cfg.cutoff], start=1)
    ]
