"""End-to-end pipeline: candidate generation, scale normalization,
descriptor matching, per-candidate fine registration, scoring, and
re-ranking, with a JSON report and per-match PLY output.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cloud import (
    PointCloud,
    SimilarityTransform,
    SpatialIndex,
    apply_transform,
    derive_seed,
    load_ply,
    remove_statistical_outliers,
    save_ply,
)
from .coarse import (
    CandidateRegion,
    MatchConfig,
    generate_candidates,
    load_candidates_csv,
    save_candidates_csv,
    scale_normalization_transform,
    top_k_matches,
)
from .errors import ConfigError, StageError
from .registration import (
    RegistrationConfig,
    RegistrationResult,
    icp_register,
    jrmpc_register,
)
from .scoring import RankedMatch, ScoringConfig, final_score, rerank, residual_error
from .synthetic import region_is_hit

log = logging.getLogger(__name__)

REPORT_VERSION = 1

METHODS = ("gmm", "icp")


@dataclass(frozen=True)
class PipelineConfig:
    scene_path: str
    query_path: str
    output_dir: str
    match: MatchConfig = field(default_factory=MatchConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    threads: int = 1
    method: str = "gmm"
    cache_path: str | None = None
    trace_dir: str | None = None
    preclean: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")

    def echo(self) -> dict:
        """Result-affecting configuration for the report (execution
        details like thread count and output paths are omitted so reruns
        compare byte-identical)."""
        return {
            "scene_path": self.scene_path,
            "query_path": self.query_path,
            "method": self.method,
            "preclean": self.preclean,
            "match": {
                "radii": list(self.match.radii),
                "regions_per_scale": self.match.regions_per_scale,
                "top_k": self.match.top_k,
                "esf_samples": self.match.esf_samples,
                "seed": self.match.seed,
                "min_region_points": self.match.min_region_points,
            },
            "registration": {
                "n_components": self.registration.n_components,
                "max_iterations": self.registration.max_iterations,
                "tol": self.registration.tol,
                "outlier_weight": self.registration.outlier_weight,
                "downsample_max": self.registration.downsample_max,
                "seed": self.registration.seed,
            },
            "scoring": {
                "alpha": self.scoring.alpha,
                "cutoff": self.scoring.cutoff,
            },
        }


@dataclass
class PipelineReport:
    config: dict
    coverage: float
    n_candidates: int
    matches: list[RankedMatch]
    timings: dict
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "config": self.config,
            "coverage": self.coverage,
            "n_candidates": self.n_candidates,
            "warnings": self.warnings,
            "matches": [
                {
                    "rank": m.rank,
                    "center": m.candidate.center.tolist(),
                    "radius": m.candidate.radius,
                    "scale": m.candidate.scale,
                    "similarity": m.candidate.similarity,
                    "r_score": m.result.r_score,
                    "final_score": m.result.final_score,
                    "iterations": m.result.iterations,
                    "converged": m.result.converged,
                    "transform": m.result.transform.matrix().tolist(),
                }
                for m in self.matches
            ],
            "timings": self.timings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(self.to_json())


def _register_task(args) -> RegistrationResult:
    (region_pts, query_pts, scale, method, reg_cfg, scoring_cfg) = args
    region = PointCloud(region_pts, id="region")
    query = PointCloud(query_pts, id="query")
    norm_t = scale_normalization_transform(query, scale)
    query_n = apply_transform(query, norm_t)
    if method == "gmm":
        out = jrmpc_register(region, query_n, reg_cfg, pre_transform=norm_t)
        transform, trace = out.transform, out.loglik_trace
        iterations, converged = out.iterations, out.converged
    else:
        rigid = icp_register(
            region, query_n, max_iterations=reg_cfg.max_iterations, tol=reg_cfg.tol
        )
        transform = rigid.compose(norm_t)
        trace = np.empty(0)
        iterations, converged = 0, True
    r = residual_error(region, query, transform)
    return RegistrationResult(
        transform=transform,
        r_score=r,
        final_score=final_score(r, scale, scoring_cfg),
        iterations=iterations,
        loglik_trace=trace,
        converged=converged,
    )


def register_candidates(
    candidates: list[CandidateRegion],
    query: PointCloud,
    reg_cfg: RegistrationConfig,
    scoring_cfg: ScoringConfig,
    method: str = "gmm",
    pool=None,
) -> list[RegistrationResult]:
    """Fine-register the query to every candidate (already scale-scored by
    top_k_matches). Each run gets a seed derived from the candidate's
    position in the list, so results do not depend on scheduling."""
    tasks = [
        (
            cand.cloud.points,
            query.points,
            cand.scale,
            method,
            replace(reg_cfg, seed=derive_seed(reg_cfg.seed, i)),
            scoring_cfg,
        )
        for i, cand in enumerate(candidates)
    ]
    if pool is None:
        return [_register_task(t) for t in tasks]
    return list(pool.map(_register_task, tasks))


def _coverage(scene: PointCloud, candidates: list[CandidateRegion]) -> float:
    covered = np.zeros(len(scene), dtype=bool)
    for cand in candidates:
        covered[cand.indices] = True
    return float(covered.mean())


def run_on_clouds(
    scene: PointCloud,
    query: PointCloud,
    cfg: PipelineConfig,
    output_dir: str | None = None,
) -> PipelineReport:
    """Run the full pipeline on in-memory clouds.

    When output_dir is given, writes report.json, one transformed-query
    PLY per ranked match, the optional candidate cache, and the optional
    per-candidate likelihood traces. On a stage failure the partial
    report collected so far is flushed to report-partial.json.
    """
    timings: dict[str, float] = {}
    warnings: list[str] = []
    partial: dict = {"config": cfg.echo()}
    pool = None
    stage = "setup"
    try:
        if cfg.threads > 1:
            pool = ProcessPoolExecutor(max_workers=cfg.threads)

        stage = "preclean"
        t0 = time.perf_counter()
        if cfg.preclean:
            scene = remove_statistical_outliers(scene)
            query = remove_statistical_outliers(query)
        index = SpatialIndex(scene)
        timings["preclean"] = time.perf_counter() - t0

        stage = "candidates"
        t0 = time.perf_counter()
        if cfg.cache_path and os.path.exists(cfg.cache_path):
            candidates = load_candidates_csv(cfg.cache_path, scene, index)
        else:
            candidates = generate_candidates(scene, index, cfg.match, pool=pool)
            if cfg.cache_path:
                save_candidates_csv(candidates, cfg.cache_path)
        expected = len(cfg.match.radii) * cfg.match.regions_per_scale
        if len(candidates) < expected:
            warnings.append(
                f"candidate generation found {len(candidates)} of {expected} regions"
            )
        coverage = _coverage(scene, candidates)
        partial["n_candidates"] = len(candidates)
        partial["coverage"] = coverage
        timings["candidates"] = time.perf_counter() - t0

        stage = "match"
        t0 = time.perf_counter()
        top = top_k_matches(candidates, query, cfg.match)
        partial["top_k"] = [
            {"center": c.center.tolist(), "radius": c.radius, "similarity": c.similarity}
            for c in top
        ]
        timings["match"] = time.perf_counter() - t0

        stage = "register"
        t0 = time.perf_counter()
        results = register_candidates(
            top, query, cfg.registration, cfg.scoring, method=cfg.method, pool=pool
        )
        timings["register"] = time.perf_counter() - t0

        stage = "rerank"
        t0 = time.perf_counter()
        ranked = rerank(list(zip(top, results)), cfg.scoring)
        timings["rerank"] = time.perf_counter() - t0

        stage = "report"
        t0 = time.perf_counter()
        report = PipelineReport(
            config=cfg.echo(),
            coverage=coverage,
            n_candidates=len(candidates),
            matches=ranked,
            timings=timings,
            warnings=warnings,
        )
        if output_dir is not None:
            os.makedirs(output_dir, exist_ok=True)
            for m in ranked:
                save_ply(
                    apply_transform(query, m.result.transform),
                    os.path.join(output_dir, f"match_{m.rank}.ply"),
                )
            if cfg.trace_dir:
                os.makedirs(cfg.trace_dir, exist_ok=True)
                for i, res in enumerate(results):
                    trace_path = os.path.join(cfg.trace_dir, f"candidate_{i:02d}_loglik.csv")
                    with open(trace_path, "w", encoding="ascii") as fh:
                        fh.write("iteration,loglik\n")
                        for it, ll in enumerate(res.loglik_trace, start=1):
                            fh.write(f"{it},{ll:.17g}\n")
        timings["report"] = time.perf_counter() - t0
        if output_dir is not None:
            report.save(os.path.join(output_dir, "report.json"))
        return report
    except Exception as exc:
        if output_dir is not None:
            try:
                os.makedirs(output_dir, exist_ok=True)
                partial["failed_stage"] = stage
                partial["error"] = str(exc)
                with open(os.path.join(output_dir, "report-partial.json"), "w") as fh:
                    json.dump(partial, fh, indent=2, sort_keys=True, default=str)
            except OSError:
                log.exception("could not flush partial report")
        if isinstance(exc, StageError):
            raise
        raise StageError(stage, exc) from exc
    finally:
        if pool is not None:
            pool.shutdown()


def run_pipeline(cfg: PipelineConfig) -> PipelineReport:
    """Load the scene and query PLYs and run the pipeline, writing all
    outputs into cfg.output_dir."""
    try:
        scene = load_ply(cfg.scene_path)
        query = load_ply(cfg.query_path)
    except Exception as exc:
        raise StageError("load", exc) from exc
    return run_on_clouds(scene, query, cfg, output_dir=cfg.output_dir)


def evaluate_retrieval(
    report: PipelineReport | dict,
    truth_center,
    truth_radius: float,
    scene: PointCloud,
    index: SpatialIndex | None = None,
) -> dict:
    """Rank-5 hit statistics of a report against the ground-truth region.

    A ranked match is a hit iff its region covers >= 90% of the truth
    region's points with < 10% background contamination.
    """
    if isinstance(report, PipelineReport):
        data = report.to_dict()
    else:
        data = report
    if index is None:
        index = SpatialIndex(scene)
    hits = []
    for m in data["matches"]:
        hits.append(
            {
                "rank": m["rank"],
                "hit": region_is_hit(index, m["center"], m["radius"], truth_center, truth_radius),
            }
        )
    hit_ranks = [h["rank"] for h in hits if h["hit"]]
    return {
        "hits": hits,
        "hit_count": len(hit_ranks),
        "first_hit_rank": min(hit_ranks) if hit_ranks else None,
    }
