"""Command line interface.

Subcommands:
  run    -- full coarse-to-fine pipeline on a scene/query PLY pair
  synth  -- generate a synthetic scene + query with ground truth
  eval   -- rank-5 hit statistics of a report against a truth file

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .cloud import load_ply, save_ply
from .coarse import MatchConfig
from .errors import ConfigError, CrossregError, DataError, StageError
from .pipeline import PipelineConfig, evaluate_retrieval, run_pipeline
from .registration import RegistrationConfig
from .scoring import ScoringConfig
from .synthetic import SceneSpec, generate_synthetic_scene


def _parse_radii(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"could not parse radii list {text!r}")


def _cmd_run(args) -> int:
    match = MatchConfig(
        radii=_parse_radii(args.radii),
        regions_per_scale=args.per_scale,
        top_k=args.top_k,
        esf_samples=args.esf_samples,
        seed=args.seed,
    )
    registration = RegistrationConfig(
        n_components=args.gmm_k,
        max_iterations=args.max_iter,
        seed=args.seed,
    )
    scoring = ScoringConfig(alpha=args.alpha, cutoff=args.cutoff)
    cfg = PipelineConfig(
        scene_path=args.scene,
        query_path=args.query,
        output_dir=args.out,
        match=match,
        registration=registration,
        scoring=scoring,
        threads=args.threads,
        method=args.method,
        cache_path=args.cache,
        trace_dir=args.trace_dir,
        preclean=args.preclean,
    )
    report = run_pipeline(cfg)
    for m in report.matches:
        print(
            f"rank {m.rank}: center=({m.candidate.center[0]:.2f}, "
            f"{m.candidate.center[1]:.2f}, {m.candidate.center[2]:.2f}) "
            f"radius={m.candidate.radius:g} scale={m.candidate.scale:.4f} "
            f"r_score={m.result.r_score:.4f} final={m.result.final_score:.4f}"
        )
    print(f"report: {os.path.join(args.out, 'report.json')}")
    return 0


def _cmd_synth(args) -> int:
    spec = SceneSpec.from_json(args.spec)
    scene, query, truth, center, radius = generate_synthetic_scene(spec, args.seed)
    os.makedirs(args.out, exist_ok=True)
    scene_path = os.path.join(args.out, "scene.ply")
    query_path = os.path.join(args.out, "query.ply")
    save_ply(scene, scene_path)
    save_ply(query, query_path)
    truth_path = os.path.join(args.out, "truth.json")
    with open(truth_path, "w", encoding="ascii") as fh:
        json.dump(
            {
                "scene_ply": "scene.ply",
                "query_ply": "query.ply",
                "truth_center": list(center),
                "truth_radius": radius,
                "transform": truth.matrix().tolist(),
                "scale": truth.scale,
                "seed": args.seed,
                "spec": spec.to_dict(),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"scene: {scene_path} ({len(scene)} points)")
    print(f"query: {query_path} ({len(query)} points)")
    print(f"truth: {truth_path}")
    return 0


def _cmd_eval(args) -> int:
    with open(args.report, "r", encoding="ascii") as fh:
        report = json.load(fh)
    with open(args.truth, "r", encoding="ascii") as fh:
        truth = json.load(fh)
    scene_path = args.scene or os.path.join(os.path.dirname(args.truth), truth["scene_ply"])
    scene = load_ply(scene_path)
    stats = evaluate_retrieval(
        report, truth["truth_center"], truth["truth_radius"], scene
    )
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossreg",
        description="Detect and register a small query point cloud inside a large scene cloud.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the coarse-to-fine pipeline")
    run.add_argument("--scene", required=True, help="scene PLY path")
    run.add_argument("--query", required=True, help="query PLY path")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--radii", default="30,35,40,45,50,55,60",
                     help="comma-separated candidate sphere radii (meters)")
    run.add_argument("--per-scale", type=int, default=100, help="regions per radius")
    run.add_argument("--top-k", type=int, default=20, help="candidates kept after coarse matching")
    run.add_argument("--esf-samples", type=int, default=20000, help="descriptor sample triples")
    run.add_argument("--alpha", type=float, default=25.0, help="scale penalty parameter")
    run.add_argument("--cutoff", type=int, default=5, help="final rank cutoff")
    run.add_argument("--gmm-k", type=int, default=300, help="mixture component count")
    run.add_argument("--max-iter", type=int, default=100, help="registration iteration cap")
    run.add_argument("--threads", type=int, default=1, help="parallel worker processes")
    run.add_argument("--seed", type=int, default=0, help="master random seed")
    run.add_argument("--cache", default=None, help="candidate descriptor cache CSV")
    run.add_argument("--trace-dir", default=None, help="write per-candidate likelihood traces here")
    run.add_argument("--method", choices=("gmm", "icp"), default="gmm",
                     help="fine registration method (icp is the baseline)")
    run.add_argument("--preclean", action="store_true",
                     help="statistical outlier removal before the pipeline")
    run.set_defaults(func=_cmd_run)

    synth = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    synth.add_argument("--spec", required=True, help="scene spec JSON path")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--seed", type=int, default=0, help="random seed")
    synth.set_defaults(func=_cmd_synth)

    ev = sub.add_parser("eval", help="evaluate a report against ground truth")
    ev.add_argument("--report", required=True, help="report.json from a run")
    ev.add_argument("--truth", required=True, help="truth.json from synth")
    ev.add_argument("--scene", default=None, help="override scene PLY path")
    ev.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, ConfigError) else 3
    except (DataError, CrossregError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
