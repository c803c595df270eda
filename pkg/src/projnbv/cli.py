"""Command line entry point: ``projnbv run|bench|eval-view``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import planner
from .config import ConfigError, RunConfig, load_config, parse_config
from .evaluator import score_view


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {"mesh_path": args.mesh}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.evaluator is not None:
        changes["evaluator"] = args.evaluator
    return cfg.replace(**changes)


def cmd_run(args) -> int:
    cfg = _config(args)
    state = planner.run(cfg, args.out)
    last = state.history[-1]
    print(f"{len(state.history)} iterations, coverage {last.coverage:.4f} "
          f"(observable {last.observable_coverage:.4f}), {last.point_count} points; outputs in {args.out}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    report = planner.bench(cfg, args.out)
    print("iteration  projection_s  raycast_s")
    for r in report["rows"]:
        print(f"{r['iteration']:9d}  {r['projection_s']:12.3f}  {r['raycast_s']:9.3f}")
    print(f"mean (iterations 2+): projection {report['projection_mean_s']:.3f}s, "
          f"raycast {report['raycast_mean_s']:.3f}s, speedup {report['speedup']:.2f}x")
    return 0


def cmd_eval_view(args) -> int:
    """Score one pose against a saved run directory (last scene unless --iteration)."""
    with open(os.path.join(args.state, "config.echo")) as fh:
        cfg = parse_config(fh.read())
    it = args.iteration
    if it is None:
        names = [n for n in os.listdir(os.path.join(args.state, "scene")) if n.startswith("iter_")]
        it = max(int(n[5:-5]) for n in names)
    with open(os.path.join(args.state, "scene", f"iter_{it}.json")) as fh:
        scene = planner.scene_from_json(json.load(fh))
    pose = planner.pose_from_six(args.pose)
    s = score_view(scene, pose, cfg.camera())
    out = {"iteration": it, "F": s.F, "eval_time_s": s.eval_time,
           "ellipsoids": [t.__dict__ for t in s.per_ellipsoid]}
    json.dump(out, sys.stdout, indent=2)
    print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="projnbv", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (("run", cmd_run, "scan a mesh with the planning loop"),
                               ("bench", cmd_bench, "time projection against ray-cast scoring")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--mesh", required=True)
        p.add_argument("--config")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--evaluator", choices=("projection", "raycast"))
        p.set_defaults(func=fn)
    p = sub.add_parser("eval-view", help="score a single pose against a saved run")
    p.add_argument("--state", required=True, help="run output directory")
    p.add_argument("--pose", required=True, type=float, nargs=6,
                   metavar=("PX", "PY", "PZ", "TX", "TY", "TZ"), help="camera position and look-at target")
    p.add_argument("--iteration", type=int)
    p.set_defaults(func=cmd_eval_view)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, planner.MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
