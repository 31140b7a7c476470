"""Command-line runner: ``depthlab <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 usage/config error, 2 numerical abort, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import pipeline
from .config import ConfigError, load_config
from .engine import NumericalAbort
from .gradcheck import run_gradcheck
from .imaging import RasterFormatError, ensure_dir

EXIT_OK, EXIT_CONFIG, EXIT_NAN, EXIT_VERIFY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors share the config-error exit code
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", metavar="PATH", help="run configuration JSON (defaults when omitted)")
    p.add_argument("--seed", type=int, metavar="N", help="override the config seed")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="depthlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="render a synthetic triplet dataset")
    _common(p)
    p.add_argument("--preset", help="scene preset (overrides config scene.preset)")
    p.add_argument("--count", type=int, help="number of triplets (overrides config scene.count)")

    p = sub.add_parser("augment", help="write augmented frames and a replayable plan echo")
    _common(p)
    p.add_argument("--dataset", required=True, metavar="DIR")
    p.add_argument("--plan", metavar="PATH", help="plan JSON: {pool, consistency} or a previous plan echo")

    p = sub.add_parser("optimize", help="optimise depth and poses of every triplet")
    _common(p)
    p.add_argument("--dataset", required=True, metavar="DIR")
    p.add_argument("--augmented", metavar="DIR", help="augmented frames; enables the augmented branch")

    p = sub.add_parser("eval", help="evaluate predicted depth against ground truth")
    _common(p)
    p.add_argument("--pred", required=True, metavar="DIR", help="directory with depth_<branch>_<i>.pfm")
    p.add_argument("--dataset", required=True, metavar="DIR")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    _common(p, out_required=False)
    p.add_argument("--trials", type=int, help="number of tie-free points (overrides config)")

    p = sub.add_parser("ablate", help="run the configured toggle matrix into one CSV")
    _common(p)
    p.add_argument("--dataset", metavar="DIR", help="existing dataset (generated under --out when omitted)")
    p.add_argument("--augmented", metavar="DIR", help="existing augmented frames (written under --out when omitted)")
    return parser


def _config(args):
    cfg = pipeline.with_overrides(load_config(args.config), args.seed)
    if args.command == "generate" and (args.preset is not None or args.count is not None):
        from dataclasses import replace

        scene = replace(cfg.scene, **{k: v for k, v in (("preset", args.preset), ("count", args.count)) if v is not None})
        cfg = replace(cfg, scene=scene)
    return cfg.validate()


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "generate":
            pipeline.run_generate(cfg, args.out)
        elif args.command == "augment":
            pipeline.run_augment(cfg, args.dataset, args.out, args.plan)
        elif args.command == "optimize":
            pipeline.run_optimize(cfg, args.dataset, args.out, args.augmented)
        elif args.command == "eval":
            pipeline.run_eval(cfg, args.pred, args.dataset, args.out)
        elif args.command == "ablate":
            pipeline.run_ablate(cfg, args.out, args.dataset, args.augmented)
        elif args.command == "gradcheck":
            trials = cfg.gradcheck_trials if args.trials is None else args.trials
            if trials < 0:
                raise ConfigError("trials must be non-negative")
            report = run_gradcheck(trials, seed=cfg.seed, tolerance=cfg.gradcheck_tolerance)
            text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
            if args.out is None:
                sys.stdout.write(text)
            else:
                with open(os.path.join(ensure_dir(args.out), "gradcheck.json"), "w") as fh:
                    fh.write(text)
                pipeline.write_config_echo(cfg, args.out)
            print(f"gradcheck: {len(report.points)} points, max rel {report.max_rel:.3e}, "
                  f"{'PASS' if report.passed else 'FAIL'}", file=sys.stderr)
            if not report.passed:
                return EXIT_VERIFY
    except NumericalAbort as exc:
        print(f"depthlab: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, FileNotFoundError, RasterFormatError, KeyError, ValueError) as exc:
        print(f"depthlab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
