"""Command-line entry point: ``vesicle-pf run|presets|verify|resume``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .oracles import verify_suite
from .runner import EXIT_CONFIG, EXIT_OK, ConfigError, execute, load_run, parse_config
from .scenarios import presets_list


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="catalog preset name (see `presets`)")
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", type=int, metavar="N", help="override grid to N^3 points")
    p.add_argument("--dt", type=float)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--scheme", choices=("forward_euler", "semi_implicit", "fully_implicit", "backward_euler"))
    p.add_argument("--snapshot-every", type=int, metavar="N")
    p.add_argument("--diag-every", type=int, metavar="N")
    p.add_argument("--checkpoint-every", type=int, metavar="N")
    p.add_argument("--formats", nargs="+", choices=("raw", "vti"), help="snapshot formats")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, e.g. params.dA0=0.2 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vesicle-pf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset or config to steady state")
    _add_run_flags(run)

    sub.add_parser("presets", help="print the preset catalog as JSON")

    verify = sub.add_parser("verify", help="run the quick oracle suite")
    verify.add_argument("--report", type=Path, default=Path("verify_report.json"))
    verify.add_argument("--seed", type=int, default=0)

    resume = sub.add_parser("resume", help="continue a run from its checkpoint")
    resume.add_argument("run_dir", type=Path)
    resume.add_argument("--max-steps", type=int, help="new step budget")
    return parser


def _flags(args) -> dict:
    return {
        "out": args.out,
        "grid": args.grid,
        "integrator.dt": args.dt,
        "integrator.scheme": args.scheme,
        "stopping.max_steps": args.max_steps,
        "output.snapshot_every": args.snapshot_every,
        "output.diag_every": args.diag_every,
        "output.checkpoint_every": args.checkpoint_every,
        "output.formats": args.formats,
    }


def _report(outcome, out) -> int:
    if outcome.status != EXIT_OK:
        print(f"error: {outcome.message} (artifacts in {out})", file=sys.stderr)
    else:
        state = "converged" if outcome.converged else f"stopped ({outcome.reason})"
        print(f"{state} after {outcome.steps} steps; artifacts in {out}")
    return outcome.status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "presets":
        print(json.dumps(presets_list(), indent=2))
        return EXIT_OK

    if args.command == "verify":
        results = verify_suite(seed=args.seed)
        for r in results:
            print(r.line())
        report = {"passed": all(r.passed for r in results),
                  "checks": [{"name": r.name, "value": r.value, "tolerance": r.tolerance,
                              "passed": r.passed, "detail": r.detail} for r in results]}
        args.report.write_text(json.dumps(report, indent=2))
        print(f"report written to {args.report}")
        return EXIT_OK if report["passed"] else 1

    try:
        if args.command == "run":
            if not args.preset and not args.config:
                raise ConfigError("preset", "give --preset or --config")
            cfg = parse_config(args.config, args.preset, args.overrides, _flags(args))
            return _report(execute(cfg), cfg.out)
        cfg = load_run(args.run_dir, args.max_steps)
        return _report(execute(cfg, resume=True), cfg.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
