"""Command line entry point.

Exit status is 0 on success, 1 on usage, configuration or file errors and
2 on numerical failure (non-finite integration, non-SPD covariance, singular
system, diverged optimizer).
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import Diverged, FormatError, NonFinite, NotSPD, SdeDriftError, SingularSystem
from .config import load_config
from .experiment import StageError, fit, make_grid, run_experiment, score, simulate, write_report
from .persistence import load_ensemble, load_model, save_ensemble, save_model
from .presets import PRESETS, get_preset

NUMERICAL = (NonFinite, NotSPD, SingularSystem, Diverged, FloatingPointError, ArithmeticError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdedrift", description="Drift identification for SDE trajectory ensembles.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate an ensemble and write the trajectory file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("fit", help="fit a drift model to a trajectory file")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--model-out", required=True)

    s = sub.add_parser("evaluate", help="score a model against the configured true drift")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--report", required=True)

    s = sub.add_parser("reproduce", help="run a preset end to end")
    s.add_argument("preset", choices=sorted(PRESETS))
    s.add_argument("--scale", type=int, help="number of trajectories M")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default=None, help="output directory (default: runs/<preset>)")
    s.add_argument("--no-data", action="store_true", help="skip writing the trajectory file")

    sub.add_parser("list-presets", help="list the available presets")
    return p


def _cmd_simulate(args):
    cfg = load_config(args.config)
    save_ensemble(simulate(cfg), args.out)


def _cmd_fit(args):
    cfg = load_config(args.config)
    ens = load_ensemble(args.data, cfg.d)
    save_model(fit(cfg, ens), args.model_out)


def _cmd_evaluate(args):
    cfg = load_config(args.config)
    ens = load_ensemble(args.data, cfg.d)
    if ens.grid != make_grid(cfg):
        logging.getLogger(__name__).warning("data time grid differs from the configured grid")
    model = load_model(args.model)
    result, _ = score(cfg, ens, model)
    write_report({"name": cfg.name, **result}, args.report)


def _cmd_reproduce(args):
    preset = get_preset(args.preset)
    cfg = preset.config
    changes = {"workers": args.workers}
    if args.scale is not None:
        changes["M"] = args.scale
    if args.seed is not None:
        changes["seed"] = args.seed
    cfg = cfg.replace(**changes)
    if args.no_data:
        cfg.output = type(cfg.output)(save_data=False)
    out = args.out or f"runs/{preset.name}"
    report = run_experiment(cfg, out, preset.reference, preset.bands)
    m = report["metrics"]
    print(f"{preset.name}: M={cfg.M} seed={cfg.seed}")
    print(f"  relative L2(rho) error     {m['relative_l2_rho']:.6g}")
    if "relative_l2_rho_central" in m:
        print(f"  ... central 90% range      {m['relative_l2_rho_central']:.6g}")
    te = m["relative_trajectory_error"]
    print(f"  relative trajectory error  {te['mean']:.6g} +- {te['std']:.6g}")
    for w in m["wasserstein"]:
        print(f"  W1 at t={w['t']:<5g}             {w['distance']:.4g}")
    for name, chk in report.get("bands", {}).items():
        print(f"  [{'PASS' if chk['pass'] else 'FAIL'}] {name} <= {chk['limit']}")
    print(f"  outputs written to {out}")


def _cmd_list(args):
    for name, p in PRESETS.items():
        print(f"{name:15s} d={p.config.d}  {p.description}")


COMMANDS = {"simulate": _cmd_simulate, "fit": _cmd_fit, "evaluate": _cmd_evaluate,
            "reproduce": _cmd_reproduce, "list-presets": _cmd_list}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc.cause, NUMERICAL) else 1
    except NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (FormatError, SdeDriftError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
