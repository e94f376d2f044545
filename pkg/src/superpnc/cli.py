"""Command-line interface.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .drive import PRESETS
from .dynamics import NumericalError, write_trajectory_csv
from .harness import (
    ConfigError,
    RunConfig,
    SweepSpec,
    apply_overrides,
    load_config,
    optimize_re_area,
    parse_number,
    phonon_comparison,
    simulate,
    sweep,
    theta_grid,
)
from .observables import integrate_metrics, metrics_to_csv_row
from .phonons.bath import QuadratureError
from .phonons.process_tensor import BondDimensionError

log = logging.getLogger("superpnc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _number(text: str) -> float:
    try:
        return parse_number(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", nargs="?", help="key = value configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named parameter set")
    p.add_argument("--no-phonons", action="store_true", help="disable the phonon bath")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one configuration key (repeatable)")


def _grid_args(p: argparse.ArgumentParser, default_param: str | None) -> None:
    if default_param is None:
        p.add_argument("--param", required=True, help="theta1, theta2, theta_re or a dotted config key")
    else:
        p.add_argument("--param", default=default_param)
    p.add_argument("--from", dest="start", type=_number, required=True)
    p.add_argument("--to", dest="stop", type=_number, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: all CPUs)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="superpnc", description="QD-cavity photon-number coherence simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="propagate one configuration")
    _common(p)
    p.add_argument("-o", "--output", help="trajectory CSV path")
    p.add_argument("--metrics", help="integrated metrics CSV path")

    p = sub.add_parser("sweep", help="scan one parameter")
    _common(p)
    _grid_args(p, None)
    p.add_argument("-o", "--output", help="sweep CSV path")

    p = sub.add_parser("optimize-re", help="tune a resonant pulse area")
    _common(p)
    _grid_args(p, "theta_re")
    p.add_argument("-o", "--output", help="metrics CSV path of the optimum")

    p = sub.add_parser("compare-phonons", help="sweep with and without phonons")
    _common(p)
    _grid_args(p, None)
    p.add_argument("-o", "--output", required=True,
                   help="CSV path; writes <stem>_phonons.csv and <stem>_no_phonons.csv")

    p = sub.add_parser("validate-config", help="check a configuration file")
    p.add_argument("config")
    return parser


def _load(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "preset", None):
        cfg = apply_overrides(cfg, {"preset": args.preset})
    if args.config:
        try:
            cfg = load_config(args.config, cfg)
        except OSError as e:
            raise ConfigError(f"cannot read {args.config}: {e}") from None
    sets = {}
    for item in getattr(args, "set", []):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        sets[key.strip()] = value.strip()
    if sets:
        cfg = apply_overrides(cfg, sets)
    if getattr(args, "no_phonons", False):
        cfg = cfg.with_phonons(False)
    return cfg


def _sibling(path: str, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(f"{p.stem}_{suffix}{p.suffix or '.csv'}")


def _run(args) -> int:
    if args.command == "validate-config":
        cfg = load_config(args.config)
        print(f"{args.config}: OK ({len(cfg.drive.pulses)} pulse(s), phonons "
              f"{'on' if cfg.phonons.enabled else 'off'})")
        return EXIT_OK

    cfg = _load(args)
    if args.command == "simulate":
        traj = simulate(cfg)
        m = integrate_metrics(traj)
        out = args.output or cfg.output.trajectory
        if out:
            write_trajectory_csv(traj, out)
        metrics_path = args.metrics or cfg.output.metrics
        if metrics_path:
            Path(metrics_path).write_text(metrics_to_csv_row(m))
        sys.stdout.write(metrics_to_csv_row(m))
        return EXIT_OK

    grid = theta_grid(args.start, args.stop, args.points)
    try:
        spec = SweepSpec(args.param, grid, cfg, phonons=cfg.phonons.enabled)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    if args.command == "sweep":
        res = sweep(spec, args.workers)
        out = args.output or cfg.output.sweep
        if out:
            res.write_csv(out)
        print(f"{len(res.rows)} rows, {len(res.failed)} failed" + (f", written to {out}" if out else ""))
        return EXIT_NUMERICAL if len(res.failed) == len(res.rows) else EXIT_OK

    if args.command == "optimize-re":
        opt = optimize_re_area(cfg, grid, param=args.param, phonons=cfg.phonons.enabled, workers=args.workers)
        if args.output:
            Path(args.output).write_text(metrics_to_csv_row(opt.metrics))
        print(f"theta = {opt.theta:.6f} rad ({opt.theta / 3.141592653589793:.4f} pi), "
              f"objective = {opt.objective:.6g} ps")
        sys.stdout.write(metrics_to_csv_row(opt.metrics))
        return EXIT_OK

    if args.command == "compare-phonons":
        comp = phonon_comparison(spec, args.workers)
        comp.with_phonons.write_csv(_sibling(args.output, "phonons"))
        comp.without_phonons.write_csv(_sibling(args.output, "no_phonons"))
        print(f"rho_XX reduction spread {comp.relative_spread('snapshot_rhoXX_10ps'):.3f}, "
              f"|rho_GX| reduction spread {comp.relative_spread('snapshot_absGX_10ps'):.3f}")
        return EXIT_OK
    raise _UsageError(f"unknown command {args.command}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"superpnc: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, _UsageError) as e:
        print(f"superpnc: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, BondDimensionError, QuadratureError) as e:
        print(f"superpnc: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"superpnc: invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
