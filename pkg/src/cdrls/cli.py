"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (config, arguments, data), 2 runtime or
numerical failure. ``CDRLS_SEED`` in the environment overrides the master seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import harness
from .config import load_config
from .errors import CdrlsError, ConfigError, DeviationError, ValidationError
from .rng_stats import calibrate_tau

SEED_ENV = "CDRLS_SEED"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(path):
    cfg = load_config(path)
    raw = os.environ.get(SEED_ENV)
    if raw is not None and raw.strip():
        try:
            seed = int(raw)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer (got {raw!r})") from None
        cfg = cfg.replace(seed=seed)
    return cfg


def _default_out(config_path, suffix=""):
    return Path("out") / (Path(config_path).stem + suffix)


def cmd_simulate(args):
    cfg = _config(args.config)
    out = Path(args.out) if args.out else _default_out(args.config)
    results = harness.simulate(cfg, out, workers=args.workers)
    for kind, agg in results.items():
        print(f"{kind}: T={agg.effective_T} smrd(T)={agg.smrd_at_T!r}")
    print(f"wrote {out}")


def cmd_sweep(args):
    cfg = _config(args.config)
    values = harness.parse_sweep_values(args.param, args.values)
    out = Path(args.out) if args.out else _default_out(args.config, f"_sweep_{args.param}")
    rows = harness.sweep(cfg, args.param, values, out, workers=args.workers)
    for row in rows:
        flags = f" [{row['flags']}]" if row["flags"] else ""
        print(f"{row['algorithm']} {args.param}={row['value']}: smrd(T)={row['smrd_at_T']!r}{flags}")
    print(f"wrote {out / 'sweep_summary.csv'}")


def cmd_compare_forms(args):
    cfg = _config(args.config)
    out = Path(args.out) if args.out else _default_out(args.config, "_compare")
    result = harness.compare_forms(cfg, out)
    print(f"max deviation {result.max_deviation:.3e} <= {result.tolerance:g}: pass")


def cmd_calibrate(args):
    try:
        tau = calibrate_tau(args.pi_star)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    print(f"{tau:.6f}")


def cmd_ingest(args):
    report = harness.ingest(args.csv, args.x_col, args.feature_cols, args.max_records, J=args.J)
    for line in report.lines():
        print(line)
    if not report.normalized_ok:
        raise ValidationError("normalized columns fail the zero-mean / unit-std check")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdrls", description="Censored decentralized RLS experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="Monte Carlo runs of the configured algorithms")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="repeat simulate over a parameter grid")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=sorted(harness.SWEEP_PARAMS))
    p.add_argument("--values", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare-forms", help="check the two D-RLS formulations agree")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare_forms)

    p = sub.add_parser("calibrate", help="censoring threshold for a target censoring ratio")
    p.add_argument("pi_star", type=float)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ingest", help="validate a regression CSV and report its statistics")
    p.add_argument("csv")
    p.add_argument("--x-col", type=int, required=True)
    p.add_argument("--feature-cols", type=_int_list, required=True)
    p.add_argument("--max-records", type=int)
    p.add_argument("--J", type=int, default=15)
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise ConfigError(f"workers must be >= 1 (got {args.workers})")
        args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DeviationError as exc:
        print(f"fail: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CdrlsError, OSError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
