"""Command-line front end for the experiment harness.

Subcommands: price (one experiment), table (several configs into one
CSV), histogram (proxy vs. LS stop-time differences), oracle (exact
small-tree verification) and fit-martingale (persist fitted
coefficients for reuse via --martingale-file).
"""

from __future__ import annotations

import argparse
import sys

from .dual_martingale import load_martingale, save_martingale
from .harness import (
    WeakDualityError,
    fit_martingale_for,
    load_config,
    run_experiment,
    run_histogram,
    run_oracle_suite,
    write_histogram_csv,
    write_result_csv,
)


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise SystemExit(f"--set expects section.key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def _add_config_arguments(sub, multiple=False):
    if multiple:
        sub.add_argument("configs", nargs="+", help="experiment config files")
    else:
        sub.add_argument("config", help="experiment config file")
    sub.add_argument(
        "--set",
        dest="overrides",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override a config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualcv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_price = sub.add_parser("price", help="run one experiment and print/write the result rows")
    _add_config_arguments(p_price)
    p_price.add_argument("--out", help="write the result CSV here")
    p_price.add_argument("--martingale-file", help="reuse previously fitted coefficients")
    p_price.add_argument("--refresh-q1", action="store_true", help="refit the martingale every run")

    p_table = sub.add_parser("table", help="run several configs and emit one combined CSV")
    _add_config_arguments(p_table, multiple=True)
    p_table.add_argument("--out", required=True, help="combined result CSV path")

    p_hist = sub.add_parser("histogram", help="histogram of proxy minus LS1 stop times")
    _add_config_arguments(p_hist)
    p_hist.add_argument("--out", required=True, help="two-column CSV (difference, count)")
    p_hist.add_argument("--martingale-file", help="reuse previously fitted coefficients")

    p_oracle = sub.add_parser("oracle", help="run the exact binomial-tree verification suite")

    p_fit = sub.add_parser("fit-martingale", help="fit the dual martingale and persist it")
    _add_config_arguments(p_fit)
    p_fit.add_argument("--martingale-file", required=True, help="destination coefficient file")

    return parser


def _print_rows(rows):
    header = f"{'method':<12} {'price':>10} {'stddev':>10} {'lambda':>8} {'dual':>10} {'dual sd':>10}"
    print(header)
    for row in rows:
        std = f"{row.stddev:.4f}" if row.stddev is not None else "   n/a"
        lam = f"{row.lam:.4f}" if row.lam is not None else "   -"
        dsd = f"{row.dual_stddev:.4f}" if row.dual_stddev is not None else "   n/a"
        print(f"{row.method:<12} {row.price:>10.4f} {std:>10} {lam:>8} {row.dual_price:>10.4f} {dsd:>10}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle":
            report = run_oracle_suite()
            print(report)
            return 0 if report.all_passed else 1

        overrides = _overrides(getattr(args, "overrides", None))
        if getattr(args, "refresh_q1", False):
            overrides["algorithm.refresh_q1"] = "true"

        if args.command == "price":
            config = load_config(args.config, overrides)
            dm = load_martingale(args.martingale_file) if args.martingale_file else None
            result = run_experiment(config, martingale=dm)
            _print_rows(result.rows)
            if args.out:
                write_result_csv(result.rows, args.out)
            return 0

        if args.command == "table":
            rows = []
            for path in args.configs:
                config = load_config(path, overrides)
                rows.extend(run_experiment(config).rows)
            write_result_csv(rows, args.out)
            print(f"wrote {len(rows)} rows to {args.out}")
            return 0

        if args.command == "histogram":
            config = load_config(args.config, overrides)
            dm = load_martingale(args.martingale_file) if args.martingale_file else None
            diffs, counts = run_histogram(config, martingale=dm)
            write_histogram_csv(diffs, counts, args.out)
            print(f"wrote histogram to {args.out}")
            return 0

        if args.command == "fit-martingale":
            config = load_config(args.config, overrides)
            dm = fit_martingale_for(config)
            save_martingale(dm, args.martingale_file)
            print(f"saved coefficients to {args.martingale_file}")
            return 0
    except (ValueError, WeakDualityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
