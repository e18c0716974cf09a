"""Command-line entry point: ``dcctrack {solve,backtest,check-conditions,synth}``.

Exit status 0 on success, 2 for configuration and validation errors, 3 for
numerical failures. Failures print ``error_code=<name>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dcc
from . import io as dio
from .backtest import METHODS, MethodSpec, make_schedule, run_backtest
from .baselines import backward_selection, forward_selection
from .errors import ConfigError, InfeasibleConstraintConfig, TrackingError
from .model import DEFAULT_EPS, DccParams, validate_panel
from .solver import full_replication, partial_replication_dcc


class _Parser(argparse.ArgumentParser):
    """Argument errors become :class:`ConfigError` so they share the exit path."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _a_value(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def _add_model_flags(p, method_choices):
    p.add_argument("--data", type=Path, help="price CSV with header date,TICKER1,...")
    p.add_argument("--target", default=None, help=f"column holding the index prices (default {dio.INDEX_TICKER})")
    p.add_argument("--target-data", type=Path, default=None, help="separate CSV for the index column")
    p.add_argument("--method", choices=method_choices, default=None, help="fitting method (default dcc)")
    p.add_argument("--k", type=int, default=None, help="cardinality bound K")
    p.add_argument(
        "--a", type=_a_value, default=None,
        help="steepness: a number, 'auto' for the smallest a meeting C0-C2, "
        "or omitted for the tolerance-matched value",
    )
    p.add_argument("--eps", type=float, default=None, help=f"cutoff (default {DEFAULT_EPS:g})")
    p.add_argument("--variant", choices=("sigmoid", "rational"), default=None)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--no-timings", action="store_true", help="leave wall times out of summary.json")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="dcctrack", description="Sparse index tracking with smooth cardinality constraints.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="one fit on the whole data span", formatter_class=fmt)
    _add_model_flags(p, METHODS)

    p = sub.add_parser("backtest", help="rolling refits with quarterly holds", formatter_class=fmt)
    p.add_argument("--config", type=Path, default=None, help="INI file with a [run] section; flags override it")
    _add_model_flags(p, METHODS + ("all",))
    p.add_argument("--lookback", type=int, default=None, help="fitting window in rows (default 252)")
    p.add_argument("--rebalance", type=int, default=None, help="hold span in rows (default 63)")
    p.add_argument("--jobs", type=int, default=None, help="windows fitted in parallel (default 1)")

    p = sub.add_parser("check-conditions", help="conditions C0-C2 on the steepness a", formatter_class=fmt)
    p.add_argument("--n", type=int, required=True, help="number of assets N")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--a", type=float, default=None, help="steepness to check; omitted prints the minimal a")
    p.add_argument("--scan", default=None, help="lo:hi:steps grid of a written to conditions.csv")
    p.add_argument("--log", action="store_true", help="space the scan grid geometrically")
    p.add_argument("--out", type=Path, default=Path("."), help="directory for conditions.csv")

    p = sub.add_parser("synth", help="synthetic prices with a planted sparse index", formatter_class=fmt)
    p.add_argument("--n", type=int, required=True, help="number of stocks")
    p.add_argument("--d", type=int, required=True, help="number of daily returns")
    p.add_argument("--sparse-k", type=int, required=True, help="stocks held by the index")
    p.add_argument("--noise", type=float, default=0.002, help="std of the Gaussian noise on index returns")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="price CSV to write; truth goes to <stem>_truth.csv")
    return parser


# ---------------------------------------------------------------------------
# commands


def _config(args, base: Optional[dio.RunConfig] = None) -> dio.RunConfig:
    cfg = base or dio.RunConfig()
    overrides = {
        "data_path": args.data,
        "target_path": args.target_data,
        "method": args.method,
        "K": args.k,
        "eps": args.eps,
        "variant": args.variant,
        "max_iterations": args.max_iterations,
        "output_dir": args.out,
        "lookback_days": getattr(args, "lookback", None),
        "rebalance_days": getattr(args, "rebalance", None),
        "jobs": getattr(args, "jobs", None),
    }
    kw = {k: v for k, v in overrides.items() if v is not None}
    if args.a is not None:
        kw["a"] = args.a
    if args.target is not None:
        kw["target"] = args.target
    cfg = replace(cfg, **kw)
    if cfg.data_path is None:
        raise ConfigError("no data file given (--data or data_path in the config)")
    return cfg


def _panel(cfg: dio.RunConfig):
    return validate_panel(dio.load_panel(cfg.data_path, cfg.target, cfg.target_path))


def _conditions(n: int, p: DccParams):
    if p.variant != "sigmoid":
        return None
    report = dcc.check_conditions(n, p)
    return replace(report, min_a_overall=dcc.min_a_search(n, p.eps))


def cmd_solve(args) -> int:
    cfg = _config(args)
    if args.k is None and cfg.method != "full":
        raise ConfigError("--k is required")
    panel = _panel(cfg)
    opts = cfg.solver_options()
    conditions = None
    if cfg.method == "dcc":
        p = cfg.dcc_params(panel.n_assets)
        conditions = _conditions(panel.n_assets, p)
        report = partial_replication_dcc(panel, p, opts)
    elif cfg.method == "forward":
        report = forward_selection(panel, cfg.K, opts)
    elif cfg.method == "backward":
        report = backward_selection(panel, cfg.K, opts)
    else:
        report = full_replication(panel, opts)
    dio.write_report(report, cfg.output_dir, panel=panel, config=cfg.echo(), conditions=conditions,
                     timings=not args.no_timings)
    print(f"method={report.method} objective={report.objective:.10g} "
          f"exact_cardinality={report.exact_cardinality} wall_time={report.wall_time_seconds:.4f}s")
    return 0


def cmd_backtest(args) -> int:
    base = dio.load_config(args.config) if args.config is not None else None
    cfg = _config(args, base)
    panel = _panel(cfg)
    schedule = make_schedule(panel.dates, cfg.lookback_days, cfg.rebalance_days)
    methods = METHODS if cfg.method == "all" else (cfg.method,)
    opts = cfg.solver_options()
    rows = []
    for method in methods:
        conditions = None
        if method == "dcc":
            p = cfg.dcc_params(panel.n_assets)
            conditions = _conditions(panel.n_assets, p)
            spec = MethodSpec("dcc", params=p, opts=opts)
            echo = {**cfg.echo(), "a_resolved": p.a}
        else:
            if method != "full" and not 1 <= cfg.K < panel.n_assets:
                raise InfeasibleConstraintConfig(f"need 1 <= K < N, got K={cfg.K}, N={panel.n_assets}")
            spec = MethodSpec(method, K=cfg.K, opts=opts)
            echo = cfg.echo()
        result = run_backtest(panel, spec, schedule, jobs=cfg.jobs)
        out = cfg.output_dir / method if len(methods) > 1 else cfg.output_dir
        dio.write_report(result, out, config=echo, conditions=conditions, timings=not args.no_timings)
        m = result.metrics
        rows.append([method, result.mae, m["cumulative_return"], m["volatility"], m["sharpe"], m["mdd"],
                     sum(result.per_rebalance_wall_time)])
    header = ["method", "mae", "cumulative_return", "volatility", "sharpe", "mdd", "wall_time_seconds"]
    if args.no_timings:
        header, rows = header[:-1], [r[:-1] for r in rows]
    if len(methods) > 1:
        table = [header] + [[r[0]] + ["" if v is None else dio.fmt(v) for v in r[1:]] for r in rows]
        with (cfg.output_dir / "summary.csv").open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(table)
    print(" ".join(f"{h:>17}" for h in header))
    for r in rows:
        cells = [f"{r[0]:>17}"] + [f"{'-' if v is None else format(v, '.6g'):>17}" for v in r[1:]]
        print(" ".join(cells))
    return 0


def _scan_grid(text: str, log: bool) -> np.ndarray:
    try:
        lo, hi, steps = text.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError:
        raise ConfigError(f"--scan expects lo:hi:steps, got {text!r}") from None
    if not (0 < lo <= hi) or steps < 1 or (steps == 1 and lo != hi):
        raise ConfigError(f"invalid scan range {text!r}: need 0 < lo <= hi and steps >= 1")
    return np.geomspace(lo, hi, steps) if log else np.linspace(lo, hi, steps)


def cmd_check_conditions(args) -> int:
    n, eps = args.n, args.eps
    if n < 2:
        raise ConfigError("--n must be >= 2")
    if not 0 < eps < 0.5:
        raise ConfigError("--eps must lie in (0, 0.5)")
    t0 = time.perf_counter()
    if args.scan is not None:
        grid = _scan_grid(args.scan, args.log)
        rows = [["a", "c0", "c1", "c2", "e"]]
        for a in grid:
            r = dcc.check_conditions(n, DccParams(a=float(a), K=1, eps=eps))
            rows.append([dio.fmt(a), str(r.c0).lower(), str(r.c1).lower(), str(r.c2).lower(), dio.fmt(r.error_integral)])
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "conditions.csv"
        with path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        print(f"wrote {len(grid)} rows to {path}")
    if args.a is not None:
        if not args.a > 0:
            raise ConfigError("--a must be positive")
        r = dcc.check_conditions(n, DccParams(a=args.a, K=1, eps=eps))
        print(f"a={args.a:.10g} c0={str(r.c0).lower()} c1={str(r.c1).lower()} c2={str(r.c2).lower()} "
              f"e={r.error_integral:.6g} n_times_e={r.n_times_e:.6g} all={str(r.all_satisfied).lower()}")
    elif args.scan is None:
        t0_, t1_, t2_ = dcc.condition_thresholds(n, eps)
        print(f"min_a_c0={t0_:.10g} min_a_c1={t1_:.10g} min_a_c2={t2_:.10g}")
        print(f"min_a_overall={max(t0_, t1_, t2_):.10g}")
    print(f"elapsed={time.perf_counter() - t0:.4f}s", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    spec = dio.SynthSpec(n=args.n, d=args.d, k0=args.sparse_k, noise=args.noise, seed=args.seed)
    table, w = dio.make_synthetic(spec)
    dio.write_prices_csv(table, args.out)
    truth = args.out.with_name(f"{args.out.stem}_truth.csv")
    dio.write_weights_csv(truth, table.tickers[:-1], w)
    print(f"wrote {args.out} ({spec.d + 1} rows, {spec.n} stocks + {dio.INDEX_TICKER}) and {truth}")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "backtest": cmd_backtest,
    "check-conditions": cmd_check_conditions,
    "synth": cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except TrackingError as exc:
        print(f"error_code={exc.code}", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
