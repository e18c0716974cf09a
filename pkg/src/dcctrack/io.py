"""Price ingestion, run configuration, synthetic data and report files."""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import dcc
from .backtest import BacktestResult, levels
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyFile,
    IoError,
    NonMonotonicDates,
    NonPositivePrice,
    ParseError,
    TrackingError,
    UnfixableLeadingGap,
)
from .model import DEFAULT_EPS, DEFAULT_FEAS_TOL, ConditionReport, DccParams, ReturnsPanel, SolveReport
from .solver import SolverOptions

MISSING = frozenset({"", "na", "nan", "null"})


def fmt(x: float) -> str:
    """Shortest text that reads back as the same double (at most 17 digits)."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# prices


@dataclass(frozen=True)
class FillEvent:
    """One repair made while loading: a forward fill or a dropped leading row."""

    kind: str  # "fill" or "drop"
    line: int
    date: str
    tickers: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class PriceTable:
    dates: np.ndarray
    tickers: tuple[str, ...]
    prices: np.ndarray
    report: tuple[FillEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "dates", np.asarray(self.dates, dtype="datetime64[D]"))
        object.__setattr__(self, "tickers", tuple(self.tickers))
        prices = np.array(self.prices, dtype=float)
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)

    @property
    def fills(self) -> list[FillEvent]:
        return [e for e in self.report if e.kind == "fill"]

    @property
    def drops(self) -> list[FillEvent]:
        return [e for e in self.report if e.kind == "drop"]

    def column(self, ticker: str) -> np.ndarray:
        try:
            return self.prices[:, self.tickers.index(ticker)]
        except ValueError:
            raise ConfigError(f"no column named {ticker!r}") from None


def _parse_date(text: str, line: int) -> np.datetime64:
    try:
        return np.datetime64(text.strip(), "D")
    except ValueError:
        raise ParseError(line, 1, f"bad date {text!r}") from None


def _parse_price(text: str, line: int, column: int) -> float:
    if text.strip().lower() in MISSING:
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, column, f"bad number {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, column, f"non-finite number {text!r}")
    return value


def load_prices_csv(path) -> PriceTable:
    """Read ``date,T1,T2,...`` closing prices.

    Missing cells are forward-filled from the previous row. Leading rows with
    a missing cell have nothing to fill from and are dropped. Both are listed in
    the table's ``report``. Line and column numbers in errors are 1-based.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc
    # keep physical line numbers while skipping blank lines
    numbered = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not numbered:
        raise EmptyFile(f"{path} is empty")
    (hline, header), body = numbered[0], numbered[1:]
    if len(header) < 2 or header[0].strip().lower() != "date":
        raise ParseError(hline, 1, "header must be date,TICKER1,...")
    tickers = tuple(h.strip() for h in header[1:])
    for j, t in enumerate(tickers):
        if not t:
            raise ParseError(hline, j + 2, "empty ticker name")
    if len(set(tickers)) != len(tickers):
        raise ParseError(hline, 1, "duplicate ticker names")
    if not body:
        raise EmptyFile(f"{path} has a header but no rows")

    width = len(header)
    dates, values, lines = [], [], []
    for line, row in body:
        if len(row) != width:
            raise ParseError(line, min(len(row), width) + 1, f"expected {width} fields, got {len(row)}")
        dates.append(_parse_date(row[0], line))
        values.append([_parse_price(c, line, j + 2) for j, c in enumerate(row[1:])])
        lines.append(line)
    dates = np.array(dates, dtype="datetime64[D]")
    prices = np.array(values, dtype=float)
    steps = np.diff(dates)
    if np.any(steps <= np.timedelta64(0, "D")):
        k = int(np.flatnonzero(steps <= np.timedelta64(0, "D"))[0]) + 1
        raise NonMonotonicDates(f"line {lines[k]}: date {dates[k]} does not follow {dates[k - 1]}")

    events = []
    missing = np.isnan(prices)
    first_valid = np.where(missing.all(axis=0), len(dates), missing.argmin(axis=0))
    start = int(first_valid.max())
    if start >= len(dates):
        worst = int(np.argmax(first_valid))
        raise UnfixableLeadingGap(tickers[worst])
    for r in range(start):
        gaps = tuple(tickers[j] for j in np.flatnonzero(missing[r]))
        events.append(FillEvent("drop", lines[r], str(dates[r]), gaps))
    for r in range(start, len(dates)):
        gaps = np.flatnonzero(missing[r])
        if gaps.size:
            prices[r, gaps] = prices[r - 1, gaps]
            events.append(FillEvent("fill", lines[r], str(dates[r]), tuple(tickers[j] for j in gaps)))
    return PriceTable(dates[start:], tickers, prices[start:], tuple(events))


def write_prices_csv(table: PriceTable, path) -> Path:
    path = Path(path)
    rows = [["date", *table.tickers]]
    rows += [[str(d), *map(fmt, p)] for d, p in zip(table.dates, table.prices)]
    _write_csv(path, rows)
    return path


def to_returns(prices: PriceTable, target_column: str, target: Optional[PriceTable] = None) -> ReturnsPanel:
    """Simple daily returns ``p_t / p_{t-1} - 1`` of the stocks and the index.

    The index is ``target_column`` of ``target`` if given, otherwise of
    ``prices``; in the latter case that column is not treated as a stock.
    """
    if prices.prices.shape[0] < 2:
        raise DimensionMismatch("need at least two price rows")
    if target is None:
        y = prices.column(target_column)
        keep = [j for j, t in enumerate(prices.tickers) if t != target_column]
    else:
        if target.dates.shape != prices.dates.shape or np.any(target.dates != prices.dates):
            raise DimensionMismatch("index and stock files cover different dates")
        y = target.column(target_column)
        keep = list(range(len(prices.tickers)))
    tickers = tuple(prices.tickers[j] for j in keep)
    P = prices.prices[:, keep]
    for name, col in [*zip(tickers, P.T), (target_column, y)]:
        bad = np.flatnonzero(col <= 0)
        if bad.size:
            raise NonPositivePrice(name, str(prices.dates[bad[0]]))
    X = P[1:] / P[:-1] - 1.0
    r = y[1:] / y[:-1] - 1.0
    return ReturnsPanel(X, r, prices.dates[1:], tickers)


def load_panel(path, target_column: str, target_path=None) -> ReturnsPanel:
    table = load_prices_csv(path)
    target = load_prices_csv(target_path) if target_path is not None else None
    return to_returns(table, target_column, target)


# ---------------------------------------------------------------------------
# synthetic market


@dataclass(frozen=True)
class SynthSpec:
    """One-factor market: ``r_i = beta_i m + e_i``; the index holds k0 stocks."""

    n: int
    d: int
    k0: int
    noise: float
    seed: int = 0
    market_mean: float = 3e-4
    market_vol: float = 0.01
    idio_vol: float = 0.015
    beta_range: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        if self.n < 2 or self.d < 2:
            raise ConfigError(f"need n >= 2 and d >= 2, got n={self.n}, d={self.d}")
        if not 1 <= self.k0 <= self.n:
            raise ConfigError(f"need 1 <= k0 <= n, got k0={self.k0}")
        if not (self.noise >= 0 and math.isfinite(self.noise)):
            raise ConfigError(f"noise must be a finite non-negative number, got {self.noise}")


INDEX_TICKER = "INDEX"


def make_synthetic(spec: SynthSpec) -> tuple[PriceTable, np.ndarray]:
    """Prices of ``n`` stocks plus the ``INDEX`` column over ``d + 1`` days.

    Returns the price table and the planted weights (k0 nonzero, sum 1).
    """
    rng = np.random.default_rng(spec.seed)
    market = rng.normal(spec.market_mean, spec.market_vol, spec.d)
    beta = rng.uniform(*spec.beta_range, spec.n)
    X = market[:, None] * beta + rng.normal(0.0, spec.idio_vol, (spec.d, spec.n))
    w = np.zeros(spec.n)
    held = rng.choice(spec.n, spec.k0, replace=False)
    w[held] = rng.dirichlet(np.ones(spec.k0))
    y = X @ w + rng.normal(0.0, spec.noise, spec.d) if spec.noise > 0 else X @ w
    R = np.column_stack([X, y])
    prices = 100.0 * np.vstack([np.ones(spec.n + 1), np.cumprod(1.0 + R, axis=0)])
    dates = np.busday_offset("2015-01-01", np.arange(spec.d + 1), roll="forward")
    width = len(str(spec.n - 1))
    tickers = tuple(f"S{i:0{width}d}" for i in range(spec.n)) + (INDEX_TICKER,)
    return PriceTable(dates, tickers, prices), w


def synthetic_panel(spec: SynthSpec) -> tuple[ReturnsPanel, np.ndarray]:
    """Panel built in memory from :func:`make_synthetic` prices."""
    table, w = make_synthetic(spec)
    return to_returns(table, INDEX_TICKER), w


# ---------------------------------------------------------------------------
# run configuration

METHOD_CHOICES = ("dcc", "forward", "backward", "full", "all")


@dataclass(frozen=True)
class RunConfig:
    """Everything a backtest run needs. All keys are optional in the file.

    ``a`` is a number, ``"auto"`` (smallest a meeting C0-C2) or ``None`` (the
    tolerance-matched default, see :func:`resolve_a`).
    """

    data_path: Optional[Path] = None
    target: str = INDEX_TICKER
    target_path: Optional[Path] = None
    method: str = "dcc"
    K: int = 10
    a: Union[float, str, None] = None
    eps: float = DEFAULT_EPS
    variant: str = "sigmoid"
    lookback_days: int = 252
    rebalance_days: int = 63
    max_iterations: int = 500
    tol_objective: float = 1e-9
    tol_feasibility: float = DEFAULT_FEAS_TOL
    hessian: str = "structured"
    output_dir: Path = Path("out")
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.method not in METHOD_CHOICES:
            raise ConfigError(f"method must be one of {', '.join(METHOD_CHOICES)}, got {self.method!r}")
        if isinstance(self.a, str) and self.a != "auto":
            raise ConfigError(f"a must be a number or 'auto', got {self.a!r}")
        if self.lookback_days < 2 or self.rebalance_days < 1:
            raise ConfigError("need lookback_days >= 2 and rebalance_days >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        # surface numeric problems now rather than mid-run
        self.solver_options()
        probe = self.a if isinstance(self.a, (int, float)) else 1.0
        DccParams(a=probe, K=self.K, eps=self.eps, variant=self.variant)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            max_iterations=self.max_iterations,
            tol_objective=self.tol_objective,
            tol_feasibility=self.tol_feasibility,
            hessian=self.hessian,
        )

    def dcc_params(self, n: int) -> DccParams:
        a = resolve_a(self.a, n, self.eps, self.tol_feasibility)
        return DccParams(a=a, K=self.K, eps=self.eps, variant=self.variant).require_assets(n)

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = str(v) if isinstance(v, Path) else v
        return out


def resolve_a(a: Union[float, str, None], n: int, eps: float, tol: float = DEFAULT_FEAS_TOL) -> float:
    """``"auto"`` -> :func:`dcc.min_a_search`; ``None`` -> :func:`dcc.tolerance_matched_a`."""
    if a == "auto":
        return dcc.min_a_search(n, eps)
    if a is None:
        return dcc.tolerance_matched_a(n, eps, tol)
    return float(a)


_INT_KEYS = {"K", "lookback_days", "rebalance_days", "max_iterations", "seed", "jobs"}
_FLOAT_KEYS = {"eps", "tol_objective", "tol_feasibility"}
_PATH_KEYS = {"data_path", "target_path", "output_dir"}


def load_config(path) -> RunConfig:
    """Read an INI file with a single ``[run]`` section of ``key = value`` lines.

    Relative paths are taken relative to the file. Unknown keys are errors.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep the case of "K"
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    extra = [s for s in parser.sections() if s != "run"]
    if extra:
        raise ConfigError(f"{path}: unknown section(s) {', '.join(extra)}")
    raw = dict(parser["run"]) if parser.has_section("run") else {}
    return config_from_mapping(raw, base=path.parent)


def config_from_mapping(raw: dict, base: Path = Path(".")) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    kw = {}
    for key, text in raw.items():
        text = str(text).strip()
        try:
            if key in _INT_KEYS:
                kw[key] = int(text)
            elif key in _FLOAT_KEYS:
                kw[key] = float(text)
            elif key in _PATH_KEYS:
                kw[key] = base / Path(text)
            elif key == "a":
                kw[key] = None if text.lower() in ("", "default") else ("auto" if text == "auto" else float(text))
            else:
                kw[key] = text
        except ValueError:
            raise ConfigError(f"bad value for {key}: {text!r}") from None
    for key in ("data_path", "target_path"):
        if kw.get(key) is not None and not kw[key].exists():
            raise ConfigError(f"{key} {kw[key]} does not exist")
    return RunConfig(**kw)


# ---------------------------------------------------------------------------
# reports


def _write_csv(path: Path, rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc


def _write_json(path: Path, obj: dict) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    except OSError as exc:
        raise IoError(path, exc.strerror or str(exc)) from exc


def _weights_rows(tickers, w) -> list[list[str]]:
    rows = [["ticker", "weight"]]
    rows += [[t, fmt(x)] for t, x in zip(tickers, w) if x != 0.0]
    return rows


def _tracking_rows(dates, tracking_returns, target_returns) -> list[list[str]]:
    a, b = levels(tracking_returns), levels(target_returns)
    rows = [["date", "tracking_level", "target_level", "abs_error"]]
    rows += [[str(d), fmt(x), fmt(y), fmt(abs(x - y))] for d, x, y in zip(dates, a, b)]
    return rows


def _flat_conditions(c: Optional[ConditionReport]) -> dict:
    if c is None:
        return {}
    out = {f"condition_{k}": v for k, v in asdict(c).items()}
    out["condition_all_satisfied"] = c.all_satisfied
    return out


def _clean(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def write_report(
    result: Union[BacktestResult, SolveReport],
    output_dir,
    panel: Optional[ReturnsPanel] = None,
    config: Optional[dict] = None,
    conditions: Optional[ConditionReport] = None,
    timings: bool = True,
) -> list[Path]:
    """Write ``weights_<date>.csv``, ``tracking.csv`` and ``summary.json``.

    A :class:`SolveReport` needs the ``panel`` it was fitted on; its weights are
    dated by the last fitted day and tracking.csv covers the fitted span.
    Everything but the wall-time entries of summary.json is a pure function
    of the inputs; ``timings=False`` leaves those out.
    """
    out = Path(output_dir)
    paths: list[Path] = []
    summary: dict = {}
    if isinstance(result, BacktestResult):
        for d, w in zip(result.rebalance_dates, result.weights_per_rebalance):
            paths.append(out / f"weights_{d}.csv")
            _write_csv(paths[-1], _weights_rows(result.tickers, w.w))
        rows = _tracking_rows(result.dates, result.tracking, result.target)
        summary.update(
            method=result.method,
            mae=result.mae,
            rebalances=len(result.weights_per_rebalance),
            hold_days=int(result.dates.size),
            **result.metrics,
        )
        if timings:
            summary["wall_time_per_rebalance_seconds"] = list(result.per_rebalance_wall_time)
            summary["wall_time_seconds"] = float(sum(result.per_rebalance_wall_time))
    elif isinstance(result, SolveReport):
        if panel is None:
            raise TrackingError("writing a SolveReport needs the panel it was fitted on")
        w = result.weights.w
        paths.append(out / f"weights_{panel.dates[-1]}.csv")
        _write_csv(paths[-1], _weights_rows(panel.tickers, w))
        rows = _tracking_rows(panel.dates, panel.returns @ w, panel.target)
        tracking_levels = levels(panel.returns @ w)
        target_levels = levels(panel.target)
        summary.update(
            method=result.method,
            mae=float(np.mean(np.abs(tracking_levels - target_levels))),
            objective=result.objective,
            kkt_residual=result.kkt_residual,
            iterations=result.iterations,
            full_solves=result.full_solves,
            exact_cardinality=result.exact_cardinality,
            smooth_cardinality=result.smooth_cardinality,
        )
        if result.params is not None:
            summary.update(a=result.params.a, eps=result.params.eps, K=result.params.K, variant=result.params.variant)
        if timings:
            summary["wall_time_seconds"] = result.wall_time_seconds
    else:
        raise TypeError(f"cannot report a {type(result).__name__}")
    paths.append(out / "tracking.csv")
    _write_csv(paths[-1], rows)
    summary.update(_flat_conditions(conditions))
    for k, v in (config or {}).items():
        summary[f"config_{k}"] = v
    # snake_case keys, so K appears as k
    summary = {k.lower(): _clean(v) for k, v in summary.items()}
    paths.append(out / "summary.json")
    _write_json(paths[-1], summary)
    return paths


def read_tracking_csv(path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {
        "date": np.array([r["date"] for r in rows], dtype="datetime64[D]"),
        **{k: np.array([float(r[k]) for r in rows]) for k in ("tracking_level", "target_level", "abs_error")},
    }


def write_weights_csv(path, tickers, w, keep_zeros: bool = True) -> Path:
    """Ticker/weight table; unlike report files it lists zero weights too by default."""
    path = Path(path)
    rows = [["ticker", "weight"]]
    rows += [[t, fmt(x)] for t, x in zip(tickers, w) if keep_zeros or x != 0.0]
    _write_csv(path, rows)
    return path
