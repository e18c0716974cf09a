"""Rolling-window backtests: fit on a trailing year, hold for a quarter."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from .baselines import backward_selection, forward_selection
from .errors import InsufficientData, LengthMismatch, TrackingError, WindowFailed
from .model import DccParams, ReturnsPanel, SolveReport, WeightVector
from .solver import SolverOptions, full_replication, partial_replication_dcc

TRADING_DAYS = 252
LOOKBACK_DAYS = 252
REBALANCE_DAYS = 63

Method = Literal["dcc", "forward", "backward", "full"]
METHODS = ("dcc", "forward", "backward", "full")


@dataclass(frozen=True)
class Window:
    """Row ranges ``[fit_start, fit_end)`` and ``[hold_start, hold_end)``."""

    fit_start: int
    fit_end: int
    hold_start: int
    hold_end: int

    @property
    def hold_days(self) -> int:
        return self.hold_end - self.hold_start


@dataclass(frozen=True)
class Schedule:
    windows: tuple[Window, ...]
    lookback_days: int
    rebalance_days: int

    @property
    def evaluation_range(self) -> tuple[int, int]:
        return self.windows[0].hold_start, self.windows[-1].hold_end


def make_schedule(dates, lookback_days: int = LOOKBACK_DAYS, rebalance_days: int = REBALANCE_DAYS) -> Schedule:
    """Rebalance at row ``lookback_days`` and then every ``rebalance_days`` rows.

    The last hold span is cut short at the end of the data.
    """
    n = len(dates)
    if lookback_days < 2 or rebalance_days < 1:
        raise InsufficientData("need lookback_days >= 2 and rebalance_days >= 1")
    if n <= lookback_days:
        raise InsufficientData(f"{n} rows leave no hold days after a {lookback_days}-day lookback")
    windows = []
    for start in range(lookback_days, n, rebalance_days):
        windows.append(Window(start - lookback_days, start, start, min(start + rebalance_days, n)))
    return Schedule(tuple(windows), lookback_days, rebalance_days)


@dataclass(frozen=True)
class MethodSpec:
    """A fitting method and its hyperparameters."""

    method: Method
    K: Optional[int] = None
    params: Optional[DccParams] = None
    opts: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.method not in METHODS:
            raise TrackingError(f"unknown method {self.method!r}")
        if self.method == "dcc" and self.params is None:
            raise TrackingError("dcc needs DccParams")

    @property
    def k(self) -> Optional[int]:
        return self.params.K if self.params is not None else self.K

    def fit(self, panel: ReturnsPanel) -> SolveReport:
        if self.method == "dcc":
            return partial_replication_dcc(panel, self.params, self.opts)
        if self.method == "forward":
            return forward_selection(panel, self.k, self.opts)
        if self.method == "backward":
            return backward_selection(panel, self.k, self.opts)
        return full_replication(panel, self.opts)


@dataclass(frozen=True, eq=False)
class BacktestResult:
    method: str
    dates: np.ndarray
    tracking: np.ndarray
    target: np.ndarray
    weights_per_rebalance: tuple[WeightVector, ...]
    rebalance_dates: np.ndarray
    #: see :func:`hold_mae`
    mae: float
    metrics: dict
    per_rebalance_wall_time: tuple[float, ...]
    schedule: Schedule
    tickers: tuple[str, ...] = ()
    reports: tuple[SolveReport, ...] = field(repr=False, default=())

    @property
    def tracking_level(self) -> np.ndarray:
        return levels(self.tracking)

    @property
    def target_level(self) -> np.ndarray:
        return levels(self.target)


def levels(returns, base: float = 100.0) -> np.ndarray:
    """End-of-day levels of a daily return series that stood at ``base`` the day before."""
    return base * np.cumprod(1.0 + np.asarray(returns, dtype=float))


def mae(tracking, target) -> float:
    """Mean absolute gap between two level series, both rebased to 100 at the first entry."""
    a = np.asarray(tracking, dtype=float)
    b = np.asarray(target, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise LengthMismatch(f"series shapes {a.shape} and {b.shape} differ or are empty")
    return float(np.mean(np.abs(100.0 * a / a[0] - 100.0 * b / b[0])))


def hold_mae(tracking_returns, target_returns) -> float:
    """MAE over hold days of levels that both stood at 100 before the first one."""
    a = levels(tracking_returns)
    b = levels(target_returns)
    if a.shape != b.shape:
        raise LengthMismatch(f"series lengths {a.size} and {b.size} differ")
    return float(np.mean(np.abs(a - b)))


def metrics(returns) -> dict:
    """Cumulative return, annualised volatility and Sharpe ratio (risk-free 0), max drawdown."""
    r = np.asarray(returns, dtype=float)
    if r.size == 0:
        raise LengthMismatch("empty return series")
    level = np.cumprod(1.0 + r)
    vol = float(np.std(r, ddof=1) * math.sqrt(TRADING_DAYS)) if r.size > 1 else 0.0
    sharpe = float(np.mean(r) * TRADING_DAYS / vol) if vol > 0 else None
    # the peak includes the starting level of 1
    peak = np.maximum.accumulate(np.concatenate(([1.0], level)))[1:]
    mdd = float(np.max(1.0 - level / peak))
    return {
        "cumulative_return": float(level[-1] - 1.0),
        "volatility": vol,
        "sharpe": sharpe,
        "mdd": min(max(mdd, 0.0), 1.0),
    }


def tracking_error_upper_bound(panel: ReturnsPanel, w) -> float:
    """Sum over stocks of ``w_i * max_j |r_i - r_j|``, j over the held stocks.

    ``r_i`` is the mean daily return of stock i over the panel.
    """
    x = np.asarray(w.w if isinstance(w, WeightVector) else w, dtype=float)
    r = panel.returns.mean(axis=0)
    held = np.flatnonzero(x > 0)
    if held.size == 0:
        return 0.0
    gaps = np.abs(r[:, None] - r[None, held]).max(axis=1)
    return float(np.sum(gaps * x))


def run_backtest(
    panel: ReturnsPanel,
    spec: MethodSpec,
    schedule: Optional[Schedule] = None,
    jobs: int = 1,
    on_fit: Optional[Callable[[int, Window, SolveReport], None]] = None,
) -> BacktestResult:
    """Fit each window's trailing span and hold the weights until the next rebalance.

    ``jobs > 1`` fits windows in a thread pool; results are assembled in
    schedule order either way.
    """
    if schedule is None:
        schedule = make_schedule(panel.dates)
    last = schedule.windows[-1]
    if last.hold_end > panel.n_days:
        raise InsufficientData("schedule runs past the end of the panel")

    def fit(i: int) -> SolveReport:
        win = schedule.windows[i]
        try:
            return spec.fit(panel.slice_rows(win.fit_start, win.fit_end))
        except TrackingError as exc:
            raise WindowFailed(i, exc) from exc

    idx = range(len(schedule.windows))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(fit, idx))
    else:
        reports = [fit(i) for i in idx]

    tracking = []
    for i, (win, rep) in enumerate(zip(schedule.windows, reports)):
        if on_fit is not None:
            on_fit(i, win, rep)
        tracking.append(panel.returns[win.hold_start : win.hold_end] @ rep.weights.w)
    start, end = schedule.evaluation_range
    tracking = np.concatenate(tracking)
    target = np.asarray(panel.target[start:end])
    return BacktestResult(
        method=spec.method,
        dates=np.asarray(panel.dates[start:end]),
        tracking=tracking,
        target=target,
        weights_per_rebalance=tuple(r.weights for r in reports),
        rebalance_dates=np.asarray([panel.dates[w.hold_start] for w in schedule.windows]),
        mae=hold_mae(tracking, target),
        metrics=metrics(tracking),
        per_rebalance_wall_time=tuple(r.wall_time_seconds for r in reports),
        schedule=schedule,
        tickers=panel.tickers,
        reports=tuple(reports),
    )
