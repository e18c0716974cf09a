"""Shared domain types for index tracking.

All containers are frozen dataclasses holding read-only numpy arrays, so they
can be handed to worker threads without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainError,
    InfeasibleConstraintConfig,
    NonFiniteEntry,
    NonMonotonicDates,
)

DEFAULT_EPS = 1e-4
DEFAULT_FEAS_TOL = 1e-8

Variant = Literal["sigmoid", "rational"]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ReturnsPanel:
    """Daily stock returns ``returns`` (D x N) and the index returns ``target`` (D,).

    Construction does not validate; run :func:`validate_panel` on anything
    assembled from external data.
    """

    returns: np.ndarray
    target: np.ndarray
    dates: np.ndarray
    tickers: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "returns", _frozen(np.atleast_2d(self.returns)))
        object.__setattr__(self, "target", _frozen(np.ravel(self.target)))
        object.__setattr__(self, "dates", _frozen(self.dates, dtype="datetime64[D]"))
        object.__setattr__(self, "tickers", tuple(str(t) for t in self.tickers))

    @property
    def n_days(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    def slice_rows(self, start: int, stop: int) -> "ReturnsPanel":
        return ReturnsPanel(
            self.returns[start:stop], self.target[start:stop], self.dates[start:stop], self.tickers
        )

    def select(self, columns) -> "ReturnsPanel":
        columns = list(columns)
        return ReturnsPanel(
            self.returns[:, columns],
            self.target,
            self.dates,
            tuple(self.tickers[c] for c in columns),
        )

    @classmethod
    def from_arrays(cls, returns, target, dates=None, tickers=None) -> "ReturnsPanel":
        """Convenience constructor with synthetic business-day dates and ``S0..`` tickers."""
        returns = np.atleast_2d(np.asarray(returns, dtype=float))
        d, n = returns.shape
        if dates is None:
            dates = np.busday_offset("2020-01-01", np.arange(d), roll="forward")
        if tickers is None:
            tickers = tuple(f"S{i}" for i in range(n))
        return cls(returns, target, dates, tickers)


def validate_panel(panel: ReturnsPanel) -> ReturnsPanel:
    """Return ``panel`` unchanged if it satisfies all panel invariants."""
    X = panel.returns
    if X.ndim != 2:
        raise DimensionMismatch(f"returns must be 2-D, got shape {X.shape}")
    d, n = X.shape
    if d < 2 or n < 2:
        raise DimensionMismatch(f"need at least 2 days and 2 assets, got {d}x{n}")
    if panel.target.shape != (d,):
        raise DimensionMismatch(f"target has length {panel.target.size}, expected {d}")
    if panel.dates.shape != (d,):
        raise DimensionMismatch(f"dates has length {panel.dates.size}, expected {d}")
    if len(panel.tickers) != n:
        raise DimensionMismatch(f"{len(panel.tickers)} tickers for {n} columns")
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        r, c = bad[0]
        raise NonFiniteEntry(int(r), int(c))
    bad = np.flatnonzero(~np.isfinite(panel.target))
    if bad.size:
        # the target is reported as the column after the last stock
        raise NonFiniteEntry(int(bad[0]), n)
    if np.isnat(panel.dates).any() or np.any(np.diff(panel.dates) <= np.timedelta64(0, "D")):
        raise NonMonotonicDates("dates must be strictly increasing")
    return panel


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Long-only, fully invested portfolio weights.

    Entries may undershoot zero and the sum may miss one by at most ``tol``;
    anything worse is rejected.
    """

    w: np.ndarray
    eps: float = DEFAULT_EPS
    tol: float = DEFAULT_FEAS_TOL

    def __post_init__(self):
        w = _frozen(np.ravel(self.w))
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise DomainError("weights must be a non-empty finite vector")
        if w.min() < -self.tol:
            raise DomainError(f"negative weight {w.min():.3g} beyond tolerance {self.tol:g}")
        if abs(w.sum() - 1.0) > self.tol:
            raise DomainError(f"weights sum to {w.sum():.12g}, not 1")
        if not 0.0 < self.eps < 0.5:
            raise DomainError(f"eps must lie in (0, 0.5), got {self.eps}")
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.w.size

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)

    @property
    def support(self) -> np.ndarray:
        """Indices whose weight reaches the cutoff."""
        return np.flatnonzero(self.w >= self.eps)

    @classmethod
    def uniform(cls, n: int, eps: float = DEFAULT_EPS) -> "WeightVector":
        return cls(np.full(n, 1.0 / n), eps)


@dataclass(frozen=True)
class DccParams:
    """Hyperparameters of the differentiable cardinality constraint."""

    a: float
    K: int
    eps: float = DEFAULT_EPS
    variant: Variant = "sigmoid"

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise DomainError(f"steepness a must be positive, got {self.a}")
        if not 0.0 < self.eps < 0.5:
            raise DomainError(f"eps must lie in (0, 0.5), got {self.eps}")
        if int(self.K) != self.K or self.K < 1:
            raise InfeasibleConstraintConfig(f"K must be an integer >= 1, got {self.K}")
        if self.variant not in ("sigmoid", "rational"):
            raise DomainError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "a", float(self.a))

    def require_assets(self, n: int) -> "DccParams":
        """Check ``1 <= K < n`` for a universe of ``n`` assets."""
        if self.K >= n:
            raise InfeasibleConstraintConfig(f"K={self.K} must be smaller than N={n}")
        return self


@dataclass(frozen=True)
class ConditionReport:
    c0: bool
    c1: bool
    c2: bool
    error_integral: float
    n_times_e: float
    min_a_overall: Optional[float] = None

    @property
    def all_satisfied(self) -> bool:
        return self.c0 and self.c1 and self.c2


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Outcome of one portfolio fit.

    ``objective`` is the squared tracking error ``||Xw - y||^2`` of the returned
    (post-threshold) weights. ``smooth_cardinality`` is only defined for the
    DCC solver and refers to the iterate before thresholding.
    """

    weights: WeightVector
    objective: float
    kkt_residual: float
    iterations: int
    smooth_cardinality: Optional[float]
    exact_cardinality: int
    wall_time_seconds: float
    method: str = "full"
    full_solves: int = 1
    pre_threshold: Optional[np.ndarray] = field(default=None, repr=False)
    params: Optional[DccParams] = None


@dataclass
class SolverState:
    """Iterate and multipliers of the SQP loop.

    Multipliers follow the Lagrangian
    ``1/2 |Xw-y|^2 + lam (1 - sum w) - mu.w + nu (C(w) - K)``.
    """

    w: np.ndarray
    lam: float
    mu: np.ndarray
    nu: float
    hessian_approx: np.ndarray
    penalty: float = 1.0
    #: step box half-width for unsaturated weights, in units of 1/a
    radius: float = 2.0
