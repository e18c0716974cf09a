"""Greedy selection baselines built from repeated full replications."""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from . import dcc
from .errors import InfeasibleConstraintConfig
from .model import ReturnsPanel, SolveReport, WeightVector
from .solver import SolverOptions, full_replication


def _check_k(K: int, n: int):
    if int(K) != K or K < 1 or K >= n:
        raise InfeasibleConstraintConfig(f"need 1 <= K < N, got K={K}, N={n}")


def _restricted_fit(panel: ReturnsPanel, columns, opts: SolverOptions) -> tuple[np.ndarray, SolveReport]:
    """Full replication on ``columns``; weights are scattered back to length N."""
    columns = sorted(columns)
    w = np.zeros(panel.n_assets)
    if len(columns) == 1:
        # the simplex in one dimension is a point
        w[columns] = 1.0
        r = panel.returns[:, columns[0]] - panel.target
        single = SolveReport(
            weights=WeightVector(np.ones(1)),
            objective=float(r @ r),
            kkt_residual=0.0,
            iterations=0,
            smooth_cardinality=None,
            exact_cardinality=1,
            wall_time_seconds=0.0,
        )
        return w, single
    sub_opts = opts
    if opts.initial_weights is not None:
        w0 = np.asarray(opts.initial_weights.w)[columns]
        w0 = w0 if w0.sum() > 0 else np.ones(len(columns))
        sub_opts = replace(opts, initial_weights=WeightVector(w0 / w0.sum()))
    sub = full_replication(panel.select(columns), sub_opts)
    w[columns] = sub.weights.w
    return w, sub


def _clean(w: np.ndarray, tol: float) -> np.ndarray:
    # numerical dust counts as an exact zero for ranking purposes
    return np.where(w <= tol, 0.0, w)


def _report(panel, w, last: SolveReport, iterations, solves, t0, method) -> SolveReport:
    weights = WeightVector(w)
    return SolveReport(
        weights=weights,
        objective=last.objective,
        kkt_residual=last.kkt_residual,
        iterations=iterations,
        smooth_cardinality=None,
        exact_cardinality=dcc.cardinality_exact(weights),
        wall_time_seconds=time.perf_counter() - t0,
        method=method,
        full_solves=solves,
    )


def forward_selection(panel: ReturnsPanel, K: int, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Pick K stocks one at a time from full-replication weights, then refit on them.

    Every round fits all N stocks and adds the heaviest stock not yet chosen
    (lower index wins ties; zero weights rank last, by index). The K selection
    fits plus the final restricted fit make K + 1 solves.
    """
    t0 = time.perf_counter()
    n = panel.n_assets
    _check_k(K, n)
    selected: list[int] = []
    iterations = 0
    for _ in range(K):
        fit = full_replication(panel, opts)
        iterations += fit.iterations
        w = _clean(fit.weights.w, opts.tol_feasibility)
        remaining = [i for i in range(n) if i not in selected]
        selected.append(min(remaining, key=lambda i: (-w[i], i)))
    w, last = _restricted_fit(panel, selected, opts)
    iterations += last.iterations
    return _report(panel, w, last, iterations, K + 1, t0, "forward")


def backward_selection(panel: ReturnsPanel, K: int, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Drop the lightest stock and refit until K remain (N - K + 1 solves).

    Among equally light stocks the one with the higher index goes first.
    """
    t0 = time.perf_counter()
    n = panel.n_assets
    _check_k(K, n)
    active = list(range(n))
    w, last = _restricted_fit(panel, active, opts)
    iterations, solves = last.iterations, 1
    while len(active) > K:
        wc = _clean(w, opts.tol_feasibility)
        drop = min(active, key=lambda i: (wc[i], -i))
        active.remove(drop)
        w, last = _restricted_fit(panel, active, opts)
        iterations += last.iterations
        solves += 1
    return _report(panel, w, last, iterations, solves, t0, "backward")
