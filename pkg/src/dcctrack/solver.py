"""Constrained least-squares tracking solved by sequential quadratic programming.

Full replication minimises ``||Xw - y||^2`` over the simplex. Partial
replication adds the smooth count ``C(w) <= K``. Each SQP iteration solves

    min_d  g.d + 1/2 d'Hd + rho * t
    s.t.   sum(w + d) = 1,  w + d >= 0,  C(w) + grad C(w).d <= t,  t >= 0

with quadprog, and accepts ``w + alpha d`` by backtracking on the l1 merit
``f(w) + rho * max(C(w) - K, 0)``. The slack ``t`` keeps the subproblem
feasible when the linearised count cannot be met; ``rho`` is raised until it
vanishes.

For the sigmoid count a large steepness makes the constraint gradient vanish
everywhere except in a band of width ~1/a around the cutoff. Three devices
deal with that:

* a continuation in ``a``: early stages use a softened count shifted to read
  zero at ``w = 0``, later stages sharpen it, the last one is the real problem;
* a box on each step of unsaturated weights, a few ``1/a`` wide, adapted to
  how well the linearised count predicted the merit;
* a second-order correction when the full step fails the merit test.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, replace
from typing import Literal, Optional

import numpy as np
import quadprog
from scipy.special import expit

from . import dcc
from .errors import (
    AllBelowCutoff,
    CardinalityViolated,
    DegenerateProblem,
    DomainError,
    InfeasibleConstraintConfig,
    MaxIterationsExceeded,
)
from .model import DccParams, ReturnsPanel, SolveReport, SolverState, WeightVector

log = logging.getLogger(__name__)

RADIUS_MIN, RADIUS_MAX = 1e-3, 8.0


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 500
    tol_objective: float = 1e-9
    tol_feasibility: float = 1e-8
    initial_weights: Optional[WeightVector] = None
    hessian: Literal["bfgs", "structured"] = "structured"
    # continuation in the steepness a (partial replication only)
    continuation_factor: float = 2.0
    stage_iterations: int = 10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if not (self.tol_objective > 0 and self.tol_feasibility > 0):
            raise DomainError("tolerances must be positive")
        if self.hessian not in ("bfgs", "structured"):
            raise DomainError(f"unknown hessian strategy {self.hessian!r}")
        if self.continuation_factor <= 1.0:
            raise DomainError("continuation_factor must exceed 1")


# ---------------------------------------------------------------------------
# problem context


class _Count:
    """Smooth count ``C(w)`` with value, gradient and Hessian diagonal.

    With ``shifted=True`` the sigmoid count is affinely rescaled so that a zero
    weight contributes exactly 0 and a saturated one 1; only used for
    intermediate continuation stages.
    """

    def __init__(self, a: float, eps: float, variant: str, shifted: bool = False):
        self.a, self.eps, self.variant = a, eps, variant
        self.params = DccParams(a=a, K=1, eps=eps, variant=variant)
        if variant == "sigmoid" and shifted:
            floor = float(expit(-a * eps))
            self.offset, self.scale = floor, 1.0 + floor / (1.0 - floor)
        else:
            self.offset, self.scale = 0.0, 1.0

    def value(self, w):
        return self.scale * (dcc.cardinality_smooth(w, self.params) - w.size * self.offset)

    def excess(self, w, K: int) -> float:
        """``value(w) - K`` without cancellation when most terms round to 1."""
        if self.variant == "sigmoid":
            z = self.a * (w - self.eps)
            hi = z > 0
            lo_part = expit(z[~hi]).sum()
            hi_deficit = expit(-z[hi]).sum()
        else:
            z = self.a * np.maximum(w, 0.0)
            hi = z > 1
            lo_part = (z[~hi] / (z[~hi] + 1.0)).sum()
            hi_deficit = (1.0 / (z[hi] + 1.0)).sum()
        n_hi = int(hi.sum())
        rest = lo_part - hi_deficit - w.size * self.offset
        return (n_hi - K) + (self.scale - 1.0) * n_hi + self.scale * rest

    def step_bounds(self, w, radius: float, z_cap: float):
        """Box on the next iterate keeping unsaturated entries within ``radius / a``.

        Only the sigmoid count needs this; its linearisation is useless more
        than a few ``1/a`` away from the point where it was taken.
        """
        n = w.size
        lo, hi = np.zeros(n), np.full(n, np.inf)
        if self.variant != "sigmoid":
            return lo, hi
        z = self.a * (w - self.eps)
        width = radius / self.a
        inner = z < z_cap
        lo[inner] = np.maximum(w[inner] - width, 0.0)
        hi[inner] = w[inner] + width
        # saturated holdings may fall to just below the cap in one step
        lo[~inner] = self.eps + (z_cap - radius) / self.a
        return lo, hi

    def grad(self, w):
        return self.scale * dcc.grad_cardinality_smooth(w, self.params)

    def curvature(self, w):
        return self.scale * dcc.curvature_cardinality_smooth(w, self.params)


class TrackingProblem:
    """Least-squares data plus an optional smooth cardinality bound."""

    def __init__(self, X, y, count: Optional[_Count] = None, K: Optional[int] = None, slack: float = 0.0):
        self.slack = slack
        self.X = np.asarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.n = self.X.shape[1]
        self.gram = self.X.T @ self.X
        self.xty = self.X.T @ self.y
        self.count = count
        self.K = K
        self.curv_scale = max(float(np.trace(self.gram)) / self.n, 1e-300)
        self.penalty_cap = 1e8 * self.curv_scale
        self.z_cap = 30.0

    def with_count(self, count: _Count, slack: float = 0.0) -> "TrackingProblem":
        """Same data with the bound ``C(w) <= K + slack``."""
        other = object.__new__(TrackingProblem)
        other.__dict__.update(self.__dict__)
        other.count = count
        other.slack = slack
        return other

    def objective(self, w) -> float:
        r = self.X @ w - self.y
        return 0.5 * float(r @ r)

    def gradient(self, w) -> np.ndarray:
        return self.gram @ w - self.xty

    def constraint(self, w) -> float:
        return 0.0 if self.count is None else self.count.excess(w, self.K) - self.slack

    def constraint_grad(self, w) -> np.ndarray:
        return np.zeros(self.n) if self.count is None else self.count.grad(w)

    def lagrangian_grad(self, w, lam, mu, nu) -> np.ndarray:
        return self.gradient(w) - lam - mu + nu * self.constraint_grad(w)

    def merit(self, w, rho) -> float:
        return self.objective(w) + rho * max(self.constraint(w), 0.0)

    def step_bounds(self, w, radius):
        if self.count is None:
            return np.zeros(self.n), np.full(self.n, np.inf)
        return self.count.step_bounds(w, radius, self.z_cap)

    def structured_hessian(self, w, nu) -> np.ndarray:
        H = self.gram.copy()
        if self.count is not None and nu > 0:
            # only the convex part of the count's curvature is kept
            H[np.diag_indices(self.n)] += nu * np.maximum(self.count.curvature(w), 0.0)
        return H


def kkt_residual(w, multipliers, problem: TrackingProblem) -> float:
    """Max-norm of stationarity, primal violation and complementarity.

    ``multipliers`` is ``(lam, mu, nu)`` for the Lagrangian
    ``1/2|Xw-y|^2 + lam(1 - sum w) - mu.w + nu(C(w) - K)``.
    """
    lam, mu, nu = multipliers
    w = np.asarray(w, dtype=float)
    mu = np.asarray(mu, dtype=float)
    c = problem.constraint(w)
    parts = [
        np.abs(problem.lagrangian_grad(w, lam, mu, nu)).max(),
        abs(w.sum() - 1.0),
        max(-w.min(), 0.0),
        max(c, 0.0),
        np.abs(mu * w).max(),
        abs(nu * c) if problem.count is not None else 0.0,
        max(-mu.min(), 0.0),
        max(-nu, 0.0),
    ]
    return float(max(parts))


# ---------------------------------------------------------------------------
# SQP iteration


@dataclass
class StepInfo:
    alpha: float
    step_norm: float
    merit_before: float
    merit_after: float
    predicted: float
    elastic: float
    reset_hessian: bool


def _solve_subproblem(state: SolverState, problem: TrackingProblem, g, c, j):
    n = problem.n
    w, H, rho = state.w, state.hessian_approx, state.penalty
    lo, hi = problem.step_bounds(w, state.radius)
    capped = np.flatnonzero(np.isfinite(hi))
    # the count row is normalised to unit max-norm; the slack lives in the same units
    jmax = float(np.abs(j).max())
    # no step on the simplex (l1 length <= 2) can move a flat linearisation
    flat = 2.0 * jmax <= 1e-12 * max(abs(c), 1.0)
    scale = 1.0 if flat else jmax
    G = np.zeros((n + 1, n + 1))
    G[:n, :n] = H
    G[n, n] = 1e-6 * problem.curv_scale
    q = np.empty(n + 1)
    q[:n] = H @ w - g
    q[n] = -rho * scale
    m = n + 3 + capped.size
    C = np.zeros((n + 1, m))
    b = np.zeros(m)
    C[:n, 0] = 1.0
    b[0] = 1.0
    C[:n, 1 : n + 1] = np.eye(n)
    b[1 : n + 1] = lo
    C[n, n + 1] = 1.0
    if not flat:
        C[:n, n + 1] = -j / scale
        b[n + 1] = (c - j @ w) / scale
    C[n, n + 2] = 1.0
    C[capped, n + 3 + np.arange(capped.size)] = -1.0
    b[n + 3 :] = -hi[capped]
    sol = quadprog.solve_qp(G, q, C, b, 1)
    z, lag = sol[0], sol[4]
    # bound multipliers only belong to w >= 0 where the lower box sits at zero
    mu = np.where(lo == 0.0, lag[1 : n + 1], 0.0)
    return z[:n], max(z[n], 0.0) * scale, lag[0], mu, lag[n + 1] / scale


def _damped_bfgs(H, s, yv):
    Hs = H @ s
    sHs = float(s @ Hs)
    if sHs <= 0:
        return H
    sy = float(s @ yv)
    # Powell damping keeps H positive definite
    if sy < 0.2 * sHs:
        theta = 0.8 * sHs / (sHs - sy)
        yv = theta * yv + (1 - theta) * Hs
        sy = float(s @ yv)
    return H - np.outer(Hs, Hs) / sHs + np.outer(yv, yv) / sy


def sqp_step(
    state: SolverState,
    problem: TrackingProblem,
    hessian: str = "structured",
    max_penalty_raises: int = 3,
) -> tuple[SolverState, StepInfo]:
    """One SQP iteration: QP subproblem, penalty steering, line search, update."""
    w = state.w
    g = problem.gradient(w)
    c = problem.constraint(w)
    j = problem.constraint_grad(w)
    reset = False
    for _ in range(max_penalty_raises + 1):
        try:
            x, t, lam, mu, nu = _solve_subproblem(state, problem, g, c, j)
        except ValueError:
            # singular or inconsistent subproblem: restart curvature from a scaled identity
            state = replace(state, hessian_approx=problem.curv_scale * np.eye(problem.n))
            reset = True
            x, t, lam, mu, nu = _solve_subproblem(state, problem, g, c, j)
        if t <= 1e-12 * max(1.0, abs(c)) or problem.count is None:
            break
        if state.penalty >= problem.penalty_cap:
            break
        state = replace(state, penalty=min(state.penalty * 10.0, problem.penalty_cap))
    # in elastic mode nu just echoes rho, so only a genuine multiplier may raise it
    if t == 0.0 and nu > state.penalty / 1.5:
        state = replace(state, penalty=min(max(2.0 * nu, state.penalty), problem.penalty_cap))
    rho = state.penalty
    d = x - w
    H = state.hessian_approx
    model_decrease = rho * max(c, 0.0) - (g @ d + 0.5 * d @ H @ d + rho * max(c + j @ d, 0.0))
    phi0 = problem.merit(w, rho)
    alpha = 1.0
    w_new = w
    phi_new = phi0
    if np.abs(d).max() > 0 and problem.count is not None:
        full = np.maximum(x, 0.0)
        phi_full = problem.merit(full, rho)
        if phi_full > phi0 - 1e-4 * max(model_decrease, 0.0):
            # second-order correction: re-linearise with the count's observed remainder
            remainder = problem.constraint(full) - c - j @ d
            try:
                x2 = _solve_subproblem(state, problem, g, c + remainder, j)[0]
            except ValueError:
                x2 = None
            if x2 is not None:
                trial = np.maximum(x2, 0.0)
                phi_soc = problem.merit(trial, rho)
                if phi_soc <= phi0 - 1e-4 * max(model_decrease, 0.0):
                    d = x2 - w
                    w_new, phi_new = trial, phi_soc
    if w_new is w and np.abs(d).max() > 0:
        for _ in range(60):
            trial = np.maximum(w + alpha * d, 0.0)
            phi_new = problem.merit(trial, rho)
            if phi_new <= phi0 - 1e-4 * alpha * max(model_decrease, 0.0):
                w_new = trial
                break
            alpha *= 0.5
        else:
            alpha = 0.0
            phi_new = phi0
    mu = np.maximum(mu, 0.0)
    nu = max(nu, 0.0)
    if hessian == "bfgs":
        s = w_new - w
        if np.abs(s).max() > 0:
            yv = problem.lagrangian_grad(w_new, lam, mu, nu) - problem.lagrangian_grad(w, lam, mu, nu)
            H = _damped_bfgs(H, s, yv)
    else:
        H = problem.structured_hessian(w_new, nu)
        H[np.diag_indices(problem.n)] += 1e-10 * problem.curv_scale
    radius = state.radius
    if alpha == 1.0:
        radius = min(2.0 * radius, RADIUS_MAX)
    elif alpha < 0.25:
        radius = max(0.25 * radius, RADIUS_MIN)
    new = SolverState(w=w_new, lam=lam, mu=mu, nu=nu, hessian_approx=H, penalty=rho, radius=radius)
    info = StepInfo(
        alpha=alpha,
        step_norm=float(alpha * np.abs(d).max()),
        merit_before=phi0,
        merit_after=phi_new,
        predicted=float(model_decrease),
        elastic=t,
        reset_hessian=reset,
    )
    return new, info


def _initial_state(problem: TrackingProblem, w0: np.ndarray, hessian: str) -> SolverState:
    H = problem.gram.copy()
    H[np.diag_indices(problem.n)] += 1e-10 * problem.curv_scale
    return SolverState(
        w=w0.copy(),
        lam=0.0,
        mu=np.zeros(problem.n),
        nu=0.0,
        hessian_approx=H,
        penalty=problem.curv_scale,
    )


def _run(
    problem: TrackingProblem,
    state: SolverState,
    opts: SolverOptions,
    max_iter: int,
    final: bool,
) -> tuple[SolverState, int, float, bool]:
    """Iterate until KKT tolerance, objective stall, or the iteration budget."""
    kkt = math.inf
    for it in range(1, max_iter + 1):
        state, info = sqp_step(state, problem, opts.hessian)
        kkt = kkt_residual(state.w, (state.lam, state.mu, state.nu), problem)
        if kkt <= opts.tol_feasibility:
            return state, it, kkt, True
        feasible = problem.constraint(state.w) <= opts.tol_feasibility
        change = abs(info.merit_before - info.merit_after)
        stalled = change <= opts.tol_objective * max(abs(info.merit_before), 1e-300)
        if not final and feasible and stalled:
            return state, it, kkt, True
        if info.step_norm == 0.0 and feasible:
            return state, it, kkt, final is False
    return state, max_iter, kkt, False


# ---------------------------------------------------------------------------
# public solvers


def threshold_project(w, p: DccParams | float) -> WeightVector:
    """Zero entries below the cutoff and renormalise the survivors to sum to one."""
    eps = p.eps if isinstance(p, DccParams) else float(p)
    x = np.asarray(w.w if isinstance(w, WeightVector) else w, dtype=float)
    keep = x >= eps
    if not keep.any():
        raise AllBelowCutoff(f"every weight is below the cutoff {eps:g}")
    out = np.where(keep, np.maximum(x, 0.0), 0.0)
    out /= out.sum()
    return WeightVector(out, eps)


def _check_panel(panel: ReturnsPanel):
    X = panel.returns
    if X.ndim != 2 or X.shape[1] < 2:
        raise DegenerateProblem("need at least two assets")
    if np.any(~X.any(axis=0)):
        raise DegenerateProblem("panel has an all-zero return column")


def _start(opts: SolverOptions, n: int) -> np.ndarray:
    if opts.initial_weights is not None:
        w0 = np.asarray(opts.initial_weights.w, dtype=float)
        if w0.size != n:
            raise DomainError(f"initial weights have length {w0.size}, expected {n}")
        return np.maximum(w0, 0.0) / np.maximum(w0, 0.0).sum()
    return np.full(n, 1.0 / n)


def full_replication(panel: ReturnsPanel, opts: SolverOptions = SolverOptions()) -> SolveReport:
    """Long-only, fully invested least-squares fit on every asset."""
    t0 = time.perf_counter()
    _check_panel(panel)
    problem = TrackingProblem(panel.returns, panel.target)
    state = _initial_state(problem, _start(opts, problem.n), opts.hessian)
    state, iters, kkt, ok = _run(problem, state, opts, opts.max_iterations, final=True)
    w = np.maximum(state.w, 0.0)
    w /= w.sum()
    if not ok:
        raise MaxIterationsExceeded(
            f"full replication stopped at KKT residual {kkt:.3g} after {iters} iterations",
            best=w,
        )
    weights = WeightVector(w)
    return SolveReport(
        weights=weights,
        objective=2.0 * problem.objective(w),
        kkt_residual=kkt,
        iterations=iters,
        smooth_cardinality=None,
        exact_cardinality=dcc.cardinality_exact(weights),
        wall_time_seconds=time.perf_counter() - t0,
        method="full",
    )


def continuation_schedule(p: DccParams, opts: SolverOptions) -> list[float]:
    """Steepness values for successive stages, ending at ``p.a``."""
    start = min(p.a, 2.0 * p.K)
    levels = [start]
    while levels[-1] * opts.continuation_factor < p.a:
        levels.append(levels[-1] * opts.continuation_factor)
    if levels[-1] != p.a:
        levels.append(p.a)
    return levels


def _carry_band(w: np.ndarray, a_old: float, a_new: float, eps: float, z_cap: float = 30.0) -> np.ndarray:
    """Warm start for a steeper stage.

    Holdings partway up the sigmoid keep their argument ``a (w - eps)`` so the
    count they contribute (and its gradient) survives the change of ``a``;
    the freed budget goes to the saturated holdings pro rata.
    """
    w = w.copy()
    band = (w >= eps) & (a_old * (w - eps) < z_cap)
    sat = (w >= eps) & ~band
    if not band.any() or not sat.any():
        return w
    moved = eps + (w[band] - eps) * (a_old / a_new)
    freed = float(np.sum(w[band] - moved))
    w[band] = moved
    w[sat] += freed * w[sat] / w[sat].sum()
    return w


def partial_replication_dcc(
    panel: ReturnsPanel, p: DccParams, opts: SolverOptions = SolverOptions()
) -> SolveReport:
    """Fit at most ``p.K`` assets using the smooth count constraint, then threshold."""
    t0 = time.perf_counter()
    _check_panel(panel)
    if p.K < 1:
        raise InfeasibleConstraintConfig("K must be >= 1")
    n = panel.n_assets
    p.require_assets(n)
    if p.variant == "sigmoid":
        report = dcc.check_conditions(n, p)
        if not report.all_satisfied:
            warnings.warn(
                f"a={p.a:g} violates conditions (C0={report.c0}, C1={report.c1}, C2={report.c2}) "
                f"for N={n}, eps={p.eps:g}",
                RuntimeWarning,
                stacklevel=2,
            )
    base = TrackingProblem(panel.returns, panel.target, K=p.K)
    state = _initial_state(base, _start(opts, n), opts.hessian)
    levels = continuation_schedule(p, opts)
    # Zero weights still count (n - K) * b(0); the bound gets just that much
    # headroom, never more than half the feasibility tolerance.
    floor = (n - p.K) * float(expit(-p.a * p.eps)) if p.variant == "sigmoid" else 0.0
    slack = min(0.5 * opts.tol_feasibility, 1.01 * floor)
    # room the zero weights will occupy at the target steepness, if it matters
    budget = max(floor - slack, 0.0)
    total = 0
    prev = None
    for level in levels:
        final = level == levels[-1]
        if prev is not None and budget > 0:
            state = replace(state, w=_carry_band(state.w, prev, level, p.eps))
        if final:
            problem = base.with_count(_Count(level, p.eps, p.variant), slack)
        else:
            problem = base.with_count(_Count(level, p.eps, p.variant, shifted=True), slack - budget)
        state = replace(state, penalty=max(base.curv_scale, 2.0 * state.nu))
        budget_iters = opts.max_iterations if final else opts.stage_iterations
        state, iters, kkt, ok = _run(problem, state, opts, budget_iters, final=final)
        total += iters
        log.debug("stage a=%.4g: %d iterations, kkt %.3g", level, iters, kkt)
        prev = level
    pre = state.w.copy()
    smooth = dcc.cardinality_smooth(pre, p)
    if not ok:
        raise MaxIterationsExceeded(
            f"DCC solve stopped at KKT residual {kkt:.3g} (smooth count {smooth:.6g}, K={p.K})",
            best=pre,
        )
    weights = threshold_project(pre, p)
    exact = dcc.cardinality_exact(weights)
    if exact > p.K:
        raise CardinalityViolated(f"thresholded portfolio holds {exact} > K={p.K} assets")
    return SolveReport(
        weights=weights,
        objective=2.0 * base.objective(weights.w),
        kkt_residual=kkt,
        iterations=total,
        smooth_cardinality=smooth,
        exact_cardinality=exact,
        wall_time_seconds=time.perf_counter() - t0,
        method="dcc",
        pre_threshold=pre,
        params=p,
    )
