"""Differentiable cardinality counts and the conditions on the steepness ``a``.

Two surrogates for the 0/1 holding indicator are provided:

* rational:  ``1 - 1/(a w + 1)``, zero at the origin;
* sigmoid:   ``1 / (1 + exp(-a (w - eps)))``, centred on the cutoff ``eps``.

The exact indicator counts a holding once its weight reaches ``eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import expit

from .errors import AssuranceViolated, DomainError, SearchFailed
from .model import ConditionReport, DccParams, WeightVector

A_SEARCH_CEILING = 1e12


def _weights(w) -> np.ndarray:
    return np.asarray(w.w if isinstance(w, WeightVector) else w, dtype=float)


# ---------------------------------------------------------------------------
# per-weight indicators


def b_exact(w, eps: float):
    """1 where ``w >= eps`` and 0 below it."""
    arr = np.asarray(w, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise DomainError("weights must lie in [0, 1]")
    out = (arr >= eps).astype(int)
    return int(out) if out.ndim == 0 else out


def b_rational(w, a: float):
    arr = np.asarray(w, dtype=float)
    if np.any(arr < 0):
        raise DomainError("rational surrogate is only defined for w >= 0")
    out = a * arr / (a * arr + 1.0)
    return float(out) if out.ndim == 0 else out


def b_sigmoid(w, a: float, eps: float):
    # expit never evaluates exp of a large positive argument
    out = expit(a * (np.asarray(w, dtype=float) - eps))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# portfolio counts


def cardinality_exact(w, eps: float | None = None) -> int:
    if eps is None:
        if not isinstance(w, WeightVector):
            raise TypeError("eps is required for raw arrays")
        eps = w.eps
    return int(np.count_nonzero(_weights(w) >= eps))


def cardinality_smooth(w, p: DccParams) -> float:
    x = _weights(w)
    if p.variant == "sigmoid":
        return float(np.sum(b_sigmoid(x, p.a, p.eps)))
    return float(np.sum(b_rational(np.maximum(x, 0.0), p.a)))


def grad_cardinality_smooth(w, p: DccParams) -> np.ndarray:
    """Gradient of :func:`cardinality_smooth`; every entry is positive."""
    x = _weights(w)
    if p.variant == "sigmoid":
        s = expit(p.a * (x - p.eps))
        # 1 - s computed from the mirrored argument keeps precision when s ~ 1
        return p.a * s * expit(-p.a * (x - p.eps))
    return p.a / (p.a * np.maximum(x, 0.0) + 1.0) ** 2


def curvature_cardinality_smooth(w, p: DccParams) -> np.ndarray:
    """Diagonal of the Hessian of :func:`cardinality_smooth`."""
    x = _weights(w)
    if p.variant == "sigmoid":
        s = expit(p.a * (x - p.eps))
        sc = expit(-p.a * (x - p.eps))
        return p.a**2 * s * sc * (sc - s)
    return -2.0 * p.a**2 / (p.a * np.maximum(x, 0.0) + 1.0) ** 3


# ---------------------------------------------------------------------------
# approximation error and conditions on a


def approx_error_integral(a: float, eps: float) -> float:
    """Integral over [0, 1] of |exact indicator - sigmoid surrogate|.

    Closed form: ``(2 ln 2 - ln(1+exp(-a eps)) - ln(1+exp(-a(1-eps)))) / a``.
    """
    if not a > 0:
        raise DomainError(f"a must be positive, got {a}")
    if not 0.0 < eps < 0.5:
        raise DomainError(f"eps must lie in (0, 0.5), got {eps}")
    tail = math.log1p(math.exp(-a * eps)) + math.log1p(math.exp(-a * (1.0 - eps)))
    return (2.0 * math.log(2.0) - tail) / a


def approx_error_integral_quadrature(a: float, eps: float) -> float:
    """Adaptive Gauss-Kronrod evaluation of the same integral (cross-check)."""
    if not a > 0:
        raise DomainError(f"a must be positive, got {a}")

    def below(w):
        return expit(a * (w - eps))

    def above(w):
        return expit(-a * (w - eps))

    # the integrand lives within a few multiples of 1/a around eps
    width = 60.0 / a
    total = 0.0
    lo_break = max(0.0, eps - width)
    for lo, hi in ((0.0, lo_break), (lo_break, eps)):
        if hi > lo:
            total += integrate.quad(below, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    hi_break = min(1.0, eps + width)
    for lo, hi in ((eps, hi_break), (hi_break, 1.0)):
        if hi > lo:
            total += integrate.quad(above, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return total


def _c0(n: int, a: float, eps: float, tol: float) -> bool:
    # all-zero portfolio must count as (almost) nothing
    return n * expit(-a * eps) <= eps + tol


def _c1(n: int, a: float, eps: float, tol: float) -> bool:
    # all-one portfolio must count as (almost) n; n - n*s written as n*(1 - s)
    return n * expit(-a * (1.0 - eps)) <= eps + tol


def _c2(n: int, a: float, eps: float, tol: float) -> bool:
    return approx_error_integral(a, eps) <= 1.0 / n + tol


_CONDITIONS = (_c0, _c1, _c2)


def check_conditions(n: int, p: DccParams, tol: float = 0.0) -> ConditionReport:
    if n < 2:
        raise DomainError("need at least two assets")
    e = approx_error_integral(p.a, p.eps)
    return ConditionReport(
        c0=_c0(n, p.a, p.eps, tol),
        c1=_c1(n, p.a, p.eps, tol),
        c2=_c2(n, p.a, p.eps, tol),
        error_integral=e,
        n_times_e=n * e,
    )


def condition_thresholds(n: int, eps: float, rel_width: float = 1e-6) -> tuple[float, float, float]:
    """Smallest a satisfying each of C0, C1, C2 separately."""
    if n < 2 or not 0.0 < eps < 0.5:
        raise DomainError("need n >= 2 and eps in (0, 0.5)")
    out = []
    for cond in _CONDITIONS:

        def ok(a, cond=cond):
            return cond(n, a, eps, 0.0)

        hi = 1.0
        while not ok(hi):
            hi *= 2.0
            if hi > A_SEARCH_CEILING:
                raise SearchFailed(f"{cond.__name__[1:]} unsatisfiable for a <= {A_SEARCH_CEILING:g}")
        lo = hi / 2.0
        if ok(lo):
            # satisfied all the way down; walk towards zero
            while ok(lo) and lo > 1e-12:
                hi, lo = lo, lo / 2.0
        while hi - lo > rel_width * hi:
            mid = 0.5 * (lo + hi)
            if ok(mid):
                hi = mid
            else:
                lo = mid
        out.append(hi)
    return tuple(out)


def min_a_search(n: int, eps: float) -> float:
    """Smallest steepness satisfying C0, C1 and C2 together."""
    return max(condition_thresholds(n, eps))


def tolerance_matched_a(n: int, eps: float, tol: float = 1e-8) -> float:
    """Steepness at which ``n`` zero weights together count exactly ``tol / 2``.

    Below this value the count of an all-but-K-zero portfolio exceeds K by more
    than the solver's feasibility tolerance; far above it the multiplier that
    keeps a zero weight at zero grows like ``exp(a eps)``.
    """
    if n < 2 or not 0.0 < eps < 0.5 or not 0.0 < tol < 1.0:
        raise DomainError("need n >= 2, eps in (0, 0.5) and tol in (0, 1)")
    return math.log(2.0 * n / tol - 1.0) / eps


# ---------------------------------------------------------------------------
# empirical check of the assurance implication

BRANCHES = ("uniform", "sparse", "boundary")


@dataclass
class FuzzReport:
    trials: int
    tested: dict = field(default_factory=dict)
    antecedent_true: dict = field(default_factory=dict)
    violations: dict = field(default_factory=dict)
    counterexample: np.ndarray | None = None

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())


def _draw(branch: str, rng: np.random.Generator, n: int, m: int, eps: float) -> np.ndarray:
    if branch == "uniform":
        return rng.dirichlet(np.ones(n), size=m)
    W = np.zeros((m, n))
    sizes = rng.integers(1, n + 1, size=m)
    for row, s in enumerate(sizes):
        cols = rng.choice(n, size=s, replace=False)
        W[row, cols] = rng.dirichlet(np.ones(s))
        if branch == "boundary" and s < n:
            # park some holdings exactly on the cutoff, rest keeps the budget
            k_at = int(rng.integers(1, max(2, (n - s) // 2 + 1)))
            k_at = min(k_at, n - s)
            free = np.setdiff1d(np.arange(n), cols)
            at = rng.choice(free, size=k_at, replace=False)
            W[row, cols] *= 1.0 - k_at * eps
            W[row, at] = eps
    return W


def assurance_fuzz(
    n: int,
    p: DccParams,
    trials: int,
    seed: int,
    raise_on_violation: bool = True,
    batch: int = 5000,
) -> FuzzReport:
    """Search random portfolios for ``smooth <= K`` while ``exact > K``.

    Trials are split evenly across :data:`BRANCHES`. Requires ``n * e < 1``.
    """
    e = approx_error_integral(p.a, p.eps)
    if not n * e < 1.0:
        raise DomainError(f"precondition N*e < 1 fails: N*e = {n * e:.4g}")
    if p.variant != "sigmoid":
        raise DomainError("assurance is stated for the sigmoid surrogate")
    rng = np.random.default_rng(seed)
    report = FuzzReport(trials=trials)
    per = [trials // len(BRANCHES)] * len(BRANCHES)
    per[0] += trials - sum(per)
    for branch, count in zip(BRANCHES, per):
        report.tested[branch] = 0
        report.antecedent_true[branch] = 0
        report.violations[branch] = 0
        done = 0
        while done < count:
            m = min(batch, count - done)
            W = _draw(branch, rng, n, m, p.eps)
            smooth = expit(p.a * (W - p.eps)).sum(axis=1)
            exact = (W >= p.eps).sum(axis=1)
            ante = smooth <= p.K
            bad = ante & (exact > p.K)
            report.tested[branch] += m
            report.antecedent_true[branch] += int(ante.sum())
            report.violations[branch] += int(bad.sum())
            if bad.any() and report.counterexample is None:
                i = int(np.flatnonzero(bad)[0])
                report.counterexample = W[i].copy()
                if raise_on_violation:
                    raise AssuranceViolated(W[i].copy(), float(smooth[i]), int(exact[i]), p.K)
            done += m
    return report
