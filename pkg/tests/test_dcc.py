import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from dcctrack import dcc
from dcctrack.errors import AssuranceViolated, DomainError, SearchFailed
from dcctrack.model import DccParams, WeightVector

from oracles import error_integral_mp, sigmoid_mp

EPS = 1e-4


# ---------------------------------------------------------------------------
# indicators


@pytest.mark.parametrize("w,expected", [(0.0, 0), (1e-4, 1), (0.5, 1), (9.99e-5, 0)])
def test_b_exact(w, expected):
    assert dcc.b_exact(w, EPS) == expected


@pytest.mark.parametrize("w", [-0.1, 1.5, np.nan])
def test_b_exact_domain(w):
    with pytest.raises(DomainError):
        dcc.b_exact(w, EPS)


def test_b_rational_values():
    assert dcc.b_rational(0.0, 100.0) == 0.0
    for a in (0.3, 7.0, 1e5):
        assert dcc.b_rational(1 / a, a) == pytest.approx(0.5, rel=1e-15)
    assert dcc.b_rational(1.0, 9.0) == pytest.approx(0.9, rel=1e-15)
    with pytest.raises(DomainError):
        dcc.b_rational(-1e-3, 10.0)


def test_b_sigmoid_at_cutoff():
    for a in (1.0, 70.0, 1.4e5, 1e9):
        assert dcc.b_sigmoid(EPS, a, EPS) == 0.5


def test_b_sigmoid_at_zero_matches_high_precision():
    # 1 / (1 + e^0.01) = 0.497500020833...
    assert dcc.b_sigmoid(0.0, 100.0, EPS) == pytest.approx(float(sigmoid_mp(0, 100, EPS)), rel=1e-14)
    assert dcc.b_sigmoid(0.0, 100.0, EPS) == pytest.approx(0.49750002083312506, rel=1e-14)


def test_b_sigmoid_saturates_without_overflow():
    with np.errstate(over="raise"):
        hi = dcc.b_sigmoid(0.5, 1e5, EPS)
        lo = dcc.b_sigmoid(-0.5, 1e6, EPS)
    # the exact values differ from 1 and 0 by about e^-49990
    assert hi == 1.0 and 1 - sigmoid_mp(0.5, 1e5, EPS) < mpmath.mpf(10) ** -20000
    assert lo == 0.0


@given(st.floats(1e-2, 1e6), st.floats(1e-6, 0.49))
def test_indicators_increase_on_grid(a, eps):
    w = np.linspace(0, 1, 2001)
    s = dcc.b_sigmoid(w, a, eps)
    r = dcc.b_rational(w, a)
    assert np.all(np.diff(s) >= 0) and np.all(np.diff(r) >= 0)
    # strict where the working precision can resolve it
    zs = a * (w - eps)
    live = np.abs(zs[:-1]) < 30
    assert np.all(np.diff(s)[live] > 0)


@given(st.floats(0.0, 1.0).filter(lambda w: abs(w - EPS) > 1e-6))
def test_sigmoid_error_shrinks_with_a(w):
    grid = np.geomspace(1.0, 1e5, 25)
    err = np.array([abs(dcc.b_sigmoid(w, a, EPS) - dcc.b_exact(w, EPS)) for a in grid])
    live = err > 1e-300
    assert np.all(np.diff(err[live]) < 0)


# ---------------------------------------------------------------------------
# counts


def test_cardinality_exact_examples():
    assert dcc.cardinality_exact(WeightVector([0.5, 0.5, 0.0])) == 2
    assert dcc.cardinality_exact(WeightVector.uniform(10)) == 10
    assert dcc.cardinality_exact(WeightVector([5e-5, 0.99995])) == 1
    with pytest.raises(TypeError):
        dcc.cardinality_exact(np.array([0.5, 0.5]))
    assert dcc.cardinality_exact(np.array([0.5, 0.5]), eps=EPS) == 2


def test_smooth_count_of_zero_portfolio_high_precision():
    p = DccParams(a=138157.0, K=1)
    got = dcc.cardinality_smooth(np.zeros(100), p)
    assert got == pytest.approx(float(100 * sigmoid_mp(0, 138157, EPS)), rel=1e-12)
    # frozen oracle value; C0 needs it at or below eps
    assert got == pytest.approx(9.998095762870e-05, rel=1e-10)
    assert got <= EPS


def test_rational_count_examples():
    n = 13
    assert dcc.cardinality_smooth(np.zeros(n), DccParams(a=55.0, K=1, variant="rational")) == 0.0
    assert dcc.cardinality_smooth(np.ones(n), DccParams(a=9.0, K=1, variant="rational")) == pytest.approx(0.9 * n)


def _fd(f, w, h=1e-6):
    g = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


@pytest.mark.parametrize("variant", ["sigmoid", "rational"])
def test_gradient_matches_finite_differences_small(variant):
    rng = np.random.default_rng(5)
    p = DccParams(a=50.0, K=1, variant=variant)
    for _ in range(10):
        w = rng.dirichlet(np.ones(5))
        g = dcc.grad_cardinality_smooth(w, p)
        fd = _fd(lambda x: dcc.cardinality_smooth(x, p), w)
        # relative to the largest entry: tails far from eps sit below rounding noise
        assert np.abs(g - fd).max() <= 1e-6 * np.abs(g).max()


def test_gradient_at_cutoff_and_saturation():
    p = DccParams(a=400.0, K=1)
    assert dcc.grad_cardinality_smooth(np.array([EPS]), p)[0] == pytest.approx(100.0, rel=1e-15)
    big = DccParams(a=1e6, K=1)
    g = dcc.grad_cardinality_smooth(np.array([0.5]), big)
    # exact value is about 1e6 * e^-499900, far below the smallest double
    assert g[0] == 0.0


@given(st.integers(2, 40), st.floats(0.1, 1e6), st.integers(0, 10_000))
def test_gradient_strictly_positive_in_band(n, a, seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(n))
    g = dcc.grad_cardinality_smooth(w, DccParams(a=a, K=1))
    assert np.all(g >= 0)
    assert np.all(g[np.abs(a * (w - EPS)) < 30] > 0)


def test_curvature_matches_gradient_differences():
    rng = np.random.default_rng(2)
    for variant in ("sigmoid", "rational"):
        p = DccParams(a=80.0, K=1, variant=variant)
        w = rng.dirichlet(np.ones(6))
        h = 1e-6
        fd = (dcc.grad_cardinality_smooth(w + h, p) - dcc.grad_cardinality_smooth(w - h, p)) / (2 * h)
        np.testing.assert_allclose(dcc.curvature_cardinality_smooth(w, p), fd, rtol=1e-5)


# ---------------------------------------------------------------------------
# error integral and conditions

# frozen from the mpmath oracle in tests/oracles.py (50 digits)
E70 = 0.00995201507960644
E69 = 0.0100955250626341


def test_error_integral_against_high_precision_oracle():
    assert float(error_integral_mp(70, EPS)) == pytest.approx(E70, rel=1e-10)
    assert float(error_integral_mp(69, EPS)) == pytest.approx(E69, rel=1e-10)
    assert dcc.approx_error_integral(70, EPS) == pytest.approx(E70, rel=1e-10)
    assert dcc.approx_error_integral(69, EPS) == pytest.approx(E69, rel=1e-10)
    assert dcc.approx_error_integral(70, EPS) <= 0.01 < dcc.approx_error_integral(69, EPS)


@pytest.mark.parametrize("a", [0.5, 14.0, 70.0, 1e3, 1.38e5, 1e7])
@pytest.mark.parametrize("eps", [1e-4, 1e-2, 0.3])
def test_closed_form_agrees_with_quadrature(a, eps):
    closed = dcc.approx_error_integral(a, eps)
    quad = dcc.approx_error_integral_quadrature(a, eps)
    assert closed == pytest.approx(quad, rel=1e-9)


def test_error_integral_halves_with_doubling():
    grid = np.geomspace(1.0, 1e8, 40)
    e = [dcc.approx_error_integral(a, 0.5 - 1e-9) for a in grid]
    assert all(e2 < e1 for e1, e2 in zip(e, e[1:]))
    assert all(dcc.approx_error_integral(2 * a, EPS) < dcc.approx_error_integral(a, EPS) for a in grid)


def test_error_integral_domain():
    with pytest.raises(DomainError):
        dcc.approx_error_integral(0.0, EPS)
    with pytest.raises(DomainError):
        dcc.approx_error_integral(1.0, 0.5)


def test_conditions_examples():
    r70 = dcc.check_conditions(100, DccParams(a=70.0, K=1))
    assert r70.c2 and not r70.c0
    r14 = dcc.check_conditions(100, DccParams(a=14.0, K=1))
    assert not r14.c2 and not r14.all_satisfied
    assert r14.error_integral == pytest.approx(0.0495, abs=1e-3)
    r = dcc.check_conditions(100, DccParams(a=138157.0, K=1))
    assert r.c0 and r.all_satisfied
    assert r.n_times_e == pytest.approx(100 * r.error_integral)


@given(st.integers(2, 500), st.floats(1e-3, 1e7))
def test_c2_is_the_error_bound(n, a):
    r = dcc.check_conditions(n, DccParams(a=a, K=1))
    assert r.error_integral >= 0
    assert r.c2 == (r.error_integral <= 1 / n)


@pytest.mark.parametrize("n,eps", [(100, 1e-4), (100, 1e-2), (50, 1e-4), (500, 1e-3)])
def test_min_a_matches_closed_form(n, eps):
    a = dcc.min_a_search(n, eps)
    # binding condition C0: n * sigmoid(-a eps) = eps
    assert a == pytest.approx(math.log(n / eps - 1) / eps, rel=2e-6)
    assert dcc.check_conditions(n, DccParams(a=a, K=1, eps=eps)).all_satisfied
    assert not dcc.check_conditions(n, DccParams(a=0.99 * a, K=1, eps=eps)).all_satisfied


def test_min_a_reference_values():
    assert dcc.min_a_search(100, 1e-4) == pytest.approx(138155.1, rel=1e-5)
    assert dcc.min_a_search(100, 1e-2) == pytest.approx(921.0, rel=1e-3)


def test_per_condition_thresholds_at_hundred_assets():
    c0, c1, c2 = dcc.condition_thresholds(100, EPS)
    assert c0 == pytest.approx(138155.1, rel=1e-5)
    assert c1 == pytest.approx(math.log(100 / EPS - 1) / (1 - EPS), rel=1e-5)
    assert 69 < c2 <= 70


def test_search_failure_when_ceiling_too_low(monkeypatch):
    monkeypatch.setattr(dcc, "A_SEARCH_CEILING", 10.0)
    with pytest.raises(SearchFailed):
        dcc.min_a_search(100, EPS)


def test_tolerance_matched_a_counts_zero_weights_as_half_tolerance():
    for n in (8, 60, 200):
        a = dcc.tolerance_matched_a(n, EPS, 1e-8)
        assert n * expit(-a * EPS) == pytest.approx(0.5e-8, rel=1e-6)
        assert dcc.check_conditions(n, DccParams(a=a, K=1)).all_satisfied
    with pytest.raises(DomainError):
        dcc.tolerance_matched_a(1, EPS)


# ---------------------------------------------------------------------------
# error bounds behind the assurance implication


@given(st.integers(0, 64), st.integers(0, 64))
def test_integer_counts_discreteness(c, K):
    assert (c <= K) == (c < K + 1)


@given(st.integers(2, 60), st.floats(10.0, 1e6), st.integers(0, 2**31))
def test_count_gap_bounded_by_pointwise_error(n, a, seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.full(n, 0.3))
    p = DccParams(a=a, K=1)
    pointwise = np.abs(dcc.b_sigmoid(w, a, EPS) - dcc.b_exact(w, EPS))
    gap = abs(dcc.cardinality_exact(w, EPS) - dcc.cardinality_smooth(w, p))
    sup = 0.5  # attained at w = eps
    assert gap <= pointwise.sum() + 1e-12 <= n * sup + 1e-12


def test_mean_pointwise_error_equals_integral():
    a = 500.0
    w = np.linspace(0, 1, 2_000_001)
    err = np.abs(dcc.b_sigmoid(w, a, EPS) - (w >= EPS))
    assert np.trapezoid(err, w) == pytest.approx(dcc.approx_error_integral(a, EPS), rel=1e-4)


# ---------------------------------------------------------------------------
# fuzzing the assurance implication


def test_fuzz_branches_and_counts():
    p = DccParams(a=dcc.min_a_search(20, EPS), K=5)
    r = dcc.assurance_fuzz(20, p, trials=3001, seed=1, raise_on_violation=False)
    assert sum(r.tested.values()) == 3001
    assert set(r.tested) == set(dcc.BRANCHES)


def test_fuzz_requires_error_precondition():
    with pytest.raises(DomainError):
        dcc.assurance_fuzz(50, DccParams(a=10.0, K=5), trials=10, seed=0)


def test_no_violation_away_from_the_cutoff():
    # uniform and sparse draws never land exactly on eps
    n = 50
    p = DccParams(a=dcc.min_a_search(n, EPS), K=10)
    rng = np.random.default_rng(0)
    for branch in ("uniform", "sparse"):
        W = dcc._draw(branch, rng, n, 20_000, EPS)
        smooth = expit(p.a * (W - EPS)).sum(axis=1)
        exact = (W >= EPS).sum(axis=1)
        assert not np.any((smooth <= p.K) & (exact > p.K))


def test_trivial_assurance_cases():
    n, K = 50, 10
    p = DccParams(a=dcc.min_a_search(n, EPS), K=K)
    zero = np.zeros(n)
    assert dcc.cardinality_smooth(zero, p) <= K and dcc.cardinality_exact(zero, EPS) == 0
    w = np.zeros(n)
    w[:K] = 1 / K
    assert dcc.cardinality_exact(w, EPS) == K


def test_weights_on_the_cutoff_break_the_implication():
    # K-3 large holdings plus five parked exactly at eps: each of those counts 1/2
    n, K = 50, 10
    p = DccParams(a=dcc.min_a_search(n, EPS), K=K)
    w = np.zeros(n)
    w[: K - 3] = (1 - 5 * EPS) / (K - 3)
    w[K - 3 : K + 2] = EPS
    assert n * dcc.approx_error_integral(p.a, EPS) < 1
    assert dcc.cardinality_smooth(w, p) <= K
    assert dcc.cardinality_exact(w, EPS) == K + 2


def test_fuzz_raises_with_the_offending_vector():
    n = 30
    p = DccParams(a=dcc.min_a_search(n, EPS), K=8)
    with pytest.raises(AssuranceViolated) as exc:
        dcc.assurance_fuzz(n, p, trials=30_000, seed=0)
    v = exc.value
    assert v.smooth <= v.k < v.exact
    assert np.any(v.w == EPS)
