"""Reference computations that share no code with the package under test."""

from __future__ import annotations

import itertools

import mpmath
import numpy as np

mpmath.mp.dps = 50


def sigmoid_mp(w, a, eps):
    return 1 / (1 + mpmath.exp(-mpmath.mpf(a) * (mpmath.mpf(w) - mpmath.mpf(eps))))


def error_integral_mp(a, eps):
    """Integral of |[w >= eps] - sigmoid| over [0, 1], split where the integrand kinks."""
    a, eps = mpmath.mpf(a), mpmath.mpf(eps)
    below = mpmath.quad(lambda w: 1 / (1 + mpmath.exp(-a * (w - eps))), [0, eps])
    pts = [eps] + [eps + k / a for k in (1, 5, 20, 60) if eps + k / a < 1] + [1]
    above = mpmath.quad(lambda w: 1 / (1 + mpmath.exp(a * (w - eps))), pts)
    return below + above


def simplex_ls_exact(X, y):
    """Minimise ``|Xw - y|^2`` on the simplex by enumerating supports.

    For each support the equality-constrained problem is a linear KKT system;
    the best nonnegative solution over all supports is the global optimum.
    Exponential in N, so only for N <= 12 or so.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[1]
    G, b = X.T @ X, X.T @ y
    best_w, best_f = None, np.inf
    for size in range(1, n + 1):
        for S in itertools.combinations(range(n), size):
            S = list(S)
            m = len(S)
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = 2 * G[np.ix_(S, S)]
            A[:m, m] = 1.0
            A[m, :m] = 1.0
            rhs = np.concatenate([2 * b[S], [1.0]])
            try:
                sol = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                continue
            wS = sol[:m]
            if wS.min() < -1e-12:
                continue
            w = np.zeros(n)
            w[S] = np.maximum(wS, 0.0)
            w /= w.sum()
            r = X @ w - y
            f = float(r @ r)
            if f < best_f:
                best_w, best_f = w, f
    return best_w, best_f


def project_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - 1)[0][-1]
    theta = (css[rho] - 1) / (rho + 1)
    return np.maximum(v - theta, 0.0)


def projected_gradient(X, y, iters=200_000, tol=1e-15):
    """Accelerated projected gradient (FISTA) on the simplex."""
    G, b = X.T @ X, X.T @ y
    L = np.linalg.eigvalsh(G).max()
    n = X.shape[1]
    w = np.full(n, 1.0 / n)
    z, t = w.copy(), 1.0
    f_old = np.inf
    for _ in range(iters):
        w_new = project_simplex(z - (G @ z - b) / L)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = w_new + ((t - 1) / t_new) * (w_new - w)
        w, t = w_new, t_new
        r = X @ w - y
        f = float(r @ r)
        if abs(f_old - f) <= tol * max(f, 1e-300):
            break
        f_old = f
    return w, float((X @ w - y) @ (X @ w - y))


def greedy_forward(X, y, K):
    n = X.shape[1]
    chosen = []
    for _ in range(K):
        w, _ = simplex_ls_exact(X, y)
        w = np.where(w <= 1e-8, 0.0, w)
        rest = [i for i in range(n) if i not in chosen]
        chosen.append(sorted(rest, key=lambda i: (-w[i], i))[0])
    w = np.zeros(n)
    sub, _ = simplex_ls_exact(X[:, sorted(chosen)], y)
    w[sorted(chosen)] = sub
    return sorted(chosen), w


def greedy_backward(X, y, K):
    active = list(range(X.shape[1]))
    while len(active) > K:
        sub, _ = simplex_ls_exact(X[:, active], y)
        sub = np.where(sub <= 1e-8, 0.0, sub)
        # lightest goes; among equals the higher index
        order = sorted(range(len(active)), key=lambda k: (sub[k], -active[k]))
        active.pop(order[0])
    w = np.zeros(X.shape[1])
    w[active], _ = simplex_ls_exact(X[:, active], y)
    return active, w


def best_subset_objective(X, y, K):
    best = np.inf
    for S in itertools.combinations(range(X.shape[1]), K):
        best = min(best, simplex_ls_exact(X[:, list(S)], y)[1])
    return best
