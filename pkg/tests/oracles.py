"""Independent reference implementations used as test oracles.

None of these import the package's numerical code; they are written from
the defining formulas with plain loops or a different algorithm.
"""

from __future__ import annotations

import itertools
from statistics import NormalDist

import numpy as np


def composite_prox(v, step, pen, groups, lam1, lamg):
    """Exact prox of ``step * (lam1 ||v_pen||_1 + lamg sum_g ||v_g||_2)``."""
    out = v.copy()
    out[pen] = np.sign(v[pen]) * np.maximum(np.abs(v[pen]) - step * lam1, 0.0)
    if groups is not None and lamg > 0:
        for g in np.unique(groups[groups >= 0]):
            idx = groups == g
            nrm = np.linalg.norm(out[idx])
            out[idx] = 0.0 if nrm <= step * lamg else out[idx] * (1 - step * lamg / nrm)
    return out


def proximal_gradient(Z, y, pen, lam1, groups=None, lamg=0.0, max_iter=200_000, tol=1e-13):
    """FISTA with adaptive restart on ``(1/2n)||y - Z t||^2 + penalties``."""
    n, p = Z.shape
    G = Z.T @ Z / n
    c = Z.T @ y / n
    L = max(np.linalg.eigvalsh(G)[-1], 1e-12)
    step = 1.0 / L
    x = np.zeros(p)
    z = x.copy()
    t = 1.0
    for _ in range(max_iter):
        x_new = composite_prox(z - step * (G @ z - c), step, pen, groups, lam1, lamg)
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        if (z - x_new) @ (x_new - x) > 0:
            # gradient-based restart keeps the iteration monotone in practice
            t_new = 1.0
            z = x_new.copy()
        else:
            z = x_new + (t - 1) / t_new * (x_new - x)
        x, t = x_new, t_new
    return x


def bh_bruteforce(p, q):
    """Largest k with #{p_i <= k q / m} >= k; reject every p_i <= k q / m."""
    p = list(p)
    m = len(p)
    for k in range(m, 0, -1):
        cut = k * q / m
        if sum(1 for v in p if v <= cut) >= k:
            return sorted(i for i, v in enumerate(p) if v <= cut)
    return []


def instruments_loops(M, X):
    M = np.asarray(M, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    out = np.zeros((n, n * k))
    for c in range(k):
        for i in range(n):
            for j in range(n):
                out[i, c * n + j] = M[i, j] * X[j, c]
    return out


def col_scale_loops(M, v):
    M = np.asarray(M, dtype=float)
    n, m = M.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = M[i, j] * v[j]
    return out


def gauss_solve(A, b):
    """Gaussian elimination with partial pivoting, written out by hand."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    n = A.shape[0]
    for col in range(n):
        piv = col + int(np.argmax(np.abs(A[col:, col])))
        A[[col, piv]] = A[[piv, col]]
        b[[col, piv]] = b[[piv, col]]
        for row in range(col + 1, n):
            f = A[row, col] / A[col, col]
            A[row, col:] -= f * A[col, col:]
            b[row] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - A[row, row + 1:] @ x[row + 1:]) / A[row, row]
    return x


def neumann_loops(B, rhs, terms=50):
    out = np.array(rhs, dtype=float)
    term = out.copy()
    for _ in range(terms):
        term = B @ term
        out = out + term
    return out


def irrepresentable_bruteforce(M, X, S, eta0, beta0):
    """Enumerate every sign vertex u in {-1, 1}^|S|."""
    M = np.asarray(M, dtype=float)
    X = np.asarray(X, dtype=float).reshape(M.shape[0], -1)
    n = M.shape[0]
    S = sorted(S)
    Sc = [i for i in range(n) if i not in S]
    A = np.eye(n) - M * np.asarray(eta0)[None, :]
    f = gauss_solve(A, X @ np.atleast_1d(beta0))
    W = np.eye(n) - X @ np.linalg.inv(X.T @ X) @ X.T
    sigma = M.T @ W @ M / n
    s11 = sigma[np.ix_(S, S)]
    s21 = sigma[np.ix_(Sc, S)]
    K = np.diag(f[Sc]) @ s21 @ np.linalg.inv(s11) @ np.diag(1 / f[S])
    best = 0.0
    for signs in itertools.product((-1.0, 1.0), repeat=len(S)):
        best = max(best, float(np.max(np.abs(K @ np.array(signs)))))
    return best


def normal_interval(e, se, level):
    z = NormalDist().inv_cdf(0.5 + level / 2)
    return e - z * se, e + z * se


def normal_two_sided_p(zstat):
    return 2 * (1 - NormalDist().cdf(abs(zstat)))


def kkt_violation(Z, y, theta, pen, lam1, groups=None, lamg=0.0):
    """Subgradient optimality violation, written coordinate by coordinate."""
    n, p = Z.shape
    g = Z.T @ (y - Z @ theta) / n
    viol = 0.0
    grouped = set()
    if groups is not None and lamg > 0:
        for lab in np.unique(groups[groups >= 0]):
            idx = np.flatnonzero(groups == lab)
            grouped.update(idx.tolist())
            th = theta[idx]
            nrm = np.linalg.norm(th)
            if nrm == 0:
                st = np.sign(g[idx]) * np.maximum(np.abs(g[idx]) - lam1, 0)
                viol = max(viol, np.linalg.norm(st) - lamg)
                continue
            for a, j in enumerate(idx):
                if th[a] != 0:
                    viol = max(viol, abs(g[j] - lam1 * np.sign(th[a]) - lamg * th[a] / nrm))
                else:
                    viol = max(viol, abs(g[j]) - lam1)
    for j in range(p):
        if j in grouped:
            continue
        if not pen[j]:
            viol = max(viol, abs(g[j]))
        elif theta[j] != 0:
            viol = max(viol, abs(g[j] - lam1 * np.sign(theta[j])))
        else:
            viol = max(viol, abs(g[j]) - lam1)
    return max(viol, 0.0)
