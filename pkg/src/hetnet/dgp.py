"""Outcome simulation for the heterogeneous endogenous effects models.

Each simulator builds the system matrix ``A`` and solves ``A D = X beta0 + eps``
with a dense LU factorization.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .network import AdjacencyMatrix, MultiNetwork, as_matrix, col_scale

MAX_CONDITION = 1e8


class IllConditionedSystemError(np.linalg.LinAlgError):
    def __init__(self, cond: float):
        super().__init__(f"system matrix condition estimate {cond:.3e} exceeds {MAX_CONDITION:.0e}")
        self.cond = cond


@dataclass(frozen=True)
class StructuralParams:
    """True parameters of a structural model.

    ``eta0`` holds the individual effects (length n).  ``gamma0`` switches on
    the homogeneous spatial-lag term; ``eta0_multi`` (one vector per network)
    replaces ``eta0`` in the multiple-network model.
    """

    eta0: np.ndarray | None
    beta0: np.ndarray
    gamma0: float | None = None
    eta0_multi: tuple | None = None
    sigma: float = 1.0
    error_law: str = "gaussian"

    def __post_init__(self):
        beta0 = np.atleast_1d(np.asarray(self.beta0, dtype=float))
        object.__setattr__(self, "beta0", beta0)
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.error_law not in ("gaussian", "uniform"):
            raise ValueError(f"unknown error law {self.error_law!r}")
        if self.eta0 is not None:
            eta0 = np.asarray(self.eta0, dtype=float).ravel()
            object.__setattr__(self, "eta0", eta0)
            if np.max(np.abs(eta0), initial=0.0) >= 1:
                raise ValueError("||eta0||_inf must be < 1")
            if self.gamma0 is not None and np.max(np.abs(eta0 + self.gamma0), initial=0.0) >= 1:
                raise ValueError("||eta0 + gamma0||_inf must be < 1")
        if self.eta0_multi is not None:
            multi = tuple(np.asarray(e, dtype=float).ravel() for e in self.eta0_multi)
            object.__setattr__(self, "eta0_multi", multi)
            if sum(np.max(np.abs(e), initial=0.0) for e in multi) >= 1:
                raise ValueError("sum_j ||eta0^j||_inf must be < 1")


def draw_design(n: int, k: int, seed: int) -> np.ndarray:
    """n x k matrix of i.i.d. standard normal covariates."""
    if n < 1 or k < 1:
        raise ValueError("n and k must be >= 1")
    return np.random.default_rng(seed).standard_normal((n, k))


def draw_errors(n: int, params: StructuralParams, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if params.error_law == "uniform":
        # variance sigma^2: U(-a, a) has variance a^2 / 3
        a = params.sigma * np.sqrt(3.0)
        return rng.uniform(-a, a, size=n)
    return params.sigma * rng.standard_normal(n)


def solve_system(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """LU solve of ``A x = rhs``; raises when the 1-norm condition estimate
    exceeds ``MAX_CONDITION``."""
    with warnings.catch_warnings():
        # exact singularity is reported below through the condition estimate
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    anorm = np.linalg.norm(A, 1)
    rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if info != 0 or cond > MAX_CONDITION:
        raise IllConditionedSystemError(cond)
    return sla.lu_solve((lu, piv), rhs)


def _covariates(X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows, expected {n}")
    return X


def base_system(M, eta0) -> np.ndarray:
    A = as_matrix(M)
    return np.eye(A.shape[0]) - col_scale(A, eta0)


def cliques_system(M, eta0, gamma0) -> np.ndarray:
    A = as_matrix(M)
    return np.eye(A.shape[0]) - col_scale(A, eta0) - gamma0 * A


def multinet_system(multi: MultiNetwork, etas) -> np.ndarray:
    S = np.eye(multi.n)
    for net, eta in zip(multi.networks, etas):
        S -= col_scale(net, eta)
    return S


def _simulate(system, X, params, seed, return_errors):
    n = system.shape[0]
    X = _covariates(X, n)
    if X.shape[1] != params.beta0.shape[0]:
        raise ValueError("beta0 length must match the number of covariates")
    eps = draw_errors(n, params, seed)
    D = solve_system(system, X @ params.beta0 + eps)
    if return_errors:
        return D, eps
    return D


def simulate_base(M: AdjacencyMatrix, params: StructuralParams, X, seed: int,
                  return_errors: bool = False):
    """Draw ``D = (I - M∘eta0)^{-1} (X beta0 + eps)``."""
    if params.eta0 is None:
        raise ValueError("params.eta0 is required")
    return _simulate(base_system(M, params.eta0), X, params, seed, return_errors)


def simulate_cliques(M: AdjacencyMatrix, params: StructuralParams, X, seed: int,
                     return_errors: bool = False):
    """Draw ``D = (I - M∘eta0 - gamma0 M)^{-1} (X beta0 + eps)``."""
    if params.eta0 is None or params.gamma0 is None:
        raise ValueError("params.eta0 and params.gamma0 are required")
    system = cliques_system(M, params.eta0, params.gamma0)
    return _simulate(system, X, params, seed, return_errors)


def simulate_multinet(multi: MultiNetwork, params: StructuralParams, X, seed: int,
                      return_errors: bool = False):
    """Draw ``D = (I - sum_j M^j∘eta0^j)^{-1} (X beta0 + eps)``."""
    if params.eta0_multi is None or len(params.eta0_multi) != multi.q:
        raise ValueError("params.eta0_multi needs one vector per network")
    system = multinet_system(multi, params.eta0_multi)
    return _simulate(system, X, params, seed, return_errors)


def neumann_series(M, eta0, rhs, terms: int = 50) -> np.ndarray:
    """Truncated series ``sum_{i=0}^{terms} (M∘eta0)^i rhs``."""
    B = col_scale(M, eta0)
    out = np.array(rhs, dtype=float)
    term = out.copy()
    for _ in range(terms):
        term = B @ term
        out += term
    return out
