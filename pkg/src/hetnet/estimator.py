"""Two-stage LASSO (2SLSS) estimators.

Stage one fits E(D) on the constructed instruments ``M ∘ X``; stage two
replaces D inside the network term by the stage-one fit ``D_hat`` and runs a
LASSO (or sparse group LASSO for several networks) of D on ``[X | M ∘ D_hat]``.
``X`` is never penalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import lasso_core as lc
from .network import MultiNetwork, as_matrix, check_instrument_rank, col_scale


@dataclass(frozen=True)
class TuningPolicy:
    """Tuning for both stages.

    ``first_stage_c`` and ``second_stage_c`` scale the benchmark rate
    ``sqrt((log n + log q) / n)``.  With ``second_stage="cv"`` the second-stage
    level is chosen by ``cv_folds``-fold cross-validation over a geometric
    path of ``n_lambdas`` values from the stage's lambda_max down to
    ``lambda_ratio * lambda_max``.
    """

    first_stage_c: float = 2.0
    second_stage: str = "cv"
    second_stage_c: float = 2.0
    cv_folds: int = 10
    n_lambdas: int = 30
    lambda_ratio: float = 0.01
    cv_seed: int = 0
    k_powers: int = 2
    penalize_gamma: bool = True
    solver: lc.SolverConfig = field(default_factory=lambda: lc.SolverConfig(standardize=True))

    def __post_init__(self):
        if self.second_stage not in ("cv", "benchmark"):
            raise ValueError("second_stage must be 'cv' or 'benchmark'")
        if self.k_powers < 1:
            raise ValueError("k_powers must be >= 1")


@dataclass
class FitResult:
    """Estimates from a two-stage fit.

    ``eta_hat`` has length n (n * q for several networks, network-major).
    ``selected_set`` lists indices with a nonzero ``eta_hat``.
    """

    beta_hat: np.ndarray
    eta_hat: np.ndarray
    d_hat: np.ndarray
    lambdas: dict
    gamma_hat: float | None = None
    stage_diagnostics: dict = field(default_factory=dict)
    n_networks: int = 1
    labels: tuple = ()
    first_stage_coef: np.ndarray | None = None

    @property
    def selected_set(self) -> np.ndarray:
        return np.flatnonzero(self.eta_hat != 0)

    def eta_blocks(self) -> list:
        n = self.eta_hat.shape[0] // self.n_networks
        return [self.eta_hat[j * n:(j + 1) * n] for j in range(self.n_networks)]

    def selected_by_network(self) -> list:
        return [np.flatnonzero(b != 0) for b in self.eta_blocks()]


def _covariates(X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows, expected {n}")
    return X


def build_instruments(M, X) -> np.ndarray:
    """Stacked ``[M ∘ X_1 | ... | M ∘ X_k]`` (n x n*k)."""
    A = as_matrix(M)
    X = _covariates(X, A.shape[0])
    return np.hstack([col_scale(A, X[:, c]) for c in range(X.shape[1])])


def _penalized_fit(Z, y, mask, lam, config, groups=None, lam_group=0.0):
    problem = lc.PenalizedProblem(Z, y, mask, groups=groups, lambda_l1=lam,
                                  lambda_group=lam_group)
    if groups is not None:
        res = lc.sparse_group_lasso_solve(problem, config)
    else:
        res = lc.lasso_solve(problem, config)
    return res


def _scaled_lambda_max(Z, y, mask, config):
    problem = lc.PenalizedProblem(Z, y, mask)
    if config.standardize:
        scale = lc.column_scales(Z, mask)
        problem = replace(problem, design=Z / scale)
    return lc.lambda_max(problem)


def _second_stage_lambda(Z, y, mask, n, q, tuning, groups=None):
    if tuning.second_stage == "benchmark":
        return lc.benchmark_lambda(n, q, tuning.second_stage_c), "benchmark"
    lmax = _scaled_lambda_max(Z, y, mask, tuning.solver)
    if lmax <= 0:
        return 0.0, "cv"
    path = lc.lambda_path(lmax, tuning.n_lambdas, tuning.lambda_ratio)
    problem = lc.PenalizedProblem(Z, y, mask, groups=groups, lambda_l1=float(path[0]),
                                  lambda_group=float(path[0]) if groups is not None else 0.0)
    folds = min(tuning.cv_folds, n)
    lam = lc.cv_select_lambda(problem, folds, path, tuning.cv_seed, tuning.solver,
                              tie_lambda_group=groups is not None)
    return lam, "cv"


def first_stage(D, X, M, lambda1: float, config: lc.SolverConfig | None = None):
    """LASSO of D on ``[X | M ∘ X]`` with only the instrument block penalized.

    Returns ``(beta_tilde, eta_tilde, D_hat)``.
    """
    if lambda1 < 0:
        raise ValueError("lambda1 must be nonnegative")
    config = config or lc.SolverConfig(standardize=True)
    D = np.asarray(D, dtype=float).ravel()
    X = _covariates(X, D.shape[0])
    k = X.shape[1]
    Z = np.hstack([X, build_instruments(M, X)])
    mask = np.r_[np.zeros(k, bool), np.ones(Z.shape[1] - k, bool)]
    res = _penalized_fit(Z, D, mask, lambda1, config)
    return res.coef[:k], res.coef[k:], Z @ res.coef


def second_stage(D, X, M, D_hat, lam: float, config: lc.SolverConfig | None = None,
                 lambdas: dict | None = None) -> FitResult:
    """LASSO of D on ``[X | M ∘ D_hat]``."""
    config = config or lc.SolverConfig(standardize=True)
    D = np.asarray(D, dtype=float).ravel()
    X = _covariates(X, D.shape[0])
    k = X.shape[1]
    Z = np.hstack([X, col_scale(M, D_hat)])
    mask = np.r_[np.zeros(k, bool), np.ones(Z.shape[1] - k, bool)]
    res = _penalized_fit(Z, D, mask, lam, config)
    record = dict(lambdas or {})
    record["second_stage"] = float(lam)
    return FitResult(
        beta_hat=res.coef[:k].copy(),
        eta_hat=res.coef[k:].copy(),
        d_hat=np.asarray(D_hat, dtype=float).copy(),
        lambdas=record,
        stage_diagnostics={"second_stage_kkt": res.kkt, "second_stage_sweeps": res.n_sweeps,
                           "isolated": as_matrix(M).sum(axis=0) == 0},
    )


def fit_2slss(D, X, M, tuning: TuningPolicy | None = None) -> FitResult:
    """Two-stage LASSO for the single-network model.

    Stage one uses the benchmark level; stage two uses cross-validation or
    the benchmark level according to ``tuning``.
    """
    tuning = tuning or TuningPolicy()
    D = np.asarray(D, dtype=float).ravel()
    n = D.shape[0]
    X = _covariates(X, n)
    lam1 = lc.benchmark_lambda(n, 1, tuning.first_stage_c)
    beta_t, eta_t, D_hat = first_stage(D, X, M, lam1, tuning.solver)
    k = X.shape[1]
    Z = np.hstack([X, col_scale(M, D_hat)])
    mask = np.r_[np.zeros(k, bool), np.ones(n, bool)]
    lam, rule = _second_stage_lambda(Z, D, mask, n, 1, tuning)
    fit = second_stage(D, X, M, D_hat, lam, tuning.solver,
                       lambdas={"first_stage": lam1, "second_stage_rule": rule})
    fit.first_stage_coef = np.r_[beta_t, eta_t]
    return fit


def _matrix_powers(A, k):
    out = [np.eye(A.shape[0])]
    for _ in range(k):
        out.append(out[-1] @ A)
    return out


def fit_2slss_cliques(D, X, M, k_powers: int | None = None,
                      tuning: TuningPolicy | None = None) -> FitResult:
    """Two-stage LASSO with an extra homogeneous spatial-lag term.

    Stage one regresses D on ``[X | M^i X (i=1..k) | M^i (M ∘ X) (i=0..k)]``;
    stage two on ``[X | M D_hat | M ∘ D_hat]``.  ``gamma_hat`` is the
    coefficient on ``M D_hat`` and shares the second-stage penalty unless
    ``tuning.penalize_gamma`` is off.
    """
    tuning = tuning or TuningPolicy()
    k_powers = tuning.k_powers if k_powers is None else k_powers
    if k_powers < 1:
        raise ValueError("k_powers must be >= 1")
    D = np.asarray(D, dtype=float).ravel()
    n = D.shape[0]
    X = _covariates(X, n)
    k = X.shape[1]
    A = as_matrix(M)
    powers = _matrix_powers(A, k_powers)
    inst = build_instruments(A, X)
    blocks = [X] + [powers[i] @ X for i in range(1, k_powers + 1)]
    blocks += [powers[i] @ inst for i in range(k_powers + 1)]
    Z1 = np.hstack(blocks)
    mask1 = np.r_[np.zeros(k, bool), np.ones(Z1.shape[1] - k, bool)]
    lag_cols = np.column_stack([powers[i] @ X for i in range(1, k_powers + 1)])
    if np.linalg.matrix_rank(lag_cols) < lag_cols.shape[1]:
        warnings.warn("powers of M X are collinear; the first stage is poorly identified",
                      RuntimeWarning, stacklevel=2)
    lam1 = lc.benchmark_lambda(n, 1, tuning.first_stage_c)
    res1 = _penalized_fit(Z1, D, mask1, lam1, tuning.solver)
    D_hat = Z1 @ res1.coef
    Z2 = np.hstack([X, (A @ D_hat)[:, np.newaxis], col_scale(A, D_hat)])
    mask2 = np.r_[np.zeros(k, bool), [tuning.penalize_gamma], np.ones(n, bool)]
    lam, rule = _second_stage_lambda(Z2, D, mask2, n, 1, tuning)
    res2 = _penalized_fit(Z2, D, mask2, lam, tuning.solver)
    return FitResult(
        beta_hat=res2.coef[:k].copy(),
        eta_hat=res2.coef[k + 1:].copy(),
        gamma_hat=float(res2.coef[k]),
        d_hat=D_hat,
        lambdas={"first_stage": lam1, "second_stage": lam, "second_stage_rule": rule,
                 "k_powers": k_powers},
        stage_diagnostics={"first_stage_kkt": res1.kkt, "second_stage_kkt": res2.kkt,
                           "second_stage_sweeps": res2.n_sweeps,
                           "isolated": A.sum(axis=0) == 0},
        first_stage_coef=res1.coef,
    )


def _multi_design(multi: MultiNetwork, v):
    return np.hstack([col_scale(net, v) for net in multi.networks])


def fit_2slss_multinet(D, X, multi: MultiNetwork, tuning: TuningPolicy | None = None,
                       lambda_group_ratio: float = 1.0) -> FitResult:
    """Two-stage sparse group LASSO, one group per network.

    Both penalties use the same level times ``lambda_group_ratio`` for the
    group term (1 by default: equal tuning).  A ratio of 0 reduces both
    stages to the plain LASSO.
    """
    tuning = tuning or TuningPolicy()
    D = np.asarray(D, dtype=float).ravel()
    n = D.shape[0]
    X = _covariates(X, n)
    k = X.shape[1]
    q = multi.q
    inst = np.hstack([build_instruments(net, X) for net in multi.networks])
    Z1 = np.hstack([X, inst])
    mask1 = np.r_[np.zeros(k, bool), np.ones(Z1.shape[1] - k, bool)]
    # one group per network; with k covariates a network owns k*n columns
    groups1 = np.r_[np.full(k, -1), np.repeat(np.arange(q), n * k)]
    lam1 = lc.benchmark_lambda(n, q, tuning.first_stage_c)
    res1 = _penalized_fit(Z1, D, mask1, lam1, tuning.solver, groups=groups1,
                          lam_group=lambda_group_ratio * lam1)
    D_hat = Z1 @ res1.coef
    Z2 = np.hstack([X, _multi_design(multi, D_hat)])
    mask2 = np.r_[np.zeros(k, bool), np.ones(n * q, bool)]
    groups2 = np.r_[np.full(k, -1), np.repeat(np.arange(q), n)]
    if tuning.second_stage == "benchmark":
        lam, rule = lc.benchmark_lambda(n, q, tuning.second_stage_c), "benchmark"
    else:
        lam, rule = _multinet_cv(Z2, D, mask2, groups2, n, tuning, lambda_group_ratio)
    res2 = _penalized_fit(Z2, D, mask2, lam, tuning.solver, groups=groups2,
                          lam_group=lambda_group_ratio * lam)
    isolated = np.concatenate([as_matrix(net).sum(axis=0) == 0 for net in multi.networks])
    return FitResult(
        beta_hat=res2.coef[:k].copy(),
        eta_hat=res2.coef[k:].copy(),
        d_hat=D_hat,
        lambdas={"first_stage": lam1, "first_stage_group": lambda_group_ratio * lam1,
                 "second_stage": lam, "second_stage_group": lambda_group_ratio * lam,
                 "second_stage_rule": rule},
        stage_diagnostics={"first_stage_kkt": res1.kkt, "second_stage_kkt": res2.kkt,
                           "second_stage_sweeps": res2.n_sweeps, "isolated": isolated},
        n_networks=q,
        labels=multi.labels,
        first_stage_coef=res1.coef,
    )


def _multinet_cv(Z, y, mask, groups, n, tuning, ratio):
    lmax = _scaled_lambda_max(Z, y, mask, tuning.solver)
    if lmax <= 0:
        return 0.0, "cv"
    path = lc.lambda_path(lmax, tuning.n_lambdas, tuning.lambda_ratio)
    folds = min(tuning.cv_folds, n)
    problem = lc.PenalizedProblem(Z, y, mask, groups=groups, lambda_l1=float(path[0]),
                                  lambda_group=ratio * float(path[0]))
    lam = lc.cv_select_lambda(problem, folds, path, tuning.cv_seed, tuning.solver,
                              tie_lambda_group=True, group_ratio=ratio)
    return lam, "cv"


def oracle_2sls(D, X, M, S):
    """Known-support 2SLS: regressors ``[X, (M∘D)_S]``, instruments ``[X, (M∘X)_S]``.

    Returns ``(beta, eta_S)``.
    """
    D = np.asarray(D, dtype=float).ravel()
    n = D.shape[0]
    X = _covariates(X, n)
    k = X.shape[1]
    S = np.asarray(sorted(set(int(s) for s in S)), dtype=int)
    if S.size == 0:
        beta, *_ = np.linalg.lstsq(X, D, rcond=None)
        return beta, np.zeros(0)
    full_rank, smin = check_instrument_rank(M, X, S)
    if not full_rank:
        raise np.linalg.LinAlgError(
            f"instruments for S are rank deficient (smallest singular value {smin:.3e})")
    A = as_matrix(M)
    H = np.hstack([X, build_instruments(A, X)[:, np.concatenate([S + c * n for c in range(k)])]])
    R = np.hstack([X, col_scale(A, D)[:, S]])
    # first stage projection, then OLS on the fitted regressors
    proj, *_ = np.linalg.lstsq(H, R, rcond=None)
    R_hat = H @ proj
    coef = np.linalg.solve(R_hat.T @ R, R_hat.T @ D)
    return coef[:k], coef[k:]
