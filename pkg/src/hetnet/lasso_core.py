"""Penalized least-squares solvers shared by both estimation stages.

Every solver minimizes

    (1/(2n)) ||y - Z theta||_2^2 + lambda_group * sum_g ||theta_g||_2
                                 + lambda_l1 * ||theta_penalized||_1

Columns outside ``penalty_mask`` (the covariate block ``X``) are never shrunk.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Raised when a solver exhausts its sweep budget.

    The attained KKT residual is attached as ``kkt``.
    """

    def __init__(self, message: str, kkt: float, coef: np.ndarray | None = None):
        super().__init__(f"{message} (attained KKT residual {kkt:.3e})")
        self.kkt = kkt
        self.coef = coef


@dataclass(frozen=True)
class PenalizedProblem:
    """Data and tuning for one penalized least-squares fit.

    Parameters
    ----------
    design : ndarray, shape (n, p)
    response : ndarray, shape (n,)
    penalty_mask : ndarray of bool, shape (p,)
        True for L1-penalized columns.
    groups : ndarray of int, shape (p,), optional
        Group label per column, ``-1`` for columns outside every group.
        Only penalized columns may carry a label.
    lambda_l1, lambda_group : float
    """

    design: np.ndarray
    response: np.ndarray
    penalty_mask: np.ndarray
    groups: np.ndarray | None = None
    lambda_l1: float = 0.0
    lambda_group: float = 0.0

    def __post_init__(self):
        Z = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float).ravel()
        mask = np.asarray(self.penalty_mask, dtype=bool).ravel()
        if Z.ndim != 2:
            raise ValueError("design must be a 2-d array")
        if Z.shape[0] != y.shape[0]:
            raise ValueError(
                f"design has {Z.shape[0]} rows but response has length {y.shape[0]}"
            )
        if mask.shape[0] != Z.shape[1]:
            raise ValueError("penalty_mask length must equal the number of columns")
        if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(y))):
            raise ValueError("design and response must be finite")
        if self.lambda_l1 < 0 or self.lambda_group < 0:
            raise ValueError("penalty levels must be nonnegative")
        if not (math.isfinite(self.lambda_l1) and math.isfinite(self.lambda_group)):
            raise ValueError("penalty levels must be finite")
        groups = None
        if self.groups is not None:
            groups = np.asarray(self.groups, dtype=np.int64).ravel()
            if groups.shape[0] != Z.shape[1]:
                raise ValueError("groups length must equal the number of columns")
            if np.any((groups >= 0) & ~mask):
                raise ValueError("unpenalized columns cannot belong to a group")
        object.__setattr__(self, "design", Z)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "penalty_mask", mask)
        object.__setattr__(self, "groups", groups)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @property
    def has_groups(self) -> bool:
        return self.groups is not None and bool(np.any(self.groups >= 0))

    def with_lambda(self, lambda_l1: float, lambda_group: float | None = None):
        if lambda_group is None:
            lambda_group = self.lambda_group
        return replace(self, lambda_l1=float(lambda_l1), lambda_group=float(lambda_group))

    def objective(self, theta: np.ndarray) -> float:
        r = self.response - self.design @ theta
        val = 0.5 * (r @ r) / self.n
        val += self.lambda_l1 * np.abs(theta[self.penalty_mask]).sum()
        if self.has_groups:
            for g in np.unique(self.groups[self.groups >= 0]):
                val += self.lambda_group * np.linalg.norm(theta[self.groups == g])
        return float(val)


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and scaling for the coordinate-descent solvers.

    ``standardize`` rescales penalized columns to unit mean square before the
    solve and maps coefficients back afterwards, so the penalty acts on the
    standardized scale (the problem actually solved is the rescaled one).
    """

    max_iterations: int = 10_000
    tolerance: float = 1e-8
    standardize: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")


@dataclass
class SolverResult:
    coef: np.ndarray
    n_sweeps: int
    kkt: float
    objective_history: np.ndarray = field(repr=False)
    refine_rounds: int = 0


def soft_threshold(z: float, gamma: float) -> float:
    """Return ``sign(z) * max(|z| - gamma, 0)``.

    >>> soft_threshold(3.0, 1.0)
    2.0
    >>> soft_threshold(-2.5, 0.5)
    -2.0
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def _group_layout(groups: np.ndarray | None, p: int):
    if groups is None:
        return np.zeros(1, dtype=np.int64), np.zeros(0, dtype=np.int64), []
    labels = [int(g) for g in np.unique(groups) if g >= 0]
    start = [0]
    members = []
    for g in labels:
        idx = np.flatnonzero(groups == g)
        members.append(idx)
        start.append(start[-1] + idx.size)
    flat = np.concatenate(members) if members else np.zeros(0, dtype=np.int64)
    return np.asarray(start, dtype=np.int64), flat.astype(np.int64), members


def column_scales(design: np.ndarray, penalty_mask: np.ndarray) -> np.ndarray:
    """Root-mean-square of each penalized column; 1 elsewhere and for zero columns."""
    n = design.shape[0]
    scale = np.sqrt((design**2).sum(axis=0) / n)
    scale[~penalty_mask] = 1.0
    scale[scale == 0] = 1.0
    return scale


def _gram(problem: PenalizedProblem):
    Z, y = problem.design, problem.response
    n = problem.n
    return Z.T @ Z / n, Z.T @ y / n


def _solve_gram(G, c, problem: PenalizedProblem, config: SolverConfig,
                warm_start=None, skip=None) -> SolverResult:
    p = G.shape[0]
    pen = problem.penalty_mask
    if skip is None:
        skip = np.zeros(p, dtype=bool)
    unpen = np.flatnonzero(~pen & ~skip).astype(np.int64)
    guu_pinv = np.linalg.pinv(G[np.ix_(unpen, unpen)]) if unpen.size else np.zeros((0, 0))
    lam1 = np.where(pen, problem.lambda_l1, 0.0)
    theta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    theta[skip] = 0.0
    grouped = problem.has_groups and problem.lambda_group > 0
    if grouped:
        gstart, gidx, members = _group_layout(problem.groups, p)
        lam_group = np.full(len(members), problem.lambda_group)
        lips = np.array([
            max(np.linalg.eigvalsh(G[np.ix_(m, m)])[-1], 1e-12) if m.size else 1.0
            for m in members
        ])
    budget = config.max_iterations
    used = 0
    refined = 0
    history = []
    while True:
        # plain LASSO runs in chunks so a stalled descent can be refined
        chunk = budget - used if grouped else min(budget - used, _CD_CHUNK)
        if grouped:
            grad, sweeps, _, hist = _kernels.sgl_bcd(
                G, c, lam1, pen, skip, unpen, guu_pinv, gstart, gidx, lam_group,
                lips, theta, config.tolerance, chunk)
        else:
            grad, sweeps, _, hist = _kernels.lasso_cd(
                G, c, lam1, pen, skip, unpen, guu_pinv, theta, config.tolerance, chunk)
        used += sweeps
        history.append(hist)
        kkt = _kkt_from_gradient(grad, theta, problem, skip)
        if kkt > 10 * config.tolerance and not grouped:
            theta, rounds = _active_set_refine(G, c, theta, lam1, pen, skip, config.tolerance,
                                               max(10 * p, 100))
            refined += rounds
            grad = c - G @ theta
            kkt = _kkt_from_gradient(grad, theta, problem, skip)
        if kkt <= 10 * config.tolerance:
            break
        if used >= budget:
            raise ConvergenceError(f"no convergence after {used} sweeps", kkt, theta)
    return SolverResult(theta, used, kkt, np.concatenate(history), refined)


_CD_CHUNK = 1000


def _penalized_objective(G, c, theta, lam1):
    return 0.5 * theta @ G @ theta - c @ theta + lam1 @ np.abs(theta)


def _active_set_refine(G, c, theta, lam1, pen, skip, tol, max_rounds):
    """Sign-fixed Newton steps on the support, for descents that stall on
    nearly collinear columns.

    Each round solves the stationarity system on the current support with
    the signs held fixed, then line-searches over the segment's sign-change
    points so the objective never increases.  Once the support is
    stationary the most violating zero coordinate enters through an exact
    one-dimensional update.  Returns ``(theta, rounds)``.
    """
    theta = theta.copy()
    free = ~skip
    f0 = _penalized_objective(G, c, theta, lam1)
    for rounds in range(1, max_rounds + 1):
        grad = c - G @ theta
        A = np.flatnonzero(free & ((theta != 0) | ~pen))
        s = np.where(pen[A], np.sign(theta[A]), 0.0)
        stationary = A.size == 0 or np.max(np.abs(grad[A] - lam1[A] * s)) <= tol
        if stationary:
            zero = np.flatnonzero(free & pen & (theta == 0))
            excess = np.abs(grad[zero]) - lam1[zero]
            if zero.size == 0 or excess.max() <= tol:
                return theta, rounds
            j = zero[np.argmax(excess)]
            if G[j, j] <= 0:
                return theta, rounds
            theta[j] = np.sign(grad[j]) * excess.max() / G[j, j]
            f0 = _penalized_objective(G, c, theta, lam1)
            continue
        target = np.linalg.lstsq(G[np.ix_(A, A)], c[A] - lam1[A] * s, rcond=None)[0]
        step = target - theta[A]
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = -theta[A] / step
        ts = np.r_[1.0, cross[pen[A] & (step != 0) & (cross > 0) & (cross < 1)]]
        best, best_f = None, f0
        for t in ts:
            cand = theta.copy()
            cand[A] = theta[A] + t * step
            if t < 1:
                tiny = pen[A] & (np.abs(cand[A]) <= 1e-14 * (1 + np.abs(theta[A])))
                cand[A[tiny]] = 0.0
            f = _penalized_objective(G, c, cand, lam1)
            if f < best_f:
                best, best_f = cand, f
        if best is None:
            # no descent along the Newton segment; one exact sweep over the support
            for j in A:
                if not pen[j] or G[j, j] <= 0:
                    continue
                z = c[j] - G[j] @ theta + G[j, j] * theta[j]
                theta[j] = soft_threshold(z, lam1[j]) / G[j, j]
            f0 = _penalized_objective(G, c, theta, lam1)
            continue
        theta, f0 = best, best_f
    return theta, max_rounds


def _kkt_from_gradient(grad, theta, problem: PenalizedProblem, skip=None) -> float:
    """Largest violation of the stationarity conditions.

    ``grad`` is the negative loss gradient ``Z'(y - Z theta)/n``.
    """
    pen = problem.penalty_mask
    lam = problem.lambda_l1
    viol = np.zeros(theta.shape[0])
    viol[~pen] = np.abs(grad[~pen])
    nz = pen & (theta != 0)
    zero = pen & (theta == 0)
    viol[zero] = np.maximum(np.abs(grad[zero]) - lam, 0.0)
    if problem.has_groups and problem.lambda_group > 0:
        groups = problem.groups
        ungrouped_nz = nz & (groups < 0)
        viol[ungrouped_nz] = np.abs(grad[ungrouped_nz] - lam * np.sign(theta[ungrouped_nz]))
        for g in np.unique(groups[groups >= 0]):
            idx = np.flatnonzero(groups == g)
            th = theta[idx]
            nrm = np.linalg.norm(th)
            if nrm == 0:
                shrunk = np.sign(grad[idx]) * np.maximum(np.abs(grad[idx]) - lam, 0.0)
                viol[idx] = max(np.linalg.norm(shrunk) - problem.lambda_group, 0.0)
            else:
                gi = grad[idx]
                v = np.maximum(np.abs(gi) - lam, 0.0)
                on = th != 0
                v[on] = np.abs(gi[on] - lam * np.sign(th[on])
                               - problem.lambda_group * th[on] / nrm)
                viol[idx] = v
    else:
        viol[nz] = np.abs(grad[nz] - lam * np.sign(theta[nz]))
    if skip is not None:
        viol[skip] = 0.0
    return float(viol.max()) if viol.size else 0.0


def kkt_residual(problem: PenalizedProblem, theta: np.ndarray) -> float:
    """Maximum violation of the subgradient optimality conditions at ``theta``.

    Zero exactly when ``theta`` minimizes the (convex) objective.  For a group
    sitting at zero the violation is ``max(||S(g_g, lambda_l1)||_2 - lambda_group, 0)``,
    with ``g`` the negative loss gradient and ``S`` the soft-threshold.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != problem.p:
        raise ValueError(f"theta has length {theta.shape[0]}, expected {problem.p}")
    grad = problem.design.T @ (problem.response - problem.design @ theta) / problem.n
    return _kkt_from_gradient(grad, theta, problem)


@dataclass(frozen=True)
class _PenaltySpec:
    penalty_mask: np.ndarray
    lambda_l1: float
    groups: None = None
    lambda_group: float = 0.0
    has_groups: bool = False


def lasso_gram(G: np.ndarray, c: np.ndarray, penalty_mask, lambda_l1: float,
               config: SolverConfig | None = None, warm_start=None,
               skip=None) -> SolverResult:
    """LASSO in covariance form: minimize ``0.5 t'Gt - c't + lambda_l1 ||t_pen||_1``.

    Columns flagged in ``skip`` are held at zero and excluded from the
    optimality check; nodewise regressions use this to leave out the
    response column of a shared Gram matrix.
    """
    spec = _PenaltySpec(np.asarray(penalty_mask, dtype=bool), float(lambda_l1))
    return _solve_gram(np.ascontiguousarray(G, dtype=float), np.asarray(c, dtype=float),
                       spec, config or SolverConfig(), warm_start,
                       None if skip is None else np.asarray(skip, dtype=bool))


def _standardized(problem: PenalizedProblem):
    scale = column_scales(problem.design, problem.penalty_mask)
    return replace(problem, design=problem.design / scale), scale


def lasso_solve(problem: PenalizedProblem, config: SolverConfig | None = None,
                warm_start: np.ndarray | None = None) -> SolverResult:
    """Coordinate-descent LASSO returning coefficients plus diagnostics."""
    config = config or SolverConfig()
    if problem.has_groups and problem.lambda_group > 0:
        raise ValueError("lasso_solve needs lambda_group == 0; use sparse_group_lasso_solve")
    return _dispatch(problem, config, warm_start)


def sparse_group_lasso_solve(problem: PenalizedProblem, config: SolverConfig | None = None,
                             warm_start: np.ndarray | None = None) -> SolverResult:
    """Block coordinate descent for the sparse group LASSO, with diagnostics."""
    config = config or SolverConfig()
    if problem.groups is None:
        raise ValueError("sparse group LASSO requires groups")
    return _dispatch(problem, config, warm_start)


def _dispatch(problem, config, warm_start):
    if config.standardize:
        scaled, scale = _standardized(problem)
        ws = None if warm_start is None else np.asarray(warm_start) * scale
        G, c = _gram(scaled)
        res = _solve_gram(G, c, scaled, config, ws)
        res.coef = res.coef / scale
        return res
    G, c = _gram(problem)
    return _solve_gram(G, c, problem, config, warm_start)


def lasso_fit(problem: PenalizedProblem, config: SolverConfig | None = None,
              warm_start: np.ndarray | None = None) -> np.ndarray:
    """Minimize ``(1/(2n))||y - Z theta||^2 + lambda_l1 ||theta_pen||_1``.

    Unpenalized columns are refit exactly as a block each sweep.  Raises
    :class:`ConvergenceError` if the KKT residual cannot be brought under
    ``10 * tolerance`` within ``max_iterations`` sweeps.
    """
    return lasso_solve(problem, config, warm_start).coef


def sparse_group_lasso_fit(problem: PenalizedProblem, config: SolverConfig | None = None,
                           warm_start: np.ndarray | None = None) -> np.ndarray:
    """Sparse group LASSO coefficients (see :func:`sparse_group_lasso_solve`)."""
    return sparse_group_lasso_solve(problem, config, warm_start).coef


def lambda_max(problem: PenalizedProblem) -> float:
    """Smallest ``lambda_l1`` at which every penalized coefficient is zero.

    The response is first projected off the unpenalized columns.  With groups
    and ``lambda_group > 0`` this is conservative (the L1 part alone suffices).
    """
    Z, y, pen = problem.design, problem.response, problem.penalty_mask
    if not pen.any():
        return 0.0
    r = y
    if (~pen).any():
        U = Z[:, ~pen]
        coef, *_ = np.linalg.lstsq(U, y, rcond=None)
        r = y - U @ coef
    lmax = float(np.max(np.abs(Z[:, pen].T @ r)) / problem.n)
    # margin for roundoff between this projection and the solver's Gram updates
    return lmax * (1 + 1e-10)


def lambda_path(lmax: float, n_lambdas: int = 30, ratio: float = 1e-2) -> np.ndarray:
    """Geometric grid from ``lmax`` down to ``ratio * lmax``."""
    if lmax <= 0:
        return np.array([0.0])
    return np.geomspace(lmax, lmax * ratio, n_lambdas)


def fit_path(problem: PenalizedProblem, path, config: SolverConfig | None = None):
    """Warm-started fits along a decreasing ``path``; returns a (len(path), p) array."""
    config = config or SolverConfig()
    solver = sparse_group_lasso_solve if problem.has_groups else lasso_solve
    coefs = []
    ws = None
    for lam in path:
        lam_group = lam if problem.has_groups and problem.lambda_group > 0 else 0.0
        res = solver(problem.with_lambda(lam, lam_group), config, ws)
        ws = res.coef
        coefs.append(res.coef)
    return np.array(coefs)


def cv_select_lambda(problem: PenalizedProblem, folds: int, path, seed: int,
                     config: SolverConfig | None = None,
                     tie_lambda_group: bool = False, group_ratio: float = 1.0) -> float:
    """K-fold cross-validation on mean squared prediction error.

    Folds are assigned by a seeded permutation, so the choice is
    deterministic in ``seed``.  Ties go to the smallest lambda.  When
    ``tie_lambda_group`` is set the group penalty follows the L1 penalty
    along the path, scaled by ``group_ratio`` (1 gives equal tuning).
    A fold stops descending the path once its fit has as many nonzero
    coefficients as training rows; lambdas past that point in any fold are
    excluded from the choice.
    """
    path = np.asarray(path, dtype=float).ravel()
    if path.size == 0:
        raise ValueError("path must be nonempty")
    if not np.all(np.isfinite(path)):
        raise ValueError("path contains non-finite values")
    n = problem.n
    if folds < 2 or folds > n:
        raise ValueError(f"folds must lie in [2, {n}]")
    if path.size == 1:
        return float(path[0])
    config = config or SolverConfig()
    order = np.argsort(-path, kind="stable")
    ordered = path[order]
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=int)
    assignment[rng.permutation(n)] = np.arange(n) % folds
    solver = sparse_group_lasso_solve if problem.has_groups else lasso_solve
    errors = np.zeros(path.size)
    for k in range(folds):
        test = assignment == k
        train = replace(problem, design=problem.design[~test], response=problem.response[~test])
        ws = None
        for i, lam in enumerate(ordered):
            if ws is not None and np.count_nonzero(ws) >= train.n:
                # the fit interpolates the training fold; smaller lambdas are
                # dropped from the comparison
                errors[i:] = np.inf
                break
            lam_group = group_ratio * lam if tie_lambda_group else problem.lambda_group
            res = solver(train.with_lambda(lam, lam_group), config, ws)
            ws = res.coef
            resid = problem.response[test] - problem.design[test] @ res.coef
            errors[i] += resid @ resid
    errors /= n
    best = errors.min()
    candidates = ordered[np.isclose(errors, best, rtol=1e-12, atol=0.0)]
    return float(candidates.min())


def benchmark_lambda(n: int, q: int = 1, c: float = 1.0) -> float:
    """Rate-based tuning level ``c * sqrt((log n + log q) / n)``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if q < 1 or c <= 0:
        raise ValueError("q must be >= 1 and c > 0")
    return c * math.sqrt((math.log(n) + math.log(q)) / n)
