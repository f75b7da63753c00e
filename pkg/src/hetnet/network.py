"""Adjacency matrices: generators, the column-scaling operator and
identification diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class RankDeficientCovariatesError(ValueError):
    """The covariate matrix X does not have full column rank."""


@dataclass(frozen=True, eq=False)
class AdjacencyMatrix:
    """Binary n x n connection structure with a zero diagonal."""

    entries: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        A = np.asarray(self.entries)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("adjacency matrix must be square")
        if not np.all((A == 0) | (A == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(A) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if self.symmetric and not np.array_equal(A, A.T):
            raise ValueError("matrix flagged symmetric but entries are not")
        A = A.astype(np.float64)
        A.setflags(write=False)
        object.__setattr__(self, "entries", A)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, AdjacencyMatrix):
            return NotImplemented
        return self.symmetric == other.symmetric and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash((self.entries.tobytes(), self.symmetric))

    def degrees(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    def edge_count(self) -> int:
        total = int(self.entries.sum())
        return total // 2 if self.symmetric else total

    def isolated(self) -> np.ndarray:
        """Indices of nodes with no incoming links (all-zero column)."""
        return np.flatnonzero(self.entries.sum(axis=0) == 0)


@dataclass(frozen=True)
class MultiNetwork:
    """Several adjacency matrices over one node set, each with a label."""

    networks: tuple
    labels: tuple

    def __post_init__(self):
        nets = tuple(self.networks)
        labels = tuple(str(s) for s in self.labels)
        if not nets:
            raise ValueError("at least one network is required")
        if len(nets) != len(labels):
            raise ValueError("one label per network")
        if len(set(labels)) != len(labels):
            raise ValueError("network labels must be unique")
        if len({net.n for net in nets}) != 1:
            raise ValueError("all networks must share the node count")
        object.__setattr__(self, "networks", nets)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.networks[0].n

    @property
    def q(self) -> int:
        return len(self.networks)

    def __iter__(self):
        return iter(self.networks)

    def __len__(self):
        return len(self.networks)


def as_matrix(M) -> np.ndarray:
    return np.asarray(M, dtype=float)


def erdos_renyi(n: int, p: float, seed: int) -> AdjacencyMatrix:
    """Undirected G(n, p): every unordered pair linked independently w.p. ``p``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"link probability {p} outside [0, 1]")
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    A = (upper | upper.T).astype(np.int8)
    return AdjacencyMatrix(A)


def watts_strogatz(n: int, mean_degree: int, omega: float, seed: int) -> AdjacencyMatrix:
    """Small-world graph: ring lattice with ``mean_degree / 2`` neighbours per
    side, then every lattice edge (i, j) rewired with probability ``omega``
    to (i, k), k uniform over nodes not currently adjacent to i.

    An edge with no eligible target stays in place, so the edge count is
    always ``n * mean_degree / 2``.
    """
    if mean_degree % 2 or mean_degree < 0:
        raise ValueError("mean_degree must be an even nonnegative integer")
    if mean_degree >= n:
        raise ValueError("mean_degree must be smaller than n")
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"rewiring probability {omega} outside [0, 1]")
    rng = np.random.default_rng(seed)
    A = np.zeros((n, n), dtype=np.int8)
    half = mean_degree // 2
    for i in range(n):
        for step in range(1, half + 1):
            j = (i + step) % n
            A[i, j] = A[j, i] = 1
    for step in range(1, half + 1):
        for i in range(n):
            j = (i + step) % n
            if not A[i, j] or rng.random() >= omega:
                continue
            eligible = np.flatnonzero(A[i] == 0)
            eligible = eligible[eligible != i]
            if eligible.size == 0:
                continue
            k = eligible[rng.integers(eligible.size)]
            A[i, j] = A[j, i] = 0
            A[i, k] = A[k, i] = 1
    return AdjacencyMatrix(A)


def ring_block(s: int) -> np.ndarray:
    """Symmetric ring among ``s`` nodes (each linked to its two ring neighbours)."""
    B = np.zeros((s, s), dtype=np.int8)
    if s < 2:
        return B
    for i in range(s):
        j = (i + 1) % s
        B[i, j] = B[j, i] = 1
    return B


def path_block(s: int) -> np.ndarray:
    """Symmetric path 0-1-...-(s-1) among ``s`` nodes.

    Its largest adjacency eigenvalue is ``2 cos(pi / (s + 1)) < 2``, so the
    leader subsystem ``I - eta * block`` stays invertible for every
    ``|eta| <= 0.5``, unlike the ring.
    """
    B = np.zeros((s, s), dtype=np.int8)
    for i in range(s - 1):
        B[i, i + 1] = B[i + 1, i] = 1
    return B


def embed_leader_block(M: AdjacencyMatrix, block, nodes=None) -> AdjacencyMatrix:
    """Overwrite the principal submatrix of ``M`` on ``nodes`` with ``block``.

    ``nodes`` defaults to ``0..s-1``; links between the block nodes and the
    rest of the network are left untouched.
    """
    B = np.asarray(block)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise ValueError("block must be square")
    s = B.shape[0]
    if s > M.n:
        raise ValueError(f"block of size {s} does not fit in {M.n} nodes")
    if nodes is None:
        nodes = np.arange(s)
    nodes = np.asarray(nodes, dtype=int).ravel()
    if nodes.size != s or np.unique(nodes).size != s:
        raise ValueError("need one distinct node per block row")
    if nodes.min(initial=0) < 0 or nodes.max(initial=0) >= M.n:
        raise ValueError("block nodes out of range")
    if np.any(np.diag(B) != 0):
        raise ValueError("block diagonal must be zero")
    if M.symmetric and not np.array_equal(B, B.T):
        raise ValueError("a symmetric network needs a symmetric block")
    A = np.array(M.entries, copy=True)
    A[np.ix_(nodes, nodes)] = B
    return AdjacencyMatrix(A, symmetric=M.symmetric)


def col_scale(M, v) -> np.ndarray:
    """``M ∘ v``: column j of ``M`` multiplied by ``v[j]`` (i.e. ``M @ diag(v)``)."""
    A = as_matrix(M)
    v = np.asarray(v, dtype=float).ravel()
    if A.ndim != 2 or A.shape[1] != v.shape[0]:
        raise ValueError(f"cannot scale {A.shape} matrix by vector of length {v.shape[0]}")
    return A * v[np.newaxis, :]


def residual_maker(X) -> np.ndarray:
    """``I - X (X'X)^- X'``, the projector onto the orthogonal complement of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1 and X.shape[1] > 1:
        X = X.T
    n = X.shape[0]
    return np.eye(n) - X @ np.linalg.pinv(X)


def _as_covariates(X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows, network has {n} nodes")
    return X


def check_instrument_rank(M: AdjacencyMatrix, X, S: Sequence[int], rtol: float = 1e-8):
    """Full-column-rank test for ``W (M ∘ X)_S``.

    Returns ``(full_rank, smallest_singular_value)``.  Full rank means the
    smallest singular value exceeds ``rtol`` times the largest.  For k > 1
    covariates the S-columns of every ``M ∘ X_c`` block are stacked.
    """
    A = as_matrix(M)
    n = A.shape[0]
    X = _as_covariates(X, n)
    S = np.asarray(sorted(set(int(s) for s in S)), dtype=int)
    if S.size == 0:
        raise ValueError("S must be nonempty")
    if S.size + X.shape[1] > n:
        raise ValueError("|S| + k must not exceed n")
    sx = np.linalg.svd(X, compute_uv=False)
    if sx[-1] <= rtol * max(sx[0], 1e-300):
        raise RankDeficientCovariatesError("X is rank deficient")
    W = residual_maker(X)
    cols = np.hstack([col_scale(A, X[:, c])[:, S] for c in range(X.shape[1])])
    sv = np.linalg.svd(W @ cols, compute_uv=False)
    smin = float(sv[-1])
    return bool(sv[0] > 0 and smin > rtol * sv[0]), smin


def irrepresentable_stat(M: AdjacencyMatrix, X, S: Sequence[int], eta0, beta0) -> float:
    """Irrepresentable-condition statistic for a known truth.

    Computes ``max_{||u||_inf <= 1} ||diag(f_Sc) Sigma_21 Sigma_11^{-1} diag(f_S)^{-1} u||_inf``
    with ``f = (I - M∘eta0)^{-1} X beta0`` and ``Sigma = M'WM / n``.  The
    maximum of a max-of-|affine| function over the cube sits at a sign vertex,
    and at the best vertex it equals the largest absolute row sum, which is
    what is returned.
    """
    A = as_matrix(M)
    n = A.shape[0]
    X = _as_covariates(X, n)
    eta0 = np.asarray(eta0, dtype=float).ravel()
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float))
    S = np.asarray(sorted(set(int(s) for s in S)), dtype=int)
    Sc = np.setdiff1d(np.arange(n), S)
    if S.size == 0 or Sc.size == 0:
        return 0.0
    f = np.linalg.solve(np.eye(n) - col_scale(A, eta0), X @ beta0)
    if np.any(np.abs(f[S]) < 1e-12):
        raise ZeroDivisionError("f vanishes on an element of S")
    W = residual_maker(X)
    sigma = A.T @ W @ A / n
    s11 = sigma[np.ix_(S, S)]
    if np.linalg.matrix_rank(s11) < S.size:
        raise np.linalg.LinAlgError("Sigma_11 is singular")
    K = f[Sc, np.newaxis] * np.linalg.solve(s11.T, sigma[np.ix_(Sc, S)].T).T / f[S]
    return float(np.abs(K).sum(axis=1).max())
