import numpy as np
import pytest
from hypothesis import given, strategies as st

from hetnet import dgp
from hetnet import network as nw
from oracles import col_scale_loops, gauss_solve, neumann_loops


def _leader_params(n, s=5, value=0.5, beta=3.0, **kw):
    eta = np.zeros(n)
    eta[:s] = value
    return dgp.StructuralParams(eta0=eta, beta0=[beta], **kw)


def _leader_network(n, p, seed, s=5):
    return nw.embed_leader_block(nw.erdos_renyi(n, p, seed), nw.path_block(s))


def _structural_gap(D, M, eta, X, beta, eps):
    return np.max(np.abs(D - col_scale_loops(M, D) @ eta - X @ beta - eps))


def test_params_invariants():
    with pytest.raises(ValueError):
        dgp.StructuralParams(eta0=[0.5, 1.0], beta0=[1.0])
    with pytest.raises(ValueError):
        dgp.StructuralParams(eta0=[0.5, 0.0], beta0=[1.0], gamma0=0.6)
    with pytest.raises(ValueError):
        dgp.StructuralParams(eta0=None, beta0=[1.0], eta0_multi=([0.6, 0], [0, 0.5]))
    with pytest.raises(ValueError):
        dgp.StructuralParams(eta0=[0.1], beta0=[1.0], sigma=0.0)
    with pytest.raises(ValueError):
        dgp.StructuralParams(eta0=[0.1], beta0=[1.0], error_law="cauchy")


def test_zero_eta_gives_linear_outcome():
    M = nw.erdos_renyi(30, 0.2, 1)
    X = dgp.draw_design(30, 1, 2)
    params = dgp.StructuralParams(eta0=np.zeros(30), beta0=[3.0])
    D, eps = dgp.simulate_base(M, params, X, 5, return_errors=True)
    np.testing.assert_array_equal(D, X @ params.beta0 + eps)


def test_two_node_hand_solve():
    # D1 = 0 * D2 + 1 and D2 = 0.5 * D1 + 1, so D = (1, 1.5)
    M = np.array([[0, 1], [1, 0]])
    A = dgp.base_system(M, [0.5, 0.0])
    D = dgp.solve_system(A, np.array([1.0, 1.0]))
    np.testing.assert_allclose(D, [1.0, 1.5], atol=1e-15)
    np.testing.assert_allclose(D, gauss_solve(np.eye(2) - col_scale_loops(M, [0.5, 0.0]), [1, 1]),
                               atol=1e-15)


def test_leader_design_structural_identity():
    n = 200
    params = _leader_params(n)
    assert params.beta0.tolist() == [3.0]
    assert params.eta0[:5].tolist() == [0.5] * 5 and not params.eta0[5:].any()
    for seed in range(10):
        M = _leader_network(n, 0.1, seed)
        X = dgp.draw_design(n, 1, 100 + seed)
        D, eps = dgp.simulate_base(M, params, X, 200 + seed, return_errors=True)
        gap = _structural_gap(D, M.entries, params.eta0, X, params.beta0, eps)
        assert gap <= 1e-10 * (1 + np.max(np.abs(D)))


def test_cliques_reductions(rng):
    n = 40
    M = nw.erdos_renyi(n, 0.1, 3)
    X = rng.standard_normal((n, 1))
    base = _leader_params(n, value=0.3)
    with_zero = dgp.StructuralParams(eta0=base.eta0, beta0=base.beta0, gamma0=0.0)
    np.testing.assert_array_equal(dgp.simulate_cliques(M, with_zero, X, 9),
                                  dgp.simulate_base(M, base, X, 9))
    sar = dgp.StructuralParams(eta0=np.zeros(n), beta0=[3.0], gamma0=0.05)
    D, eps = dgp.simulate_cliques(M, sar, X, 4, return_errors=True)
    direct = gauss_solve(np.eye(n) - 0.05 * M.entries, X @ sar.beta0 + eps)
    np.testing.assert_allclose(D, direct, atol=1e-10)
    assert sar.gamma0 == 0.05


def test_cliques_structural_identity(rng):
    n = 60
    M = _leader_network(n, 0.1, 2)
    X = rng.standard_normal((n, 1))
    eta = np.zeros(n)
    eta[:5] = 0.4
    params = dgp.StructuralParams(eta0=eta, beta0=[3.0], gamma0=0.05)
    D, eps = dgp.simulate_cliques(M, params, X, 1, return_errors=True)
    resid = D - col_scale_loops(M.entries, D) @ eta - 0.05 * M.entries @ D - X @ params.beta0 - eps
    assert np.max(np.abs(resid)) <= 1e-10 * (1 + np.max(np.abs(D)))


def test_multinet_reductions(rng):
    n = 40
    a = _leader_network(n, 0.1, 1)
    b = nw.erdos_renyi(n, 0.1, 2)
    X = rng.standard_normal((n, 1))
    eta = _leader_params(n, value=0.4).eta0
    single = dgp.StructuralParams(eta0=eta, beta0=[3.0])
    one = dgp.StructuralParams(eta0=None, beta0=[3.0], eta0_multi=(eta,))
    np.testing.assert_array_equal(dgp.simulate_multinet(nw.MultiNetwork([a], ["a"]), one, X, 3),
                                  dgp.simulate_base(a, single, X, 3))
    two = dgp.StructuralParams(eta0=None, beta0=[3.0], eta0_multi=(eta, np.zeros(n)))
    D = dgp.simulate_multinet(nw.MultiNetwork([a, b], ["a", "b"]), two, X, 3)
    np.testing.assert_allclose(D, dgp.simulate_base(a, single, X, 3), atol=1e-12)
    perm = rng.permutation(n)
    b_perm = nw.AdjacencyMatrix(b.entries[np.ix_(perm, perm)])
    D_perm = dgp.simulate_multinet(nw.MultiNetwork([a, b_perm], ["a", "b"]), two, X, 3)
    np.testing.assert_allclose(D_perm, D, atol=1e-12)


def test_multinet_structural_identity(rng):
    n = 50
    nets = [_leader_network(n, 0.1, 1), nw.erdos_renyi(n, 0.1, 7)]
    e1 = np.zeros(n)
    e1[:5] = 0.3
    e2 = np.zeros(n)
    e2[5:8] = 0.2
    params = dgp.StructuralParams(eta0=None, beta0=[3.0], eta0_multi=(e1, e2))
    X = rng.standard_normal((n, 1))
    D, eps = dgp.simulate_multinet(nw.MultiNetwork(nets, ["a", "b"]), params, X, 0,
                                   return_errors=True)
    resid = (D - col_scale_loops(nets[0].entries, D) @ e1 - col_scale_loops(nets[1].entries, D) @ e2
             - X @ params.beta0 - eps)
    assert np.max(np.abs(resid)) <= 1e-10 * (1 + np.max(np.abs(D)))


@pytest.mark.parametrize("seed", range(20))
def test_neumann_series_agreement(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 31))
    M = nw.erdos_renyi(n, 0.15, seed).entries
    eta = rng.uniform(-0.5, 0.5, n) * (rng.random(n) < 0.4)
    B = col_scale_loops(M, eta)
    if np.linalg.norm(B, 2) >= 0.9:
        eta *= 0.5 / np.linalg.norm(B, 2)
        B = col_scale_loops(M, eta)
    X = rng.standard_normal((n, 1))
    params = dgp.StructuralParams(eta0=eta, beta0=[3.0])
    D, eps = dgp.simulate_base(nw.AdjacencyMatrix(M), params, X, seed, return_errors=True)
    rhs = X @ params.beta0 + eps
    assert np.max(np.abs(dgp.neumann_series(M, eta, rhs) - D)) <= 1e-8
    assert np.max(np.abs(neumann_loops(B, rhs) - D)) <= 1e-8


def test_ill_conditioned_system_refused():
    M = nw.AdjacencyMatrix(nw.ring_block(5))
    eta = np.full(5, 0.5)
    with pytest.raises(dgp.IllConditionedSystemError) as info:
        dgp.simulate_base(M, dgp.StructuralParams(eta0=eta, beta0=[1.0]), np.ones(5), 0)
    assert info.value.cond > dgp.MAX_CONDITION


def test_draw_design_properties():
    np.testing.assert_array_equal(dgp.draw_design(10, 2, 3), dgp.draw_design(10, 2, 3))
    X = dgp.draw_design(10_000, 1, 7)[:, 0]
    assert abs(X.mean()) <= 4 / np.sqrt(10_000)
    assert 0.9 <= X.var(ddof=1) <= 1.1
    with pytest.raises(ValueError):
        dgp.draw_design(0, 1, 0)


def test_uniform_errors_have_requested_variance():
    params = dgp.StructuralParams(eta0=np.zeros(1), beta0=[1.0], sigma=2.0, error_law="uniform")
    eps = dgp.draw_errors(20_000, params, 1)
    assert np.max(np.abs(eps)) <= 2.0 * np.sqrt(3.0)
    assert eps.var() == pytest.approx(4.0, rel=0.05)


@given(st.integers(0, 2**31), st.integers(0, 2**31))
def test_seed_changes_errors_not_system(s1, s2):
    n = 15
    M = _leader_network(n, 0.2, 3)
    X = np.linspace(-1, 1, n)[:, None]
    params = _leader_params(n, value=0.3)
    D1, e1 = dgp.simulate_base(M, params, X, s1, return_errors=True)
    D2, e2 = dgp.simulate_base(M, params, X, s2, return_errors=True)
    A = dgp.base_system(M, params.eta0)
    # same system matrix maps each draw back to its own right-hand side
    np.testing.assert_allclose(A @ D1 - e1, A @ D2 - e2, atol=1e-10)
    assert (s1 == s2) == np.array_equal(e1, e2)
