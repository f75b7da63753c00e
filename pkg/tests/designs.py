"""Seeded draws of the standard simulation design used across test modules."""

import numpy as np

from hetnet import dgp
from hetnet import network as nw


def leader_draw(n, seed, eta_value=0.5, leaders=5, p=0.1, beta=3.0, gamma0=None):
    """Network with a path among the first ``leaders`` nodes, X, and outcome D."""
    net_ss, x_ss, e_ss = np.random.SeedSequence(seed).spawn(3)
    M = nw.embed_leader_block(nw.erdos_renyi(n, p, net_ss), nw.path_block(leaders))
    X = dgp.draw_design(n, 1, x_ss)
    eta = np.zeros(n)
    eta[:leaders] = eta_value
    params = dgp.StructuralParams(eta0=eta, beta0=[beta], gamma0=gamma0)
    if gamma0 is None:
        D = dgp.simulate_base(M, params, X, e_ss)
    else:
        D = dgp.simulate_cliques(M, params, X, e_ss)
    return M, X, D, eta


def two_network_draw(n, seed, eta_value=0.4, leaders=5, p=0.1, beta=3.0):
    """One relevant network (with the leader path) and one irrelevant network."""
    a_ss, b_ss, x_ss, e_ss = np.random.SeedSequence(seed).spawn(4)
    rel = nw.embed_leader_block(nw.erdos_renyi(n, p, a_ss), nw.path_block(leaders))
    irr = nw.erdos_renyi(n, p, b_ss)
    multi = nw.MultiNetwork([rel, irr], ["relevant", "irrelevant"])
    X = dgp.draw_design(n, 1, x_ss)
    eta = np.zeros(n)
    eta[:leaders] = eta_value
    params = dgp.StructuralParams(eta0=None, beta0=[beta], eta0_multi=(eta, np.zeros(n)))
    return multi, X, dgp.simulate_multinet(multi, params, X, e_ss), eta
