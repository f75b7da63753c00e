"""Compiled coordinate-descent kernels.

All kernels work on the covariance form of the least-squares loss,

    0.5 * theta' G theta - c' theta,   G = Z'Z / n,  c = Z'y / n,

and keep the negative gradient ``grad = c - G theta`` up to date so that a
coordinate update costs O(p).  Penalty weights are passed per coordinate;
unpenalized coordinates are updated jointly by an exact block solve.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _objective(theta, c, grad, lam1, pen, group_start, group_idx, lam_group):
    # 0.5 theta'G theta - c'theta == -0.5 theta'(c + grad)
    val = 0.0
    for j in range(theta.shape[0]):
        val -= 0.5 * theta[j] * (c[j] + grad[j])
        if pen[j]:
            val += lam1[j] * abs(theta[j])
    for g in range(group_start.shape[0] - 1):
        s = 0.0
        for t in range(group_start[g], group_start[g + 1]):
            s += theta[group_idx[t]] ** 2
        val += lam_group[g] * np.sqrt(s)
    return val


@njit(cache=True)
def _update_grad(G, grad, j, delta):
    for i in range(grad.shape[0]):
        grad[i] -= G[i, j] * delta


@njit(cache=True)
def _unpen_block(G, grad, theta, unpen, guu_pinv):
    nu = unpen.shape[0]
    if nu == 0:
        return 0.0
    delta = np.zeros(nu)
    for a in range(nu):
        s = 0.0
        for b in range(nu):
            s += guu_pinv[a, b] * grad[unpen[b]]
        delta[a] = s
    change = 0.0
    for a in range(nu):
        if delta[a] != 0.0:
            j = unpen[a]
            theta[j] += delta[a]
            _update_grad(G, grad, j, delta[a])
            if abs(delta[a]) > change:
                change = abs(delta[a])
    return change


@njit(cache=True)
def lasso_cd(G, c, lam1, pen, skip, unpen, guu_pinv, theta, tol, max_sweeps):
    """Cyclic coordinate descent with active-set cycling.

    The budget ``max_sweeps`` is counted in full-sweep equivalents: a pass
    over the active set alone costs its share of the coordinates.  The
    objective is recorded after every full sweep.
    Returns (grad, n_sweeps, converged, objective_history).
    """
    p = theta.shape[0]
    grad = c - G @ theta
    history = np.empty(max_sweeps + 1)
    empty_i = np.zeros(1, dtype=np.int64)
    empty_f = np.zeros(0)
    work = 0.0
    full = 0
    converged = False
    active_only = False
    while work < max_sweeps:
        change = _unpen_block(G, grad, theta, unpen, guu_pinv)
        visited = 0
        for j in range(p):
            if skip[j] or not pen[j]:
                continue
            if active_only and theta[j] == 0.0:
                continue
            visited += 1
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = theta[j]
            new = _soft(grad[j] + gjj * old, lam1[j]) / gjj
            if new != old:
                theta[j] = new
                _update_grad(G, grad, j, new - old)
                d = abs(new - old)
                if d > change:
                    change = d
        if active_only:
            work += max(visited, 1) / max(p, 1)
        else:
            work += 1.0
            history[full] = _objective(theta, c, grad, lam1, pen, empty_i, empty_i, empty_f)
            full += 1
        if change < tol:
            if not active_only:
                converged = True
                break
            active_only = False
        elif not active_only:
            active_only = True
    return grad, int(np.ceil(work)), converged, history[:full]


@njit(cache=True)
def _solve_1d(a, b, l1, lg, r2):
    # argmin_t 0.5 a t^2 - b t + l1 |t| + lg sqrt(t^2 + r2)
    if r2 <= 0.0:
        return _soft(b, l1 + lg) / a
    rhs = abs(b) - l1
    if rhs <= 0.0:
        return 0.0
    r = np.sqrt(r2)
    lo = max(0.0, (rhs - lg) / a)
    hi = rhs / a
    u = 0.5 * (lo + hi)
    for _ in range(100):
        s = np.sqrt(u * u + r2)
        h = a * u + lg * u / s - rhs
        if h > 0.0:
            hi = u
        else:
            lo = u
        dh = a + lg * r2 / (s * s * s)
        un = u - h / dh
        if un <= lo or un >= hi:
            un = 0.5 * (lo + hi)
        if abs(un - u) <= 1e-15 * (1.0 + u):
            u = un
            break
        u = un
    if b < 0.0:
        return -u
    return u


@njit(cache=True)
def _group_prox(v, step, l1, lg):
    out = np.empty_like(v)
    s = 0.0
    for i in range(v.shape[0]):
        out[i] = _soft(v[i], step * l1[i])
        s += out[i] * out[i]
    nrm = np.sqrt(s)
    if nrm <= step * lg:
        out[:] = 0.0
        return out
    scale = 1.0 - step * lg / nrm
    for i in range(v.shape[0]):
        out[i] *= scale
    return out


@njit(cache=True)
def _group_solve(Ggg, z, u, l1, lg, lip, tol, max_inner):
    # minimize 0.5 u'Ggg u - z'u + sum l1|u| + lg ||u||_2 over the block
    m = u.shape[0]
    loc = z - Ggg @ u
    for _ in range(max_inner):
        u_old = u.copy()
        # backtracking proximal gradient step (spacer step)
        f0 = -0.5 * (u @ (z + loc))
        step = 1.0 / lip
        for _bt in range(50):
            un = _group_prox(u + step * loc, step, l1, lg)
            d = un - u
            locn = z - Ggg @ un
            f1 = -0.5 * (un @ (z + locn))
            if f1 <= f0 - loc @ d + 0.5 / step * (d @ d) + 1e-14 * (1.0 + abs(f0)):
                break
            step *= 0.5
        u = un
        loc = locn
        # coordinate sweep with exact one-dimensional minimization
        nrm2 = u @ u
        for i in range(m):
            a = Ggg[i, i]
            if a <= 0.0:
                continue
            old = u[i]
            r2 = nrm2 - old * old
            if r2 < 0.0:
                r2 = 0.0
            new = _solve_1d(a, loc[i] + a * old, l1[i], lg, r2)
            if new != old:
                dd = new - old
                u[i] = new
                for k in range(m):
                    loc[k] -= Ggg[k, i] * dd
                nrm2 = r2 + new * new
        change = 0.0
        for i in range(m):
            dd = abs(u[i] - u_old[i])
            if dd > change:
                change = dd
        if change < tol:
            break
    return u


@njit(cache=True)
def sgl_bcd(G, c, lam1, pen, skip, unpen, guu_pinv, group_start, group_idx,
            lam_group, lips, theta, tol, max_sweeps):
    """Block coordinate descent for the sparse group LASSO.

    Penalized coordinates outside every group get plain soft-threshold
    updates; each group is screened for an exact zero and otherwise solved
    by the inner block routine.
    Returns (grad, n_sweeps, converged, objective_history).
    """
    p = theta.shape[0]
    grad = c - G @ theta
    history = np.empty(max_sweeps)
    ngroups = group_start.shape[0] - 1
    in_group = np.zeros(p, dtype=np.bool_)
    for t in range(group_idx.shape[0]):
        in_group[group_idx[t]] = True
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        change = _unpen_block(G, grad, theta, unpen, guu_pinv)
        for j in range(p):
            if skip[j] or not pen[j] or in_group[j]:
                continue
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = theta[j]
            new = _soft(grad[j] + gjj * old, lam1[j]) / gjj
            if new != old:
                theta[j] = new
                _update_grad(G, grad, j, new - old)
                if abs(new - old) > change:
                    change = abs(new - old)
        for g in range(ngroups):
            lo = group_start[g]
            hi = group_start[g + 1]
            m = hi - lo
            if m == 0:
                continue
            idx = group_idx[lo:hi]
            old = np.empty(m)
            z = np.empty(m)
            l1 = np.empty(m)
            for a in range(m):
                j = idx[a]
                old[a] = theta[j]
                l1[a] = lam1[j]
            Ggg = np.empty((m, m))
            for a in range(m):
                for b in range(m):
                    Ggg[a, b] = G[idx[a], idx[b]]
            for a in range(m):
                s = grad[idx[a]]
                for b in range(m):
                    s += Ggg[a, b] * old[b]
                z[a] = s
            # group-zero screening
            s2 = 0.0
            for a in range(m):
                if not skip[idx[a]]:
                    s2 += _soft(z[a], l1[a]) ** 2
            if np.sqrt(s2) <= lam_group[g]:
                new = np.zeros(m)
            else:
                # away from zero the group norm is smooth, so one inexact pass
                # per sweep suffices; leaving zero needs the full block solve
                active = False
                for a in range(m):
                    if old[a] != 0.0:
                        active = True
                        break
                inner = 1 if active else 10000
                new = _group_solve(Ggg, z, old.copy(), l1, lam_group[g], lips[g],
                                   0.1 * tol, inner)
            for a in range(m):
                d = new[a] - old[a]
                if d != 0.0:
                    j = idx[a]
                    theta[j] = new[a]
                    _update_grad(G, grad, j, d)
                    if abs(d) > change:
                        change = abs(d)
        history[sweeps] = _objective(theta, c, grad, lam1, pen, group_start, group_idx,
                                     lam_group)
        sweeps += 1
        if change < tol:
            converged = True
            break
    return grad, sweeps, converged, history[:sweeps]
