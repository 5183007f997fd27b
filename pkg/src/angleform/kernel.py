"""Compiled closed-loop right-hand side and RK4 loop.

This is a loop-level transcription of the numpy reference in
:mod:`angleform.control` and :mod:`angleform.estimator`, used by
:func:`angleform.sim.run` for speed. The test suite checks both agree.
State layout: ``[q (N*2), p (N*2), r_hat (M*8)]``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .geometry import EPS_COINCIDE, EPS_ESTIMATE, TERM_ANGLE, TERM_BEARING, TERM_EDGE, TERM_ROLE, TERM_SIGN

OK, COINCIDENT, ESTIMATOR, NONFINITE = 0, 1, 2, 3

_T_ROLE = TERM_ROLE.astype(np.int64)
_T_ANGLE = TERM_ANGLE.astype(np.int64)
_T_EDGE = TERM_EDGE.astype(np.int64)
_T_BEAR = TERM_BEARING.astype(np.int64)
_T_SIGN = TERM_SIGN.astype(np.float64)
# edge (i, j, k) = (tail role, head role)
_EDGE_TAIL = np.array([1, 0, 0], dtype=np.int64)
_EDGE_HEAD = np.array([2, 2, 1], dtype=np.int64)


@njit(cache=True)
def rhs(x, out, n, m, tv, inv_mass, friction, cos_star, spring, damper, est_gain,
        leader, z_star, dz, v_star, dv, scale_on, vel_on):
    """Write dx/dt into ``out``; return a status code."""
    a2 = 2 * n
    v = np.empty((n, 2))
    for i in range(n):
        v[i, 0] = x[a2 + 2 * i] * inv_mass[i]
        v[i, 1] = x[a2 + 2 * i + 1] * inv_mass[i]
    u = np.zeros((n, 2))
    s = np.empty((3, 2))
    r = np.empty(3)
    tvec = np.empty((8, 2))
    jac = np.empty((2, 3, 2))
    jac_est = np.empty((2, 3, 2))
    rate = np.empty(2)
    err = np.empty(2)
    gamma = np.empty((2, 3))
    for l in range(m):
        for e in range(3):
            h = tv[l, _EDGE_HEAD[e]]
            t = tv[l, _EDGE_TAIL[e]]
            zx = x[2 * h] - x[2 * t]
            zy = x[2 * h + 1] - x[2 * t + 1]
            r[e] = np.hypot(zx, zy)
            if not r[e] > EPS_COINCIDE:
                return COINCIDENT
            s[e, 0] = zx / r[e]
            s[e, 1] = zy / r[e]
        ct = s[2, 0] * s[1, 0] + s[2, 1] * s[1, 1]
        cp = s[0, 0] * s[1, 0] + s[0, 1] * s[1, 1]
        err[0] = min(max(ct, -1.0), 1.0) - cos_star[l, 0]
        err[1] = min(max(cp, -1.0), 1.0) - cos_star[l, 1]
        jac[:] = 0.0
        jac_est[:] = 0.0
        base = 4 * n + 8 * l
        for k in range(8):
            e = _T_EDGE[k]
            b = _T_BEAR[k]
            d = s[e, 0] * s[b, 0] + s[e, 1] * s[b, 1]
            tvec[k, 0] = _T_SIGN[k] * (s[b, 0] - d * s[e, 0])
            tvec[k, 1] = _T_SIGN[k] * (s[b, 1] - d * s[e, 1])
            rh = x[base + k]
            if not rh > EPS_ESTIMATE:
                return ESTIMATOR
            ang = _T_ANGLE[k]
            role = _T_ROLE[k]
            for c in range(2):
                jac[ang, role, c] += tvec[k, c] / r[e]
                jac_est[ang, role, c] += tvec[k, c] / rh
        for ang in range(2):
            acc = 0.0
            for role in range(3):
                node = tv[l, role]
                acc += jac[ang, role, 0] * v[node, 0] + jac[ang, role, 1] * v[node, 1]
            rate[ang] = acc
            for role in range(3):
                gamma[ang, role] = spring[l, ang, role] * err[ang] + damper[l, ang, role] * rate[ang]
                node = tv[l, role]
                u[node, 0] -= jac_est[ang, role, 0] * gamma[ang, role]
                u[node, 1] -= jac_est[ang, role, 1] * gamma[ang, role]
        for k in range(8):
            e = _T_EDGE[k]
            role = _T_ROLE[k]
            node = tv[l, role]
            f = (tvec[k, 0] * v[node, 0] + tvec[k, 1] * v[node, 1]) / r[e]
            h = tv[l, _EDGE_HEAD[e]]
            t = tv[l, _EDGE_TAIL[e]]
            rdot = s[e, 0] * (v[h, 0] - v[t, 0]) + s[e, 1] * (v[h, 1] - v[t, 1])
            out[base + k] = rdot - gamma[_T_ANGLE[k], role] * f / (est_gain[l, k] * x[base + k])
    if scale_on:
        la = leader[0]
        lb = leader[1]
        for c in range(2):
            z = x[2 * la + c] - x[2 * lb + c] - z_star[c]
            zd0 = v[la, 0] - v[lb, 0]
            zd1 = v[la, 1] - v[lb, 1]
            ua = -z - (dz[c, 0] * zd0 + dz[c, 1] * zd1)
            u[la, c] += ua
            u[lb, c] -= ua
    if vel_on:
        for i in range(n):
            for c in range(2):
                u[i, c] += (friction[i, c, 0] * v_star[0] + friction[i, c, 1] * v_star[1]
                            - dv[i, c, 0] * (v[i, 0] - v_star[0]) - dv[i, c, 1] * (v[i, 1] - v_star[1]))
    for i in range(n):
        for c in range(2):
            out[2 * i + c] = v[i, c]
            out[a2 + 2 * i + c] = u[i, c] - (friction[i, c, 0] * v[i, 0] + friction[i, c, 1] * v[i, 1])
    return OK


@njit(cache=True)
def integrate(x0, n_steps, stride, dt, n, m, tv, inv_mass, friction, cos_star, spring, damper,
              est_gain, leader, z_star, dz, v_star, dv, scale_on, vel_on):
    """Fixed-step RK4 from ``x0``; returns ``(logged states, status, steps done)``.

    Row 0 of the log is ``x0``; later rows follow every ``stride`` steps. On a
    nonzero status, ``steps done`` counts the completed steps and the log is
    truncated to the rows recorded so far.
    """
    size = x0.size
    log = np.empty((n_steps // stride + 1, size))
    log[0] = x0
    rows = 1
    x = x0.copy()
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    tmp = np.empty(size)
    for step in range(1, n_steps + 1):
        st = rhs(x, k1, n, m, tv, inv_mass, friction, cos_star, spring, damper, est_gain,
                 leader, z_star, dz, v_star, dv, scale_on, vel_on)
        if st != OK:
            return log[:rows], st, step - 1
        for i in range(size):
            tmp[i] = x[i] + 0.5 * dt * k1[i]
        st = rhs(tmp, k2, n, m, tv, inv_mass, friction, cos_star, spring, damper, est_gain,
                 leader, z_star, dz, v_star, dv, scale_on, vel_on)
        if st != OK:
            return log[:rows], st, step - 1
        for i in range(size):
            tmp[i] = x[i] + 0.5 * dt * k2[i]
        st = rhs(tmp, k3, n, m, tv, inv_mass, friction, cos_star, spring, damper, est_gain,
                 leader, z_star, dz, v_star, dv, scale_on, vel_on)
        if st != OK:
            return log[:rows], st, step - 1
        for i in range(size):
            tmp[i] = x[i] + dt * k3[i]
        st = rhs(tmp, k4, n, m, tv, inv_mass, friction, cos_star, spring, damper, est_gain,
                 leader, z_star, dz, v_star, dv, scale_on, vel_on)
        if st != OK:
            return log[:rows], st, step - 1
        for i in range(size):
            x[i] = x[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(x[i]):
                return log[:rows], NONFINITE, step - 1
        if step % stride == 0:
            log[rows] = x
            rows += 1
    return log[:rows], OK, n_steps
