"""Compiled inner loops: the Riccati-like backward sweep and the car rollout.

Everything here works on plain arrays with explicit loops; the Python-level
modules do the vectorized derivative evaluation and bookkeeping.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _cholesky(a, out):
    """Lower Cholesky factor of ``a`` into ``out``; returns False if not PD."""
    n = a.shape[0]
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not s > 0.0:
            return False
        d = np.sqrt(s)
        out[j, j] = d
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / d
        for i in range(j):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def _cho_solve_neg(L, b, out):
    """Solve ``L L^T out = -b`` column by column (``b`` is n x m)."""
    n, m = b.shape
    y = np.empty(n)
    for c in range(m):
        for i in range(n):
            s = -b[i, c]
            for k in range(i):
                s -= L[i, k] * y[k]
            y[i] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = y[i]
            for k in range(i + 1, n):
                s -= L[k, i] * out[k, c]
            out[i, c] = s / L[i, i]


@njit(cache=True)
def backward_kernel(fx, fu, lx, lu, lxx, lux, luu, lfx, lfxx, reg):
    B, T, nx, _ = fx.shape
    nu = fu.shape[3]
    Q_x = np.zeros((B, T, nx))
    Q_u = np.zeros((B, T, nu))
    Q_xx = np.zeros((B, T, nx, nx))
    Q_ux = np.zeros((B, T, nu, nx))
    Q_uu = np.zeros((B, T, nu, nu))
    V_x = np.zeros((B, T + 1, nx))
    V_xx = np.zeros((B, T + 1, nx, nx))
    kappa = np.zeros((B, T, nu))
    K = np.zeros((B, T, nu, nx))
    ok = np.ones(B, dtype=np.bool_)
    red = np.zeros(B)

    L = np.zeros((nu, nu))
    rhs = np.empty((nu, 1 + nx))
    sol = np.empty((nu, 1 + nx))
    VA = np.empty((nx, nx))
    VB = np.empty((nx, nu))
    for b in range(B):
        V_x[b, T] = lfx[b]
        V_xx[b, T] = lfxx[b]
        for t in range(T - 1, -1, -1):
            A = fx[b, t]
            Bm = fu[b, t]
            vx = V_x[b, t + 1]
            vxx = V_xx[b, t + 1]
            for i in range(nx):
                for j in range(nx):
                    s = 0.0
                    for k in range(nx):
                        s += vxx[i, k] * A[k, j]
                    VA[i, j] = s
                for j in range(nu):
                    s = 0.0
                    for k in range(nx):
                        s += vxx[i, k] * Bm[k, j]
                    VB[i, j] = s
            qx = Q_x[b, t]
            qxx = Q_xx[b, t]
            for i in range(nx):
                s = lx[b, t, i]
                for k in range(nx):
                    s += A[k, i] * vx[k]
                qx[i] = s
                for j in range(nx):
                    s = lxx[b, t, i, j]
                    for k in range(nx):
                        s += A[k, i] * VA[k, j]
                    qxx[i, j] = s
            qu = Q_u[b, t]
            qux = Q_ux[b, t]
            quu = Q_uu[b, t]
            for i in range(nu):
                s = lu[b, t, i]
                for k in range(nx):
                    s += Bm[k, i] * vx[k]
                qu[i] = s
                for j in range(nx):
                    s = lux[b, t, i, j]
                    for k in range(nx):
                        s += Bm[k, i] * VA[k, j]
                    qux[i, j] = s
                for j in range(nu):
                    s = luu[b, t, i, j]
                    for k in range(nx):
                        s += Bm[k, i] * VB[k, j]
                    quu[i, j] = s
            for i in range(nu):
                for j in range(i):
                    m = 0.5 * (quu[i, j] + quu[j, i])
                    quu[i, j] = m
                    quu[j, i] = m
                quu[i, i] += reg[b]
            if not _cholesky(quu, L):
                ok[b] = False
                break
            for i in range(nu):
                rhs[i, 0] = qu[i]
                for j in range(nx):
                    rhs[i, 1 + j] = qux[i, j]
            _cho_solve_neg(L, rhs, sol)
            kap = kappa[b, t]
            Kt = K[b, t]
            for i in range(nu):
                kap[i] = sol[i, 0]
                for j in range(nx):
                    Kt[i, j] = sol[i, 1 + j]
            dv = 0.0
            for i in range(nu):
                s = 0.0
                for j in range(nu):
                    s += quu[i, j] * kap[j]
                dv += kap[i] * qu[i] + 0.5 * kap[i] * s
            red[b] -= dv
            nvx = V_x[b, t]
            nvxx = V_xx[b, t]
            for i in range(nx):
                s = qx[i]
                for k in range(nu):
                    s += qux[k, i] * kap[k]
                nvx[i] = s
                for j in range(nx):
                    s = qxx[i, j]
                    for k in range(nu):
                        s += qux[k, i] * Kt[k, j]
                    nvxx[i, j] = s
            for i in range(nx):
                for j in range(i):
                    m = 0.5 * (nvxx[i, j] + nvxx[j, i])
                    nvxx[i, j] = m
                    nvxx[j, i] = m
    return Q_x, Q_u, Q_xx, Q_ux, Q_uu, V_x, V_xx, kappa, K, ok, red


@njit(cache=True)
def car_feedback_rollout(dt, x0, X, U, offsets, K, use_K):
    """Unicycle closed-loop rollouts, shapes as in ``ddp.feedback_rollout``."""
    B, S, T, nu = offsets.shape
    xs = np.empty((B, S, T + 1, 3))
    us = np.empty((B, S, T, nu))
    for b in range(B):
        for s in range(S):
            px, py, th = x0[0], x0[1], x0[2]
            xs[b, s, 0, 0] = px
            xs[b, s, 0, 1] = py
            xs[b, s, 0, 2] = th
            for t in range(T):
                v = U[b, t, 0] + offsets[b, s, t, 0]
                w = U[b, t, 1] + offsets[b, s, t, 1]
                if use_K:
                    d0 = px - X[b, t, 0]
                    d1 = py - X[b, t, 1]
                    d2 = th - X[b, t, 2]
                    v += K[b, t, 0, 0] * d0 + K[b, t, 0, 1] * d1 + K[b, t, 0, 2] * d2
                    w += K[b, t, 1, 0] * d0 + K[b, t, 1, 1] * d1 + K[b, t, 1, 2] * d2
                us[b, s, t, 0] = v
                us[b, s, t, 1] = w
                px, py, th = px + dt * v * np.cos(th), py + dt * v * np.sin(th), th + dt * w
                xs[b, s, t + 1, 0] = px
                xs[b, s, t + 1, 1] = py
                xs[b, s, t + 1, 2] = th
    return xs, us
