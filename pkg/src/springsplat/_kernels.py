"""Compiled per-edge loops for the force evaluation and its adjoint.

Both loops walk each anchor's neighbor row in stored order, so sums are
reproducible bit for bit.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _spow(dl, e):
    if dl > 0.0:
        return dl ** e
    if dl < 0.0:
        return -((-dl) ** e)
    return 0.0


@njit(cache=True)
def forces(x, v, nbr, rest, k, eta, p_k, damping, mass, gravity):
    n, m = nbr.shape
    out = np.empty((n, 3))
    e = 1.0 + p_k
    for i in range(n):
        sx = 0.0
        sy = 0.0
        sz = 0.0
        dx_ = 0.0
        dy_ = 0.0
        dz_ = 0.0
        for s in range(m):
            j = nbr[i, s]
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            dz = x[i, 2] - x[j, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            if r > 0.0:
                ux = dx / r
                uy = dy / r
                uz = dz / r
                l = rest[i, s]
                a = (k[i] / l) * eta[s] * _spow(r - l, e)
                sx -= a * ux
                sy -= a * uy
                sz -= a * uz
                q = (v[i, 0] - v[j, 0]) * ux + (v[i, 1] - v[j, 1]) * uy + (v[i, 2] - v[j, 2]) * uz
                c = (damping / l) * q
                dx_ -= c * ux
                dy_ -= c * uy
                dz_ -= c * uz
        out[i, 0] = sx + dx_ + mass * gravity[0]
        out[i, 1] = sy + dy_ + mass * gravity[1]
        out[i, 2] = sz + dz_ + mass * gravity[2]
    return out


@njit(cache=True)
def force_vjp(x, v, gf, nbr, rest, k, eta, p_k, damping):
    """Adjoint of ``forces``: returns d/dx, d/dv, d/dk and d/deta of ``sum(gf * F)``."""
    n, m = nbr.shape
    gx = np.zeros((n, 3))
    gv = np.zeros((n, 3))
    gk = np.zeros(n)
    geta = np.zeros(m)
    e = 1.0 + p_k
    for i in range(n):
        g0 = gf[i, 0]
        g1 = gf[i, 1]
        g2 = gf[i, 2]
        for s in range(m):
            j = nbr[i, s]
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            dz = x[i, 2] - x[j, 2]
            r = math.sqrt(dx * dx + dy * dy + dz * dz)
            if r <= 0.0:
                continue
            ux = dx / r
            uy = dy / r
            uz = dz / r
            l = rest[i, s]
            ug = ux * g0 + uy * g1 + uz * g2
            px = g0 - ug * ux
            py = g1 - ug * uy
            pz = g2 - ug * uz

            dl = r - l
            k_edge = k[i] / l
            stiff = k_edge * eta[s]
            mag = _spow(dl, e)
            a = stiff * mag
            da = stiff * e * abs(dl) ** p_k
            g_stiff = -mag * ug
            gk[i] += g_stiff * eta[s] / l
            geta[s] += g_stiff * k_edge

            zeta = damping / l
            wx = v[i, 0] - v[j, 0]
            wy = v[i, 1] - v[j, 1]
            wz = v[i, 2] - v[j, 2]
            q = wx * ux + wy * uy + wz * uz
            cw = -zeta * ug
            gv[i, 0] += cw * ux
            gv[i, 1] += cw * uy
            gv[i, 2] += cw * uz
            gv[j, 0] -= cw * ux
            gv[j, 1] -= cw * uy
            gv[j, 2] -= cw * uz

            cr = -zeta / r
            ddx = -da * ug * ux - (a / r) * px + cr * (ug * (wx - q * ux) + q * px)
            ddy = -da * ug * uy - (a / r) * py + cr * (ug * (wy - q * uy) + q * py)
            ddz = -da * ug * uz - (a / r) * pz + cr * (ug * (wz - q * uz) + q * pz)
            gx[i, 0] += ddx
            gx[i, 1] += ddy
            gx[i, 2] += ddz
            gx[j, 0] -= ddx
            gx[j, 1] -= ddy
            gx[j, 2] -= ddz
    return gx, gv, gk, geta
