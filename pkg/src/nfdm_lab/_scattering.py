"""Compiled kernels for the dual-polarisation Zakharov-Shabat scattering problem.

Time cell ``k`` covers ``[tau_left + k*h, tau_left + (k+1)*h]``. Every kernel
returns the scattering data referred to the right edge of the window.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def forward_al(q1, q2, h, tau_left, lam):
    """Unitary Ablowitz-Ladik transfer-matrix stepping."""
    n = q1.size
    m_pts = lam.size
    a = np.empty(m_pts, np.complex128)
    b1 = np.empty(m_pts, np.complex128)
    b2 = np.empty(m_pts, np.complex128)
    p1 = h * q1
    p2 = h * q2
    c = 1.0 / np.sqrt(1.0 + np.abs(p1) ** 2 + np.abs(p2) ** 2)
    g = c * c / (1.0 + c)
    tau_right = tau_left + n * h
    for m in range(m_pts):
        lm = lam[m]
        z = np.exp(-1j * lm * h)
        zi = np.conj(z)
        v0 = np.exp(-1j * lm * tau_left)
        v1 = 0j
        v2 = 0j
        for k in range(n):
            x1 = p1[k]
            x2 = p2[k]
            proj = x1 * v1 + x2 * v2
            n0 = c[k] * (z * v0 + proj)
            t = zi * proj * g[k]
            n1 = -c[k] * np.conj(x1) * v0 + zi * v1 - np.conj(x1) * t
            n2 = -c[k] * np.conj(x2) * v0 + zi * v2 - np.conj(x2) * t
            v0, v1, v2 = n0, n1, n2
        a[m] = np.exp(1j * lm * tau_right) * v0
        b1[m] = np.exp(-1j * lm * tau_right) * v1
        b2[m] = np.exp(-1j * lm * tau_right) * v2
    return a, b1, b2


@nb.njit(cache=True, nogil=True)
def forward_piecewise(q1, q2, h, tau_left, lam):
    """Exact propagation through a piecewise-constant potential.

    In each cell the 3x3 system splits into a 2x2 Zakharov-Shabat block along
    the direction of ``conj(q)`` and a free component orthogonal to it.
    """
    n = q1.size
    m_pts = lam.size
    a = np.empty(m_pts, np.complex128)
    b1 = np.empty(m_pts, np.complex128)
    b2 = np.empty(m_pts, np.complex128)
    amp2 = np.abs(q1) ** 2 + np.abs(q2) ** 2
    tau_right = tau_left + n * h
    for m in range(m_pts):
        lm = lam[m]
        mu = abs(lm)
        sg = 1.0 if lm >= 0 else -1.0
        ep = np.exp(1j * lm * h)
        sin_mu = np.sin(mu * h)
        v0 = np.exp(-1j * lm * tau_left)
        v1 = 0j
        v2 = 0j
        for k in range(n):
            s2 = amp2[k]
            if s2 == 0.0:
                v0 = v0 * np.conj(ep)
                v1 = v1 * ep
                v2 = v2 * ep
                continue
            kap = np.sqrt(lm * lm + s2)
            kpm = kap + mu
            # kap - mu evaluated without cancellation
            x = 0.5 * h * s2 / kpm
            half = 0.5 * kpm * h
            sh = np.sin(half)
            chh = np.cos(half)
            sx = np.sin(x)
            cx = np.cos(x)
            cos_k = chh * cx - sh * sx
            sinc_k = (sh * cx + chh * sx) / kap
            if x > 1e-6:
                ratio = sx / x
            else:
                ratio = 1.0 - x * x / 6.0
            s_term = 0.5 * h / kpm * ratio
            # ((cos + j lam sin/kap) - exp(j lam h)) / |q|^2
            fr = -2.0 * sh * s_term
            fi = sg * ((mu / kap) * 2.0 * chh * s_term - sin_mu / (kap * kpm))
            x1 = q1[k]
            x2 = q2[k]
            proj = x1 * v1 + x2 * v2
            n0 = (cos_k - 1j * lm * sinc_k) * v0 + sinc_k * proj
            f = (fr + 1j * fi) * proj
            n1 = -sinc_k * np.conj(x1) * v0 + ep * v1 + f * np.conj(x1)
            n2 = -sinc_k * np.conj(x2) * v0 + ep * v2 + f * np.conj(x2)
            v0, v1, v2 = n0, n1, n2
        a[m] = np.exp(1j * lm * tau_right) * v0
        b1[m] = np.exp(-1j * lm * tau_right) * v1
        b2[m] = np.exp(-1j * lm * tau_right) * v2
    return a, b1, b2


@nb.njit(cache=True, nogil=True)
def peel_al(alpha, beta1, beta2, h):
    """Layer-peel the polynomial scattering data of the Ablowitz-Ladik chain.

    ``alpha``, ``beta1`` and ``beta2`` are the coefficient sequences of the
    scattering data as polynomials in ``exp(2j*lam*h)``; samples are recovered
    from the last one backwards.
    """
    n = alpha.size
    al = alpha.copy()
    b1 = beta1.copy()
    b2 = beta2.copy()
    q1 = np.empty(n, np.complex128)
    q2 = np.empty(n, np.complex128)
    for k in range(n - 1, -1, -1):
        r1 = -b1[0] / al[0]
        r2 = -b2[0] / al[0]
        p1 = np.conj(r1)
        p2 = np.conj(r2)
        s = abs(p1) ** 2 + abs(p2) ** 2
        c = 1.0 / np.sqrt(1.0 + s)
        g = c * c / (1.0 + c)
        for i in range(k):
            proj_lo = p1 * b1[i] + p2 * b2[i]
            proj_hi = p1 * b1[i + 1] + p2 * b2[i + 1]
            na = c * (al[i] - proj_lo)
            nb1 = c * r1 * al[i + 1] + b1[i + 1] - g * r1 * proj_hi
            nb2 = c * r2 * al[i + 1] + b2[i + 1] - g * r2 * proj_hi
            al[i] = na
            b1[i] = nb1
            b2[i] = nb2
        q1[k] = p1 / h
        q2[k] = p2 / h
    return q1, q2
