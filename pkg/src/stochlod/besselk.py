"""Modified Bessel functions of the second kind.

``k1`` is the production path (series below x = 2, Steed's continued fraction
above).  ``kv_quad`` integrates ``K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt``
with the trapezoidal rule, which converges geometrically for this integrand;
it serves general orders and as an independent reference for ``k1``.
"""
from __future__ import annotations

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
SERIES_SWITCH = 2.0
_SERIES_TERMS = 30
_CF_MAXIT = 10000
_CF_EPS = 1e-16


def _k1_series(x: np.ndarray) -> np.ndarray:
    q = 0.25 * x * x
    term = np.ones_like(x)
    i1_sum = np.zeros_like(x)
    psi_sum = np.zeros_like(x)
    psi_k1 = -EULER_GAMMA        # psi(k + 1)
    psi_k2 = 1.0 - EULER_GAMMA   # psi(k + 2)
    for k in range(_SERIES_TERMS):
        i1_sum += term
        psi_sum += (psi_k1 + psi_k2) * term
        psi_k1 += 1.0 / (k + 1)
        psi_k2 += 1.0 / (k + 2)
        term = term * q / ((k + 1) * (k + 2))
    i1 = 0.5 * x * i1_sum
    return 1.0 / x + np.log(0.5 * x) * i1 - 0.25 * x * psi_sum


def _k1_steed(x: np.ndarray) -> np.ndarray:
    # Steed's method for the order-zero ratio, then K1 = K0 (x + 1/2 - h) / x.
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    a1 = 0.25
    q = np.full_like(x, a1)
    c = a1
    a = -a1
    s = 1.0 + q * delh
    active = np.ones(x.shape, dtype=bool)
    for i in range(1, _CF_MAXIT):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh_new = (b * d - 1.0) * delh
        delh = np.where(active, delh_new, 0.0)
        h = h + delh
        dels = q * delh
        s = s + dels
        active &= np.abs(dels / s) >= _CF_EPS
        if not active.any():
            break
    else:  # pragma: no cover
        raise RuntimeError("continued fraction for K1 did not converge")
    h = a1 * h
    k0 = np.sqrt(math.pi / (2.0 * x)) * np.exp(-x) / s
    return k0 * (x + 0.5 - h) / x


def k1(x):
    """K_1(x) for x > 0, elementwise."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("K_1 requires x > 0")
    out = np.empty_like(x)
    lo = x <= SERIES_SWITCH
    if lo.any():
        out[lo] = _k1_series(x[lo])
    if (~lo).any():
        out[~lo] = _k1_steed(x[~lo])
    return out if out.ndim else float(out)


def kv_quad(nu: float, x, step: float = 1.0 / 32.0):
    """K_nu(x) by trapezoidal quadrature of the cosh integral representation."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("K_nu requires x > 0")
    xmin = float(np.min(x))
    nu = abs(nu)
    t_max = 1.0
    while xmin * (math.cosh(t_max) - 1.0) - nu * t_max < 745.0:
        t_max += 0.5
    t = np.arange(0.0, t_max + step, step)
    w = np.full(t.shape, step)
    w[0] = 0.5 * step
    xs = x.reshape(-1, 1)
    # shift by exp(-x) for range, restored afterwards
    integrand = np.exp(-xs * (np.cosh(t) - 1.0) + nu * t) * 0.5 * (1.0 + np.exp(-2.0 * nu * t))
    out = (integrand @ w) * np.exp(-x.ravel())
    out = out.reshape(x.shape)
    return out if out.ndim else float(out)
