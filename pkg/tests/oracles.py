"""Independent reference computations used across the test modules."""
import numpy as np

GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def poisson_series(x, y, terms=4001):
    """Solution of -Laplace u = 1 with zero boundary values on the unit square.

    Uses ``u = x(1-x)/2 - sum_k 4 sin(k pi x) cosh(k pi (y-1/2)) / (pi^3 k^3 cosh(k pi/2))``
    over odd ``k``; the cosh ratio is evaluated in overflow-free form.
    Returns an array indexed ``[y, x]``.
    """
    x = np.asarray(x, dtype=float)
    d = np.abs(np.asarray(y, dtype=float) - 0.5)
    k = np.arange(1, terms, 2, dtype=float)
    ratio = (np.exp(np.pi * np.outer(d - 0.5, k)) * (1 + np.exp(-2 * np.pi * np.outer(d, k)))
             / (1 + np.exp(-np.pi * k)))
    sx = np.sin(np.pi * np.outer(x, k)) * (4.0 / (np.pi ** 3 * k ** 3))
    return 0.5 * x * (1 - x) - ratio @ sx.T


def l2_error_q1(u_img):
    """L2 distance between a nodal Q1 image and the series solution, 2x2 Gauss per cell."""
    n = u_img.shape[0] - 1
    h = 1.0 / n
    local = (GAUSS + 1.0) / 2.0
    pts = (np.arange(n)[:, None] + local[None, :]).ravel() * h
    exact = poisson_series(pts, pts)
    # bilinear interpolation of the nodal values at the same points
    idx = np.repeat(np.arange(n), 2)
    t = np.tile(local, n)
    wx0, wx1 = 1 - t, t
    ux = u_img[:, idx] * wx0 + u_img[:, idx + 1] * wx1
    uh = ux[idx, :] * wx0[:, None] + ux[idx + 1, :] * wx1[:, None]
    return float(np.sqrt(np.sum((uh - exact) ** 2) * h * h / 4.0))
