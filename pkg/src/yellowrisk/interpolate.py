"""Shape-preserving piecewise cubic Hermite interpolation (PCHIP).

Interior slopes are the weighted harmonic mean of the neighbouring secants,
set to zero at local extrema; end slopes use the one-sided three-point
formula, limited so the curve stays monotone on the end segments.
Between two knots the interpolant never leaves the range of the two knot
values. Outside the knot range the end values are held constant.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError


def _edge_slope(h0: float, h1: float, m0: float, m1: float) -> float:
    d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > 3 * abs(m0):
        return 3 * m0
    return d


def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    m = np.diff(y) / h
    n = len(x)
    if n == 2:
        return np.array([m[0], m[0]])
    d = np.zeros(n)
    for k in range(1, n - 1):
        if m[k - 1] == 0 or m[k] == 0 or np.sign(m[k - 1]) != np.sign(m[k]):
            continue
        w1 = 2 * h[k] + h[k - 1]
        w2 = h[k] + 2 * h[k - 1]
        d[k] = (w1 + w2) * m[k - 1] * m[k] / (w1 * m[k] + w2 * m[k - 1])
    d[0] = _edge_slope(h[0], h[1], m[0], m[1])
    d[-1] = _edge_slope(h[-1], h[-2], m[-1], m[-2])
    return d


class MonotoneCubic:
    """Callable PCHIP interpolant with constant extrapolation.

    Parameters
    ----------
    x : array_like
        Strictly increasing knot abscissae (at least two).
    y : array_like
        Knot values.
    """

    def __init__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape or len(x) < 2:
            raise InputError("need at least two knots with matching x and y")
        if np.any(np.diff(x) <= 0):
            raise InputError("knot abscissae must be strictly increasing")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise InputError("knots must be finite")
        self.x = x
        self.y = y
        self.slopes = pchip_slopes(x, y)
        h = np.diff(x)
        m = np.diff(y) / h
        d0, d1 = self.slopes[:-1], self.slopes[1:]
        # local polynomial y_k + s*(c1 + s*(c2 + s*c3)) with s = x - x_k
        self.c1 = d0
        self.c2 = (3 * m - 2 * d0 - d1) / h
        self.c3 = (d0 + d1 - 2 * m) / (h * h)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=np.float64)
        k = np.clip(np.searchsorted(self.x, xi, side="right") - 1, 0, len(self.x) - 2)
        s = xi - self.x[k]
        out = self.y[k] + s * (self.c1[k] + s * (self.c2[k] + s * self.c3[k]))
        out = np.where(xi <= self.x[0], self.y[0], out)
        out = np.where(xi >= self.x[-1], self.y[-1], out)
        return out if out.ndim else float(out)
