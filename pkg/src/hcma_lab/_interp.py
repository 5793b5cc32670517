"""Interpolation and monotone-inversion kernels.

Periodic data is represented by trigonometric interpolants (exact for
band-limited samples, spectrally accurate for smooth ones), so construction
errors stay far below the second-order stencils used by every checker.
Non-periodic (sphere) data uses cubic splines.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import NonMonotoneInversion


class TrigInterp:
    """Trigonometric interpolant of n equispaced samples on one period.

    Samples live at ``origin + period * k/n``. The Nyquist mode (even n) is
    kept as a pure cosine, which is the unique real interpolant choice.
    """

    def __init__(self, values: np.ndarray, period: float = 1.0, origin: float = 0.0):
        values = np.asarray(values, dtype=float)
        n = values.size
        coef = np.fft.rfft(values)
        self.n = n
        self.period = float(period)
        self.origin = float(origin)
        self._a = 2.0 * coef.real / n
        self._b = -2.0 * coef.imag / n
        self._a[0] *= 0.5
        if n % 2 == 0:
            self._a[-1] *= 0.5
            self._b[-1] = 0.0
        self._m = np.arange(self._a.size)

    def _phases(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * np.pi * np.multiply.outer(self._m, (x - self.origin) / self.period)

    def __call__(self, x):
        ph = self._phases(x)
        return self._a @ np.cos(ph) + self._b @ np.sin(ph)

    def derivative(self, x):
        ph = self._phases(x)
        w = 2.0 * np.pi * self._m / self.period
        return (-self._a * w) @ np.sin(ph) + (self._b * w) @ np.cos(ph)

    def second_derivative(self, x):
        ph = self._phases(x)
        w2 = (2.0 * np.pi * self._m / self.period) ** 2
        return (-self._a * w2) @ np.cos(ph) + (-self._b * w2) @ np.sin(ph)


def invert_monotone(f, df, targets, lo, hi, tol=1e-13, max_iter=80):
    """Solve f(x) = target for strictly increasing smooth f, vectorized.

    ``lo``/``hi`` bracket every root. Newton steps are clipped to the moving
    bracket; nodes whose Newton step escapes fall back to bisection for that
    sweep. Raises NonMonotoneInversion when the bracket never tightens.
    """
    targets = np.asarray(targets, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), targets.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), targets.shape).copy()
    x = 0.5 * (lo + hi)
    scale = max(1.0, float(np.max(np.abs(targets))))
    for _ in range(max_iter):
        fx = f(x) - targets
        if np.all(np.abs(fx) <= tol * scale):
            return x
        above = fx > 0.0
        hi = np.where(above, np.minimum(hi, x), hi)
        lo = np.where(~above, np.maximum(lo, x), lo)
        d = df(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = fx / d
        x_new = x - step
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
        x = np.where(bad, 0.5 * (lo + hi), x_new)
        if np.any(hi - lo < 0):
            raise NonMonotoneInversion("bracket collapsed; map is not monotone on the grid")
    fx = f(x) - targets
    if np.max(np.abs(fx)) > 1e6 * tol * scale:
        raise NonMonotoneInversion(
            f"inversion stalled: residual {np.max(np.abs(fx)):.3g} exceeds tolerance"
        )
    return x


def spline(x, y):
    return CubicSpline(np.asarray(x, float), np.asarray(y, float))


def periodic_spline_from_scatter(positions, values, period):
    """Cubic periodic spline through scattered (strictly increasing) positions.

    The first point is re-appended one period up so scipy's periodic boundary
    sees matching end values.
    """
    positions = np.asarray(positions, float)
    values = np.asarray(values, float)
    order = np.argsort(positions)
    p = positions[order]
    v = values[order]
    p_ext = np.append(p, p[0] + period)
    v_ext = np.append(v, v[0])
    return CubicSpline(p_ext, v_ext, bc_type="periodic"), p[0]
