"""Harmonic-oscillator analysis of the integrators.

Everything here concerns the unit oscillator ``dtheta/dt = p, dp/dt = -theta``: the
one-step matrix, its stability interval, the rotation/eccentricity pair ``(chi, alpha)``,
the L-independent energy-error bound ``rho`` and the minimax coefficient search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import minimize_scalar

from splithmc.integrators import IntegratorScheme, _shear_product, c_from_b, get_scheme, linear_leg_matrix


class StabilityError(ValueError):
    """Step length outside the stability interval (or at a degenerate resonance)."""


@dataclass(frozen=True)
class OneStepMatrix:
    m11: float
    m12: float
    m21: float
    m22: float

    @property
    def det(self):
        return self.m11 * self.m22 - self.m12 * self.m21

    @property
    def trace(self):
        return self.m11 + self.m22

    def as_array(self) -> np.ndarray:
        return np.array([[self.m11, self.m12], [self.m21, self.m22]])

    def __matmul__(self, other):
        return self.as_array() @ other


def one_step_matrix(scheme, epsilon) -> OneStepMatrix:
    """Product of the elementary shears for one step of size ``epsilon``."""
    scheme = get_scheme(scheme)
    return OneStepMatrix(*_shear_product(scheme.kicks, scheme.drifts, epsilon))


def leg_matrix(scheme, epsilon, L: int) -> OneStepMatrix:
    return OneStepMatrix(*linear_leg_matrix(scheme, epsilon, L))


def trace_polynomial(scheme) -> Polynomial:
    """Trace of the one-step matrix as an exact polynomial in the step length."""
    scheme = get_scheme(scheme)
    one, zero, x = Polynomial([1.0]), Polynomial([0.0]), Polynomial([0.0, 1.0])
    m11, m12, m21, m22 = one, zero, zero, one
    for i, k in enumerate(scheme.kicks):
        m21, m22 = m21 - k * x * m11, m22 - k * x * m12
        if i < len(scheme.drifts):
            d = scheme.drifts[i] * x
            m11, m12 = m11 + d * m21, m12 + d * m22
    return m11 + m22


def stability_interval_length(scheme, tol: float = 1e-10, upper: float = 20.0,
                              grid_step: float = 1e-4) -> float:
    """Length eta of the stability interval (0, eta).

    The first point where ``|trace| - 2`` turns positive is bracketed on a uniform grid
    and refined by bisection. Tangential touches of ``|trace| = 2`` (where the step
    matrix is +-I, e.g. LF at eps = 3) do not end the interval.
    """
    tr = trace_polynomial(scheme)

    def excess(x):
        return np.abs(tr(x)) - 2.0

    # Rounding at a double root stays far below this; real crossings grow linearly.
    touch = 1e-9
    xs = np.arange(grid_step, upper + grid_step, grid_step)
    bad = np.nonzero(excess(xs) > touch)[0]
    if bad.size == 0:
        raise StabilityError(f"no instability found below {upper}")
    hi = xs[bad[0]]
    lo = xs[bad[0] - 1] if bad[0] > 0 else 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ChiAlpha:
    chi: float
    alpha: float

    def matrix(self, L: int = 1) -> np.ndarray:
        """Rebuild the L-step propagator from (chi, alpha)."""
        s, c = math.sin(L * self.alpha), math.cos(L * self.alpha)
        return np.array([[c, self.chi * s], [-s / self.chi, c]])


def chi_alpha(scheme, epsilon: float) -> ChiAlpha:
    """Eccentricity ``chi > 0`` and rotation angle ``alpha`` of one step.

    ``alpha`` is ``arccos(m11)`` with the sign of ``m12`` so that ``m12 = chi sin(alpha)``;
    it lies in (0, pi) whenever ``m12 > 0``, which holds on the leading part of every
    stability interval.
    """
    m = one_step_matrix(scheme, epsilon)
    cos_a = 0.5 * m.trace
    if abs(cos_a) >= 1.0:
        raise StabilityError(f"epsilon={epsilon} is outside the stability interval")
    if m.m12 * m.m21 >= 0.0:
        raise StabilityError(f"degenerate step matrix at epsilon={epsilon} (m12*m21 >= 0)")
    alpha = math.copysign(math.acos(cos_a), m.m12)
    chi = math.sqrt(m.m12 / -m.m21)
    return ChiAlpha(chi, alpha)


def _rho_from_matrix(m11, m12, m21):
    # 0.5 (chi - 1/chi)^2 written without chi; -m12 m21 = 1 - m11^2 = sin^2 alpha.
    return (m12 + m21) ** 2 / (-2.0 * m12 * m21)


def rho(scheme, zeta):
    """Upper bound 0.5 (chi - 1/chi)^2 of E(Delta H) on the unit Gaussian, any L.

    Accepts a scalar or an array of scaled step lengths ``zeta = eps / sigma``.
    """
    zeta_arr = np.asarray(zeta, dtype=float)
    m11, m12, m21, m22 = _shear_product(get_scheme(scheme).kicks, get_scheme(scheme).drifts, zeta_arr)
    ok = (np.abs(0.5 * (m11 + m22)) < 1.0) & (m12 * m21 < 0.0)
    if not np.all(ok):
        bad = zeta_arr[~ok] if zeta_arr.ndim else zeta_arr
        raise StabilityError(f"zeta={np.ravel(bad)[:3]} outside the stability interval")
    out = _rho_from_matrix(m11, m12, m21)
    return float(out) if np.ndim(out) == 0 else out


def rho_inf(scheme, window: float = 3.0, n_grid: int = 20000) -> float:
    """max of rho over (0, window), by dense grid plus bounded local refinement."""
    scheme = get_scheme(scheme)
    eta = stability_interval_length(scheme)
    if eta <= window:
        raise StabilityError(
            f"scheme {scheme} (eta={eta:.4f}) is unstable within the optimization window (0, {window})"
        )
    z = np.linspace(0.0, window, n_grid + 2)[1:-1]
    r = rho(scheme, z)
    best = float(r.max())
    # Refine the leading local maxima; the global one may sit on the window edge.
    interior = np.nonzero((r[1:-1] >= r[:-2]) & (r[1:-1] >= r[2:]))[0] + 1
    candidates = sorted(interior, key=lambda i: -r[i])[:4]
    h = z[1] - z[0]
    for i in candidates:
        lo, hi = max(z[i] - h, 1e-12), min(z[i] + h, window)
        res = minimize_scalar(lambda x: -rho(scheme, x), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14})
        best = max(best, -float(res.fun))
    # The supremum is often the limit at the window edge (rho increasing there).
    try:
        edge = rho(scheme, window)
    except StabilityError:
        # e.g. LF, whose step matrix is -I exactly at zeta = 3: linear extrapolation
        # of the one-sided limit (0/0 rounding is ~1e-16/delta, truncation ~delta^2).
        delta = 1e-5 * window
        edge = 2.0 * rho(scheme, window - delta) - rho(scheme, window - 2.0 * delta)
    return max(best, edge)


def rho_inf_of_b(b: float) -> float:
    return rho_inf(IntegratorScheme.from_b(b))


def _golden_section(f, lo, hi, tol):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    trace = []
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        trace.append((0.5 * (a + b), min(fc, fd)))
    return 0.5 * (a + b), trace


def derive_optimal_b(lo: float = 0.33, hi: float = 0.45, n_grid: int = 121, tol: float = 1e-9,
                     return_trace: bool = False):
    """Coefficient b in [lo, hi] minimising rho_inf (grid search, then golden section)."""
    bs = np.linspace(lo, hi, n_grid)
    values = np.array([rho_inf_of_b(b) for b in bs])
    i = int(np.argmin(values))
    a, c = bs[max(i - 1, 0)], bs[min(i + 1, n_grid - 1)]
    b_opt, trace = _golden_section(rho_inf_of_b, a, c, tol)
    if return_trace:
        grid = list(zip(bs.tolist(), values.tolist()))
        return b_opt, grid, trace
    return b_opt


__all__ = [
    "ChiAlpha",
    "OneStepMatrix",
    "StabilityError",
    "c_from_b",
    "chi_alpha",
    "derive_optimal_b",
    "leg_matrix",
    "one_step_matrix",
    "rho",
    "rho_inf",
    "stability_interval_length",
    "trace_polynomial",
]
