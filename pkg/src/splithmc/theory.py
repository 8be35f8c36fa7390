"""Closed-form energy-error and acceptance results for Gaussian targets.

For the unit Gaussian (unit mass) a leg of ``L`` steps maps ``(theta, p)`` linearly and
the energy increment is the quadratic form ``2 dH = A theta^2 + 2 B theta p + C p^2``.
At stationarity its mean ``mu`` determines the expected acceptance rate and the
higher moments, whatever the integrator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from splithmc.integrators import _shear_product, get_scheme
from splithmc.oscillator import StabilityError, chi_alpha, rho


@dataclass(frozen=True)
class QuadraticEnergyForm:
    A: float
    B: float
    C: float

    def delta_h(self, theta, p):
        """Energy increment 0.5 (A theta^2 + 2 B theta p + C p^2)."""
        return 0.5 * (self.A * theta**2 + 2.0 * self.B * theta * p + self.C * p**2)

    @property
    def discriminant_gap(self) -> float:
        """(B^2 - AC) - (A + C); zero up to rounding."""
        return self.B**2 - self.A * self.C - (self.A + self.C)


def quadratic_form(scheme, epsilon: float, L: int) -> QuadraticEnergyForm:
    ca = chi_alpha(scheme, epsilon)
    s, c = math.sin(L * ca.alpha), math.cos(L * ca.alpha)
    chi = ca.chi
    return QuadraticEnergyForm(
        A=s * s * (chi**-2 - 1.0),
        B=c * s * (chi - 1.0 / chi),
        C=s * s * (chi**2 - 1.0),
    )


def expected_delta_h(scheme, epsilon: float, L: int) -> float:
    """Stationary E(Delta H) = sin^2(L alpha) rho(eps) for the unit Gaussian."""
    q = quadratic_form(scheme, epsilon, L)
    return 0.5 * (q.A + q.C)


def _check_mu(mu):
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0) or np.any(np.isnan(mu)):
        raise ValueError("expected energy error must be non-negative")
    return mu


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def expected_acceptance_univariate(mu):
    """E(a) = 1 - (2/pi) arctan sqrt(mu/2), valid for any reversible volume-preserving scheme."""
    mu = _check_mu(mu)
    return _out(1.0 - (2.0 / np.pi) * np.arctan(np.sqrt(mu / 2.0)))


@dataclass(frozen=True)
class AcceptancePrediction:
    value: float
    mu: float
    degenerate: bool


def predicted_acceptance(scheme, epsilon: float, L: int) -> AcceptancePrediction:
    """Expected acceptance on the unit Gaussian.

    When ``sin(L alpha) = 0`` (or ``chi = 1``) Delta H vanishes identically; the value is 1
    and ``degenerate`` is set since P(Delta H = 0) = 1 there.
    """
    try:
        mu = expected_delta_h(scheme, epsilon, L)
    except StabilityError as exc:
        if "degenerate" not in str(exc):
            raise
        return AcceptancePrediction(1.0, 0.0, True)
    # sin(L alpha) = 0 only up to rounding, which leaves mu ~ 1e-32 rho
    degenerate = mu <= 1e-20 * rho(scheme, epsilon)
    return AcceptancePrediction(expected_acceptance_univariate(mu), mu, degenerate)


def delta_h_moments(mu):
    """Second, third and fourth moments of Delta H as polynomials in mu = E(Delta H)."""
    mu = _check_mu(mu)
    m2 = 2 * mu + 3 * mu**2
    m3 = 18 * mu**2 + 15 * mu**3
    m4 = 36 * mu**2 + 180 * mu**3 + 105 * mu**4
    return _out(m2), _out(m3), _out(m4)


def std_normal_cdf(x):
    return _out(0.5 * erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0)))


def gupta_acceptance(mu):
    """Large-dimension acceptance 2 Phi(-sqrt(mu/2)) for Delta H ~ N(mu, 2 mu)."""
    mu = _check_mu(mu)
    # 2 Phi(-x) = erfc(x / sqrt 2) with x = sqrt(mu / 2)
    return _out(erfc(np.sqrt(mu) / 2.0))


def leapfrog_energy_bound(eps_over_sigma):
    """(zeta^4 / 32) / (1 - zeta^2 / 4), the leapfrog bound on E(Delta H) for 0 < zeta < 2."""
    z = np.asarray(eps_over_sigma, dtype=float)
    if np.any(z <= 0) or np.any(z >= 2):
        raise ValueError("leapfrog bound needs 0 < eps/sigma < 2")
    return _out((z**4 / 32.0) / (1.0 - z**2 / 4.0))


def theorem1_curve(mu_grid):
    mu = np.asarray(mu_grid, dtype=float)
    return np.column_stack([mu, expected_acceptance_univariate(mu)])


def gupta_curve(mu_grid):
    mu = np.asarray(mu_grid, dtype=float)
    return np.column_stack([mu, gupta_acceptance(mu)])


def component_expected_delta_h(scheme, zeta, L: int):
    """E(Delta H) per component of a diagonal Gaussian at scaled steps ``zeta = eps/sigma_j``.

    Vectorised over ``zeta``; unstable components give ``inf``.
    """
    scheme = get_scheme(scheme)
    zeta = np.asarray(zeta, dtype=float)
    m11, m12, m21, m22 = _shear_product(scheme.kicks, scheme.drifts, zeta)
    cos_a = 0.5 * (m11 + m22)
    stable = (np.abs(cos_a) < 1.0) & (m12 * m21 < 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = np.arccos(np.clip(cos_a, -1.0, 1.0))
        rho = (m12 + m21) ** 2 / (-2.0 * m12 * m21)
        mu = np.sin(L * alpha) ** 2 * rho
    resonant = (np.abs(cos_a) < 1.0) & ~stable
    mu = np.where(stable, mu, np.inf)
    return np.where(resonant, 0.0, mu)


def gaussian_expected_delta_h(sigmas, scheme, epsilon: float, L: int, jitter: float = 0.0,
                              n_quad: int = 64) -> float:
    """Stationary E(Delta H) for a diagonal Gaussian, optionally averaged over eps jitter.

    With ``jitter = h`` the step is ``(1 + u) eps`` with ``u ~ U(-h, h)``; the average is
    computed by Gauss-Legendre quadrature in ``u``.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    if jitter == 0.0:
        return float(np.sum(component_expected_delta_h(scheme, epsilon / sigmas, L)))
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    total = 0.0
    for u, w in zip(jitter * nodes, weights):
        total += 0.5 * w * np.sum(component_expected_delta_h(scheme, (1.0 + u) * epsilon / sigmas, L))
    return float(total)
