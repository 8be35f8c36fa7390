"""Leapfrog and the palindromic one-parameter splitting family.

One time-step of the family with coefficients ``(b, c)`` is the kick/drift sequence

    K((1/2 - b) eps) D(c eps) K(b eps) D((1 - 2c) eps) K(b eps) D(c eps) K((1/2 - b) eps)

where a kick ``K(h)`` is ``p <- p + h grad log pi(theta)`` and a drift ``D(h)`` is
``theta <- theta + h M^{-1} p``. With ``b + c - 6bc = 0`` the family keeps a long
stability interval; ``b = 1/3`` reproduces three leapfrog steps of length ``eps/3``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from splithmc.core import IDENTITY, MassMatrix, NonFiniteError, PhaseState, TargetModel

# Full precision matters: rounding these shortens the plateau of the energy error.
NAMED_B = {
    "lf": 1.0 / 3.0,
    "b035": 0.35,
    "blcasa": 0.38111989033452,
    "pretal": 0.391008574596575,
    "b040": 0.40,
    "b045": 0.45,
}
DISPLAY_NAMES = {
    "lf": "LF",
    "b035": "b=0.35",
    "blcasa": "BlCaSa",
    "pretal": "PrEtAl",
    "b040": "b=0.40",
    "b045": "b=0.45",
    "leapfrog": "leapfrog",
    "custom": "custom",
}
FAMILY_LABELS = tuple(NAMED_B)


class SchemeError(ValueError):
    """Invalid integrator coefficients or label."""


def c_from_b(b: float) -> float:
    """Solve b + c - 6bc = 0 for c."""
    if abs(6.0 * b - 1.0) < 1e-15:
        raise SchemeError("b = 1/6 admits no c with b + c - 6bc = 0")
    return b / (6.0 * b - 1.0)


@dataclass(frozen=True)
class IntegratorScheme:
    """A member of the splitting family, or plain leapfrog.

    Use :func:`get_scheme`, :meth:`from_b` or :meth:`custom` rather than calling the
    constructor directly.
    """

    label: str
    b: float = float("nan")
    c: float = float("nan")

    def __post_init__(self):
        if self.label == "leapfrog":
            return
        for name, v in (("b", self.b), ("c", self.c)):
            if not np.isfinite(v) or v == 0.0 or v == 0.5:
                raise SchemeError(f"{name}={v} is not allowed (must be finite, not 0 or 1/2)")

    @classmethod
    def from_b(cls, b: float, label: str | None = None) -> IntegratorScheme:
        b = float(b)
        if label is None:
            label = next((k for k, v in NAMED_B.items() if v == b), "custom")
        return cls(label, b, c_from_b(b))

    @classmethod
    def custom(cls, b: float, c: float) -> IntegratorScheme:
        """Arbitrary ``(b, c)``; warns when the stability constraint is violated."""
        s = cls("custom", float(b), float(c))
        if not s.satisfies_constraint:
            warnings.warn(
                f"(b, c) = ({b}, {c}) violates b + c - 6bc = 0; expect a short stability interval",
                stacklevel=2,
            )
        return s

    @property
    def is_leapfrog(self) -> bool:
        return self.label == "leapfrog"

    @property
    def satisfies_constraint(self) -> bool:
        if self.is_leapfrog:
            return True
        return abs(self.b + self.c - 6.0 * self.b * self.c) <= 1e-14

    @property
    def name(self) -> str:
        return DISPLAY_NAMES.get(self.label, self.label)

    @property
    def kicks(self):
        """Kick coefficients, in units of eps."""
        if self.is_leapfrog:
            return (0.5, 0.5)
        a = 0.5 - self.b
        return (a, self.b, self.b, a)

    @property
    def drifts(self):
        """Drift coefficients, in units of eps (one fewer than kicks)."""
        if self.is_leapfrog:
            return (1.0,)
        return (self.c, 1.0 - 2.0 * self.c, self.c)

    @property
    def evals_per_step(self) -> int:
        """Gradient evaluations per step once the last one is reused."""
        return len(self.drifts)

    def __str__(self):
        return self.name


LEAPFROG = IntegratorScheme("leapfrog")


def get_scheme(spec) -> IntegratorScheme:
    """Resolve a label (``"blcasa"``), a ``b`` value or an existing scheme."""
    if isinstance(spec, IntegratorScheme):
        return spec
    if isinstance(spec, str):
        key = spec.strip().lower()
        if key in NAMED_B:
            return IntegratorScheme(key, NAMED_B[key], c_from_b(NAMED_B[key]))
        if key == "leapfrog":
            return LEAPFROG
        try:
            return IntegratorScheme.from_b(float(key))
        except ValueError:
            raise SchemeError(f"unknown scheme {spec!r}") from None
    return IntegratorScheme.from_b(float(spec))


@dataclass(frozen=True)
class LegSpec:
    """An integration leg of ``L`` steps of length ``epsilon``."""

    epsilon: float
    L: int

    def __post_init__(self):
        if not (self.epsilon > 0 and np.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L}")

    @property
    def tau_end(self) -> float:
        return self.L * self.epsilon


def stacked_coefficients(schemes):
    """Kick and drift coefficients of several schemes as ``(k, 1)`` columns.

    Lets members of a batch run different schemes in lockstep. All schemes must have
    the same substep pattern (all family members, or all leapfrog).
    """
    schemes = [get_scheme(s) for s in schemes]
    if len({s.is_leapfrog for s in schemes}) != 1:
        raise SchemeError("cannot batch leapfrog with family schemes")
    kicks = [np.array([s.kicks[i] for s in schemes])[:, None] for i in range(len(schemes[0].kicks))]
    drifts = [np.array([s.drifts[i] for s in schemes])[:, None] for i in range(len(schemes[0].drifts))]
    return kicks, drifts


def integrate(theta, p, target: TargetModel, epsilon, L: int, scheme, mass: MassMatrix = IDENTITY,
              check: bool = True, coefficients=None):
    """Run ``L`` steps with gradient reuse across step boundaries.

    Works on single states ``(d,)`` or batches ``(k, d)``; ``epsilon`` may be a scalar
    or a ``(k, 1)`` column. ``coefficients`` overrides the scheme's kicks and drifts
    (see :func:`stacked_coefficients`).

    Returns:
        ``(theta, p, log_density_end, grad_end, grad_evals)``.

    Raises:
        NonFiniteError: If ``check`` and a gradient turns non-finite; the message
            carries the step index reached.
    """
    if coefficients is None:
        scheme = get_scheme(scheme)
        kicks, drifts = scheme.kicks, scheme.drifts
    else:
        kicks, drifts = coefficients
    theta = np.array(theta, dtype=float)
    p = np.array(p, dtype=float)
    kick_h = [k * epsilon for k in kicks]
    drift_h = [h * epsilon for h in drifts]
    n_drift = len(drift_h)
    logp, g = target.log_density_and_grad(theta)
    evals = 1
    for step in range(L):
        for i in range(n_drift):
            p = p + kick_h[i] * g
            theta = theta + drift_h[i] * mass.inv_mul(p)
            if step == L - 1 and i == n_drift - 1:
                logp, g = target.log_density_and_grad(theta)
            else:
                g = target.grad_log_density(theta)
            evals += 1
        p = p + kick_h[-1] * g
        if check and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient at step {step + 1} of {L}", theta)
    return theta, p, logp, g, evals


def _step(state, target, mass, epsilon, scheme):
    theta, p, _, _, _ = integrate(state.theta, state.p, target, epsilon, 1, scheme, mass)
    return PhaseState(theta, p)


def leapfrog_step(state: PhaseState, target: TargetModel, mass: MassMatrix = IDENTITY,
                  epsilon: float = 0.1) -> PhaseState:
    """One leapfrog step: half kick, drift, half kick."""
    return _step(state, target, mass, epsilon, LEAPFROG)


def family_step(state: PhaseState, target: TargetModel, mass: MassMatrix = IDENTITY,
                epsilon: float = 0.1, scheme="blcasa") -> PhaseState:
    """One seven-substep step of the splitting family."""
    scheme = get_scheme(scheme)
    if scheme.is_leapfrog:
        raise SchemeError("family_step needs a family scheme; use leapfrog_step")
    return _step(state, target, mass, epsilon, scheme)


def integrate_leg(state: PhaseState, target: TargetModel, mass: MassMatrix, leg: LegSpec,
                  scheme) -> tuple[PhaseState, int]:
    """Integrate a full leg; returns the end state and the gradient-evaluation count."""
    theta, p, _, _, evals = integrate(state.theta, state.p, target, leg.epsilon, leg.L, scheme, mass)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(p))):
        raise NonFiniteError(f"non-finite state after {leg.L} steps", theta)
    return PhaseState(theta, p), evals


def _shear_product(kicks, drifts, h):
    """One-step matrix of the unit oscillator, elementwise in the scaled step ``h``."""
    h = np.asarray(h, dtype=float)
    m11, m12, m21, m22 = np.ones_like(h), np.zeros_like(h), np.zeros_like(h), np.ones_like(h)
    # Right-multiply substeps in application order: M <- S_k M.
    for i, k in enumerate(kicks):
        kh = k * h
        m21, m22 = m21 - kh * m11, m22 - kh * m12
        if i < len(drifts):
            dh = drifts[i] * h
            m11, m12 = m11 + dh * m21, m12 + dh * m22
    return m11, m12, m21, m22


def linear_leg_matrix(scheme, h, L: int):
    """``L``-step propagator of the unit oscillator for each scaled step in ``h``.

    Composes the kick/drift shears numerically (exactly what :func:`integrate` does on
    a linear gradient) and raises the one-step matrix to the power ``L`` by repeated
    squaring. Used as a fast path for Gaussian targets with identity mass.
    """
    scheme = get_scheme(scheme)
    a = _shear_product(scheme.kicks, scheme.drifts, h)
    r = None
    n = int(L)
    with np.errstate(over="ignore", invalid="ignore"):
        while n:
            if n & 1:
                r = a if r is None else _matmul(r, a)
            n >>= 1
            if n:
                a = _matmul(a, a)
    return r


def _matmul(x, y):
    x11, x12, x21, x22 = x
    y11, y12, y21, y22 = y
    return (x11 * y11 + x12 * y21, x11 * y12 + x12 * y22,
            x21 * y11 + x22 * y21, x21 * y12 + x22 * y22)
