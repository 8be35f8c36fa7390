"""Phase-space states, mass matrices, Hamiltonian energies and the target interface."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when vectors that must share a dimension do not."""


class NonFiniteError(FloatingPointError):
    """Raised when a log-density, gradient or state is NaN or infinite.

    Attributes:
        theta: Position at which the offending value was produced (may be None).
    """

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


@dataclass(frozen=True)
class PhaseState:
    """Immutable position/momentum pair.

    Both arrays are copied and made read-only on construction.
    """

    theta: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        p = np.array(self.p, dtype=float)
        if theta.ndim == 0:
            theta = theta.reshape(1)
        if p.ndim == 0:
            p = p.reshape(1)
        if theta.shape != p.shape or theta.shape[-1] < 1:
            raise DimensionError(
                f"theta and p must share a non-empty shape, got {theta.shape} and {p.shape}"
            )
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(p))):
            raise NonFiniteError("phase state has non-finite entries", theta)
        theta.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.theta.shape[-1]

    def flip(self) -> PhaseState:
        """Momentum reversal S(theta, p) = (theta, -p)."""
        return PhaseState(self.theta, -self.p)


class MassMatrix:
    """Identity or diagonal mass matrix.

    Args:
        diag: Positive diagonal entries. ``None`` gives the identity in any dimension.
    """

    def __init__(self, diag=None):
        if diag is None:
            self.diag = None
        else:
            diag = np.array(diag, dtype=float)
            if diag.ndim != 1 or not np.all(diag > 0) or not np.all(np.isfinite(diag)):
                raise ValueError("mass matrix diagonal must be a finite positive vector")
            diag.setflags(write=False)
            self.diag = diag

    @property
    def is_identity(self) -> bool:
        return self.diag is None

    def inv_mul(self, p):
        """M^{-1} p."""
        return p if self.diag is None else p / self.diag

    def kinetic(self, p):
        """0.5 p^T M^{-1} p, summed over the last axis."""
        p = np.asarray(p, dtype=float)
        return 0.5 * np.sum(p * self.inv_mul(p), axis=-1)

    def sample(self, rng, shape):
        """Draw momenta p ~ N(0, M)."""
        z = rng.standard_normal(shape)
        return z if self.diag is None else z * np.sqrt(self.diag)

    def check_dim(self, d):
        if self.diag is not None and self.diag.shape[0] != d:
            raise DimensionError(f"mass matrix has dimension {self.diag.shape[0]}, state has {d}")

    def __repr__(self):
        return "MassMatrix(identity)" if self.diag is None else f"MassMatrix(diag={self.diag!r})"


IDENTITY = MassMatrix()


class TargetModel(ABC):
    """Unnormalised log-density with a hand-coded gradient.

    Implementations accept positions of shape ``(d,)`` or batches ``(k, d)`` and must
    be safe for concurrent read-only use.
    """

    dim: int

    @abstractmethod
    def log_density(self, theta):
        """log pi(theta) up to an additive constant."""

    @abstractmethod
    def grad_log_density(self, theta):
        """Gradient of :meth:`log_density` with respect to ``theta``."""

    def log_density_and_grad(self, theta):
        # Targets sharing work between the two (e.g. a covariance solve) override this.
        return self.log_density(theta), self.grad_log_density(theta)


def _check(state: PhaseState, target: TargetModel, mass: MassMatrix):
    if state.dim != target.dim:
        raise DimensionError(f"state dimension {state.dim} != target dimension {target.dim}")
    mass.check_dim(state.dim)


def hamiltonian_energy(state: PhaseState, target: TargetModel, mass: MassMatrix = IDENTITY) -> float:
    """H(theta, p) = -log pi(theta) + 0.5 p^T M^{-1} p, additive constant dropped."""
    _check(state, target, mass)
    logp = target.log_density(state.theta)
    if not np.all(np.isfinite(logp)):
        raise NonFiniteError("non-finite log-density", state.theta)
    return -logp + mass.kinetic(state.p)


def energy_increment(initial: PhaseState, final: PhaseState, target: TargetModel,
                     mass: MassMatrix = IDENTITY) -> float:
    """Delta H = H(final) - H(initial)."""
    return hamiltonian_energy(final, target, mass) - hamiltonian_energy(initial, target, mass)
