"""Hamiltonian Monte Carlo with palindromic splitting integrators.

The package covers the integrator family and leapfrog, an HMC chain driver, Gaussian and
log-Gaussian Cox targets, closed-form energy-error results for Gaussian targets, chain
diagnostics and a sweep harness (``splithmc`` on the command line).
"""

from splithmc.core import IDENTITY, MassMatrix, PhaseState, TargetModel, hamiltonian_energy
from splithmc.engine import ChainConfig, ChainOutput, run_chain, run_chains
from splithmc.integrators import LEAPFROG, IntegratorScheme, get_scheme, integrate
from splithmc.targets import CoxModelParams, CoxTarget, DiagonalGaussianTarget

__version__ = "0.1.0"

__all__ = [
    "IDENTITY",
    "LEAPFROG",
    "ChainConfig",
    "ChainOutput",
    "CoxModelParams",
    "CoxTarget",
    "DiagonalGaussianTarget",
    "IntegratorScheme",
    "MassMatrix",
    "PhaseState",
    "TargetModel",
    "get_scheme",
    "hamiltonian_energy",
    "integrate",
    "run_chain",
    "run_chains",
]
