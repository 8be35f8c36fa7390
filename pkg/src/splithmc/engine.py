"""The HMC chain: momentum refresh, step-length jitter, integration and accept/reject."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from splithmc.core import IDENTITY, MassMatrix, TargetModel
from splithmc.integrators import IntegratorScheme, get_scheme, integrate, linear_leg_matrix, stacked_coefficients
from splithmc.rng import ChainStreams
from splithmc.targets import DiagonalGaussianTarget


@dataclass(frozen=True)
class ChainConfig:
    """Settings of one chain.

    ``integration`` is ``"auto"`` (closed-form propagator for diagonal Gaussians with unit
    mass, step-by-step otherwise), ``"generic"``, ``"propagator"``, or a callable
    ``flow(theta, p, target, eps, L) -> (theta, p)`` replacing the integrator.
    """

    scheme: IntegratorScheme
    epsilon: float
    L: int
    n_samples: int
    n_burnin: int = 0
    seed: int = 0
    randomize_eps: bool = True
    jitter_halfwidth: float = 0.05
    target_id: str = ""
    mass: MassMatrix = IDENTITY
    integration: object = "auto"

    def __post_init__(self):
        object.__setattr__(self, "scheme", get_scheme(self.scheme))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("L must be a positive integer")
        if self.n_samples < 0 or self.n_burnin < 0:
            raise ValueError("n_samples and n_burnin must be non-negative")
        if not 0.0 <= self.jitter_halfwidth < 1.0:
            raise ValueError("jitter_halfwidth must lie in [0, 1)")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def tau_end(self) -> float:
        return self.L * self.epsilon

    @property
    def grad_evals_per_leg(self) -> int:
        return self.scheme.evals_per_step * self.L + 1


@dataclass(frozen=True)
class LegRecord:
    delta_h: float
    accepted: bool
    sq_jump: float
    eps_used: float
    grad_evals: int


@dataclass
class ChainOutput:
    """Post-burn-in samples and per-leg records of one chain.

    ``samples`` holds the positions after each leg, restricted to ``watch`` when the chain
    was run with a component subset.
    """

    samples: np.ndarray
    delta_h: np.ndarray
    accepted: np.ndarray
    sq_jump: np.ndarray
    eps_used: np.ndarray
    grad_evals: np.ndarray
    final_theta: np.ndarray
    config: ChainConfig
    watch: np.ndarray | None = None
    seed: int = 0
    burnin_acceptance: float = field(default=float("nan"))

    def __len__(self):
        return self.delta_h.size

    @property
    def legs(self) -> list[LegRecord]:
        return [LegRecord(float(h), bool(a), float(j), float(e), int(g))
                for h, a, j, e, g in zip(self.delta_h, self.accepted, self.sq_jump,
                                         self.eps_used, self.grad_evals)]


def _uses_propagator(target, config) -> bool:
    if callable(config.integration):
        return False
    if config.integration == "generic":
        return False
    eligible = isinstance(target, DiagonalGaussianTarget) and config.mass.is_identity
    if config.integration == "propagator" and not eligible:
        raise ValueError("propagator integration needs a diagonal Gaussian target and unit mass")
    return eligible


class _Ensemble:
    """k chains advanced in lockstep; every member owns its random streams."""

    def __init__(self, target: TargetModel, config: ChainConfig, streams, schemes=None):
        self.target = target
        self.config = config
        self.streams = list(streams)
        self.k = len(self.streams)
        self.schemes = None
        self.coefficients = None
        if schemes is not None:
            self.schemes = [get_scheme(s) for s in schemes]
            self.coefficients = stacked_coefficients(self.schemes)
            self.evals = np.array([s.evals_per_step * config.L + 1 for s in self.schemes])
        else:
            self.evals = np.full(self.k, config.grad_evals_per_leg)
        self.propagate = _uses_propagator(target, config)
        if self.propagate and schemes is not None:
            raise ValueError("per-member schemes need generic integration")

    def draw(self):
        cfg, d = self.config, self.target.dim
        p = np.stack([cfg.mass.sample(s.momentum, d) for s in self.streams])
        if cfg.randomize_eps and cfg.jitter_halfwidth > 0:
            h = cfg.jitter_halfwidth
            u = np.array([s.jitter.uniform(-h, h) for s in self.streams])
        else:
            u = np.zeros(self.k)
        eps = (1.0 + u) * cfg.epsilon
        unif = np.array([s.accept.random() for s in self.streams])
        return p, eps, unif

    def leg(self, theta, p, eps):
        """Proposal and energy increment for each member; blow-ups give +inf."""
        cfg, target = self.config, self.target
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.propagate:
                sig = target.sigmas
                x = theta / sig
                m11, m12, m21, m22 = linear_leg_matrix(cfg.scheme, eps[:, None] / sig, cfg.L)
                x1 = m11 * x + m12 * p
                p1 = m21 * x + m22 * p
                theta1 = x1 * sig
                h0 = 0.5 * np.sum(x * x + p * p, axis=-1)
                h1 = 0.5 * np.sum(x1 * x1 + p1 * p1, axis=-1)
            elif callable(cfg.integration):
                theta1, p1 = cfg.integration(theta, p, target, eps[:, None], cfg.L)
                h0 = -target.log_density(theta) + cfg.mass.kinetic(p)
                h1 = -target.log_density(theta1) + cfg.mass.kinetic(p1)
            else:
                logp0 = target.log_density(theta)
                theta1, p1, logp1, _, _ = integrate(
                    theta, p, target, eps[:, None], cfg.L, cfg.scheme, cfg.mass,
                    check=False, coefficients=self.coefficients,
                )
                h0 = -logp0 + cfg.mass.kinetic(p)
                h1 = -logp1 + cfg.mass.kinetic(p1)
            dh = h1 - h0
            finite = np.isfinite(dh) & np.all(np.isfinite(theta1), axis=-1) & np.all(np.isfinite(p1), axis=-1)
        dh = np.where(finite, dh, np.inf)
        return theta1, dh

    def step(self, theta):
        p, eps, unif = self.draw()
        theta1, dh = self.leg(theta, p, eps)
        with np.errstate(over="ignore"):
            accept = unif < np.exp(-dh)
        new = np.where(accept[:, None], theta1, theta)
        sq = np.where(accept, np.sum((new - theta) ** 2, axis=-1), 0.0)
        return new, dh, accept, sq, eps


def hmc_step(theta, config: ChainConfig, streams: ChainStreams, target: TargetModel):
    """Advance one chain by one leg; returns ``(theta_new, LegRecord)``."""
    ens = _Ensemble(target, config, [streams])
    theta = np.asarray(theta, dtype=float)
    new, dh, acc, sq, eps = ens.step(theta[None, :])
    rec = LegRecord(float(dh[0]), bool(acc[0]), float(sq[0]), float(eps[0]), config.grad_evals_per_leg)
    return new[0], rec


def run_chains(target: TargetModel, config: ChainConfig, initial, seeds=None, schemes=None,
               watch=None, progress=None) -> list[ChainOutput]:
    """Run ``k`` independent chains in lockstep.

    Args:
        target: Target distribution.
        config: Shared settings; ``config.seed`` is ignored when ``seeds`` is given.
        initial: Starting positions, shape ``(k, d)``.
        seeds: One seed per chain (default ``config.seed + r``).
        schemes: Optional per-chain schemes overriding ``config.scheme``.
        watch: Component indices to store in ``samples`` (default all).
        progress: Optional callable ``progress(done, total)``.
    """
    initial = np.atleast_2d(np.asarray(initial, dtype=float))
    k, d = initial.shape
    if d != target.dim:
        raise ValueError(f"initial state has dimension {d}, target {target.dim}")
    config.mass.check_dim(d)
    if seeds is None:
        seeds = [config.seed + r for r in range(k)]
    if len(seeds) != k or (schemes is not None and len(schemes) != k):
        raise ValueError("need one seed (and scheme) per chain")
    ens = _Ensemble(target, config, [ChainStreams(s) for s in seeds], schemes)
    watch_idx = None if watch is None else np.asarray(watch, dtype=int)
    n, nb = config.n_samples, config.n_burnin
    width = d if watch_idx is None else watch_idx.size
    samples = np.empty((n, k, width))
    dh = np.empty((n, k))
    acc = np.empty((n, k), dtype=bool)
    sq = np.empty((n, k))
    eps = np.empty((n, k))
    theta = initial.copy()
    burn_acc = np.zeros(k)
    total = n + nb
    for it in range(total):
        theta, h, a, s, e = ens.step(theta)
        if it < nb:
            burn_acc += a
        else:
            i = it - nb
            samples[i] = theta if watch_idx is None else theta[:, watch_idx]
            dh[i], acc[i], sq[i], eps[i] = h, a, s, e
        if progress is not None:
            progress(it + 1, total)
    outputs = []
    for r in range(k):
        cfg = config
        if schemes is not None:
            cfg = replace(config, scheme=ens.schemes[r], seed=seeds[r])
        elif seeds[r] != config.seed:
            cfg = replace(config, seed=seeds[r])
        outputs.append(ChainOutput(
            samples=samples[:, r, :].copy(), delta_h=dh[:, r].copy(), accepted=acc[:, r].copy(),
            sq_jump=sq[:, r].copy(), eps_used=eps[:, r].copy(),
            grad_evals=np.full(n, ens.evals[r], dtype=np.int64), final_theta=theta[r].copy(),
            config=cfg, watch=watch_idx, seed=seeds[r],
            burnin_acceptance=burn_acc[r] / nb if nb else float("nan"),
        ))
    return outputs


def run_chain(target: TargetModel, config: ChainConfig, initial_theta, watch=None) -> ChainOutput:
    """Run one chain: ``n_burnin`` discarded legs, then ``n_samples`` recorded legs."""
    return run_chains(target, config, np.asarray(initial_theta, dtype=float)[None, :],
                      seeds=[config.seed], watch=watch)[0]
