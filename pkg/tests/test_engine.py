import math

import numpy as np
import pytest

from splithmc.engine import ChainConfig, hmc_step, run_chain, run_chains
from splithmc.diagnostics import summarize
from splithmc.integrators import integrate
from splithmc.rng import ChainStreams, stream
from splithmc.targets import CoxModelParams, CoxTarget, DiagonalGaussianTarget, generate_cox_data, gaussian_exact_draw
from splithmc.theory import expected_acceptance_univariate, expected_delta_h

UNIT = DiagonalGaussianTarget([1.0])


def _rotation(theta, p, target, eps, L):
    # exact flow of the unit oscillator over time eps * L
    t = eps * L
    return np.cos(t) * theta + np.sin(t) * p, -np.sin(t) * theta + np.cos(t) * p


def _kinetic_bump(amount):
    def flow(theta, p, target, eps, L):
        return theta, np.sign(p) * np.sqrt(p * p + 2 * amount)
    return flow


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig("blcasa", 0.0, 10, 5)
    with pytest.raises(ValueError):
        ChainConfig("blcasa", 0.1, 0, 5)
    with pytest.raises(ValueError):
        ChainConfig("blcasa", 0.1, 10, -1)
    with pytest.raises(ValueError):
        ChainConfig("blcasa", 0.1, 10, 5, jitter_halfwidth=1.0)
    cfg = ChainConfig("blcasa", 0.25, 12, 5)
    assert cfg.tau_end == 3.0 and cfg.grad_evals_per_leg == 37


def test_same_seed_bit_identical():
    target = DiagonalGaussianTarget.harmonic(8)
    cfg = ChainConfig("blcasa", 0.05, 20, 300, seed=42)
    a = run_chain(target, cfg, np.full(8, 0.1))
    b = run_chain(target, cfg, np.full(8, 0.1))
    for name in ("samples", "delta_h", "accepted", "sq_jump", "eps_used"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_different_seed_differs():
    target = DiagonalGaussianTarget.harmonic(4)
    a = run_chain(target, ChainConfig("lf", 0.1, 10, 50, seed=1), np.zeros(4))
    b = run_chain(target, ChainConfig("lf", 0.1, 10, 50, seed=2), np.zeros(4))
    assert not np.array_equal(a.samples, b.samples)


def test_longer_chain_extends_shorter():
    target = DiagonalGaussianTarget.harmonic(3)
    short = run_chain(target, ChainConfig("pretal", 0.2, 8, 100, seed=9), np.zeros(3))
    long = run_chain(target, ChainConfig("pretal", 0.2, 8, 200, seed=9), np.zeros(3))
    np.testing.assert_array_equal(long.samples[:100], short.samples)


def test_zero_samples():
    out = run_chain(UNIT, ChainConfig("blcasa", 0.5, 3, 0), np.zeros(1))
    assert len(out) == 0 and out.samples.shape == (0, 1)
    assert summarize(out).n == 0


def test_burnin_discarded():
    out = run_chain(UNIT, ChainConfig("blcasa", 0.5, 3, 40, n_burnin=25), np.zeros(1))
    assert len(out) == 40
    assert 0 <= out.burnin_acceptance <= 1


def test_jitter_range():
    out = run_chain(UNIT, ChainConfig("lf", 0.5, 3, 500, jitter_halfwidth=0.05), np.zeros(1))
    assert np.all(np.abs(out.eps_used / 0.5 - 1) <= 0.05)
    assert np.ptp(out.eps_used) > 0.08 * 0.5
    fixed = run_chain(UNIT, ChainConfig("lf", 0.5, 3, 50, randomize_eps=False), np.zeros(1))
    assert np.all(fixed.eps_used == 0.5)


def test_rejection_keeps_position():
    # leapfrog at eps = 2.5 sigma is unstable: every leg is rejected
    cfg = ChainConfig("leapfrog", 2.5, 40, 30, randomize_eps=False)
    out = run_chain(UNIT, cfg, np.array([0.3]))
    assert not out.accepted.any()
    np.testing.assert_array_equal(out.samples[:, 0], 0.3)
    s = summarize(out)
    assert s.acceptance_rate == 0.0 and s.avg_sq_jump == 0.0


def test_blowup_reported_as_infinite():
    cfg = ChainConfig("leapfrog", 3.0, 2000, 10, randomize_eps=False)
    out = run_chain(UNIT, cfg, np.array([1.0]))
    assert np.all(np.isinf(out.delta_h))
    s = summarize(out)
    assert s.blowups == 10 and math.isnan(s.mean_delta_h)


def test_exact_flow_always_accepts():
    cfg = ChainConfig("leapfrog", 0.3, 5, 500, integration=_rotation)
    out = run_chain(UNIT, cfg, np.array([0.5]))
    assert out.accepted.all()
    assert np.max(np.abs(out.delta_h)) < 1e-12
    s = summarize(out)
    assert s.acceptance_rate == 1.0 and abs(s.mean_delta_h) < 1e-12


def test_fixed_energy_error_acceptance():
    n = 20000
    out = run_chain(UNIT, ChainConfig("leapfrog", 0.1, 1, n, integration=_kinetic_bump(0.5)), np.zeros(1))
    np.testing.assert_allclose(out.delta_h, 0.5, atol=1e-12)
    p = math.exp(-0.5)
    assert abs(out.accepted.mean() - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_energy_decrease_always_accepted():
    out = run_chain(UNIT, ChainConfig("leapfrog", 0.1, 1, 300, integration=_kinetic_bump(-0.0)),
                    np.zeros(1))
    assert out.accepted.all()


def test_unit_gaussian_acceptance_matches_theory():
    cfg = ChainConfig("lf", 0.5, 10, 50000, seed=3, randomize_eps=False)
    out = run_chain(UNIT, cfg, gaussian_exact_draw(UNIT, stream(3, "init")))
    expected = expected_acceptance_univariate(expected_delta_h("lf", 0.5, 10))
    assert abs(out.accepted.mean() - expected) <= 0.01


def test_acceptance_consistent_with_probabilities():
    cfg = ChainConfig("b045", 1.2, 7, 40000, seed=5, randomize_eps=False)
    out = run_chain(UNIT, cfg, np.zeros(1))
    prob = np.minimum(1.0, np.exp(-out.delta_h))
    se = math.sqrt(np.mean(prob * (1 - prob)) / len(out))
    assert abs(out.accepted.mean() - prob.mean()) < 3 * se + 1e-12


def test_stationarity_preserved():
    target = DiagonalGaussianTarget([1.0, 0.5])
    k = 100_000
    init = gaussian_exact_draw(target, stream(0, "init"), size=k)
    cfg = ChainConfig("blcasa", 0.8, 3, 5, randomize_eps=False)
    outs = run_chains(target, cfg, init, seeds=list(range(k)))
    final = np.stack([o.final_theta for o in outs])
    se = target.sigmas / math.sqrt(k)
    assert np.all(np.abs(final.mean(axis=0)) < 4 * se)
    np.testing.assert_allclose(final.var(axis=0), target.sigmas**2, rtol=0.02)


def test_generic_and_propagator_paths_agree():
    target = DiagonalGaussianTarget.harmonic(5)
    base = ChainConfig("pretal", 0.04, 30, 200, seed=17)
    a = run_chain(target, base, np.full(5, 0.1))
    from dataclasses import replace
    b = run_chain(target, replace(base, integration="generic"), np.full(5, 0.1))
    np.testing.assert_allclose(a.samples, b.samples, atol=1e-10)
    np.testing.assert_allclose(a.delta_h, b.delta_h, atol=1e-10)


def test_hmc_step_replays_from_streams():
    target = DiagonalGaussianTarget([1.0, 0.3])
    cfg = ChainConfig("blcasa", 0.3, 6, 1, seed=77)
    theta0 = np.array([0.4, -0.2])
    new, rec = hmc_step(theta0, cfg, ChainStreams(77), target)
    p = stream(77, "momentum").standard_normal(2)
    eps = (1 + stream(77, "jitter").uniform(-0.05, 0.05)) * 0.3
    t1, p1, _, _, _ = integrate(theta0, p, target, eps, 6, "blcasa")
    dh = 0.5 * (np.sum(t1**2 / target.sigmas**2) + p1 @ p1) - 0.5 * (np.sum(theta0**2 / target.sigmas**2) + p @ p)
    assert rec.delta_h == pytest.approx(dh, abs=1e-12)
    assert rec.eps_used == pytest.approx(eps)
    u = stream(77, "accept").random()
    assert rec.accepted == (u < math.exp(-dh))
    # momentum flip of the proposal integrates back to the start
    tb, pb, _, _, _ = integrate(t1, -p1, target, eps, 6, "blcasa")
    np.testing.assert_allclose(tb, theta0, atol=1e-12)
    np.testing.assert_allclose(-pb, p, atol=1e-12)


def test_lockstep_schemes_match_single_runs():
    params = CoxModelParams.for_grid(3)
    target = CoxTarget(params, generate_cox_data(params, 1))
    init = np.full((2, 9), params.mu)
    cfg = ChainConfig("blcasa", 0.2, 5, 30)
    both = run_chains(target, cfg, init, seeds=[3, 4], schemes=["blcasa", "pretal"])
    single = run_chain(target, ChainConfig("pretal", 0.2, 5, 30, seed=4), init[1])
    np.testing.assert_allclose(both[1].samples, single.samples, atol=1e-12)
    assert both[1].config.scheme.label == "pretal"


def test_watch_subset():
    target = DiagonalGaussianTarget.harmonic(6)
    out = run_chains(target, ChainConfig("lf", 0.1, 10, 20), np.zeros((2, 6)), watch=[0, 5])
    assert out[0].samples.shape == (20, 2)
    assert out[0].final_theta.shape == (6,)
