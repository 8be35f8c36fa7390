import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splithmc.core import IDENTITY, NonFiniteError, PhaseState, TargetModel
from splithmc.integrators import (
    LEAPFROG,
    NAMED_B,
    IntegratorScheme,
    LegSpec,
    SchemeError,
    c_from_b,
    family_step,
    get_scheme,
    integrate,
    integrate_leg,
    leapfrog_step,
    linear_leg_matrix,
)
from splithmc.oscillator import leg_matrix, one_step_matrix, stability_interval_length
from splithmc.targets import CoxModelParams, CoxTarget, DiagonalGaussianTarget, generate_cox_data

UNIT = DiagonalGaussianTarget([1.0])
ALL = ("leapfrog",) + tuple(NAMED_B)


@pytest.fixture(scope="module")
def small_cox():
    params = CoxModelParams.for_grid(4)
    return CoxTarget(params, generate_cox_data(params, 3))


class Counting(TargetModel):
    def __init__(self, inner):
        self.inner = inner
        self.dim = inner.dim
        self.calls = 0

    def log_density(self, theta):
        return self.inner.log_density(theta)

    def grad_log_density(self, theta):
        self.calls += 1
        return self.inner.grad_log_density(theta)

    def log_density_and_grad(self, theta):
        self.calls += 1
        return self.inner.log_density_and_grad(theta)


def test_c_from_b_values():
    assert c_from_b(1 / 3) == pytest.approx(1 / 3, abs=1e-15)
    assert c_from_b(0.45) == pytest.approx(0.2647058824, abs=1e-10)
    with pytest.raises(SchemeError):
        c_from_b(1 / 6)


def test_named_coefficients_full_precision():
    assert get_scheme("blcasa").b == 0.38111989033452
    assert get_scheme("pretal").b == 0.391008574596575
    for label in NAMED_B:
        assert get_scheme(label).satisfies_constraint


def test_unknown_label():
    with pytest.raises(SchemeError):
        get_scheme("yoshida")


def test_custom_scheme_off_constraint():
    with pytest.warns(UserWarning, match="violates"):
        s = IntegratorScheme.custom(0.3, 0.2)
    assert not s.satisfies_constraint


def test_leapfrog_step_by_hand():
    out = leapfrog_step(PhaseState([1.0], [0.0]), UNIT, epsilon=1.0)
    assert out.theta[0] == pytest.approx(0.5, abs=1e-15)
    assert out.p[0] == pytest.approx(-0.75, abs=1e-15)


def test_leapfrog_trace_at_stability_edge():
    assert one_step_matrix(LEAPFROG, 2.0).trace == pytest.approx(-2.0, abs=1e-14)


def test_lf_equals_three_leapfrog_steps(small_cox, rng):
    theta = small_cox.params.mu + 0.3 * rng.standard_normal(small_cox.dim)
    p = rng.standard_normal(small_cox.dim)
    for eps in (0.05, 0.2, 0.4):
        s = family_step(PhaseState(theta, p), small_cox, epsilon=eps, scheme="lf")
        ref = PhaseState(theta, p)
        for _ in range(3):
            ref = leapfrog_step(ref, small_cox, epsilon=eps / 3)
        np.testing.assert_allclose(s.theta, ref.theta, atol=1e-12)
        np.testing.assert_allclose(s.p, ref.p, atol=1e-12)


def test_lf_matrix_is_leapfrog_cubed():
    for eps in (0.3, 1.7, 4.2):
        lf = one_step_matrix("lf", eps).as_array()
        lp = one_step_matrix(LEAPFROG, eps / 3).as_array()
        np.testing.assert_allclose(lf, np.linalg.matrix_power(lp, 3), atol=1e-13)


def test_zero_step_is_identity(small_cox, rng):
    theta = small_cox.params.mu + rng.standard_normal(small_cox.dim)
    p = rng.standard_normal(small_cox.dim)
    for label in ALL:
        t1, p1, _, _, _ = integrate(theta, p, small_cox, 0.0, 3, label)
        np.testing.assert_array_equal(t1, theta)
        np.testing.assert_array_equal(p1, p)


def test_blcasa_step_matches_matrix():
    m = one_step_matrix("blcasa", 1.0)
    out = family_step(PhaseState([1.0], [0.0]), UNIT, epsilon=1.0, scheme="blcasa")
    np.testing.assert_allclose([out.theta[0], out.p[0]], m @ np.array([1.0, 0.0]), atol=1e-15)


def test_family_step_rejects_leapfrog():
    with pytest.raises(SchemeError):
        family_step(PhaseState([1.0], [0.0]), UNIT, epsilon=0.1, scheme="leapfrog")


@pytest.mark.parametrize("label,L,expected", [("blcasa", 1, 4), ("blcasa", 10, 31), ("leapfrog", 10, 11)])
def test_gradient_evaluation_counts(label, L, expected):
    counting = Counting(DiagonalGaussianTarget([1.0, 2.0]))
    _, evals = integrate_leg(PhaseState([0.1, 0.2], [0.3, 0.4]), counting, IDENTITY, LegSpec(0.1, L), label)
    assert evals == expected
    assert counting.calls == expected
    assert get_scheme(label).evals_per_step * L + 1 == expected


def test_legspec_validation():
    with pytest.raises(ValueError):
        LegSpec(0.0, 3)
    with pytest.raises(ValueError):
        LegSpec(0.1, 0)
    assert LegSpec(0.25, 8).tau_end == 2.0


@pytest.mark.parametrize("label", ALL)
def test_unit_determinant_and_symmetric_diagonal(label):
    eta = stability_interval_length(label)
    for eps in np.linspace(0.05, 1.2 * eta, 17):
        m = one_step_matrix(label, eps)
        assert m.det == pytest.approx(1.0, abs=1e-12 * max(1.0, abs(m.m12 * m.m21)))
        assert m.m11 == pytest.approx(m.m22, abs=1e-12 * max(1.0, abs(m.m11)))


def _fd_jacobian_det(f, x, h=1e-6):
    n = x.size
    J = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        J[:, i] = (f(x + e) - f(x - e)) / (2 * h)
    return np.linalg.det(J)


@pytest.mark.parametrize("label", ALL)
def test_nonlinear_volume_preservation(label, rng):
    params = CoxModelParams.for_grid(2)
    target = CoxTarget(params, np.array([0, 1, 2, 0]))

    def step(z):
        t, p, _, _, _ = integrate(z[:4], z[4:], target, 0.3, 1, label)
        return np.concatenate([t, p])

    for _ in range(3):
        z = np.concatenate([params.mu + rng.standard_normal(4), rng.standard_normal(4)])
        assert _fd_jacobian_det(step, z) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("label", ALL)
def test_time_reversibility(label, small_cox, rng):
    theta = small_cox.params.mu + 0.5 * rng.standard_normal(small_cox.dim)
    p = rng.standard_normal(small_cox.dim)
    t1, p1, _, _, _ = integrate(theta, p, small_cox, 0.1, 7, label)
    t2, p2, _, _, _ = integrate(t1, -p1, small_cox, 0.1, 7, label)
    np.testing.assert_allclose(t2, theta, atol=1e-10)
    np.testing.assert_allclose(-p2, p, atol=1e-10)


@pytest.mark.parametrize("label", ALL)
def test_second_order_global_error(label):
    # error of a leg of fixed length 1 on the unit oscillator scales as eps^2
    exact = np.array([np.cos(1.0), -np.sin(1.0)])
    errs = []
    for L in (20, 40, 80):
        m = leg_matrix(label, 1.0 / L, L)
        errs.append(np.linalg.norm(m @ np.array([1.0, 0.0]) - exact))
    slopes = np.diff(np.log(errs)) / np.diff(np.log([1 / 20, 1 / 40, 1 / 80]))
    np.testing.assert_allclose(slopes, 2.0, atol=0.05)


def test_local_error_is_third_order():
    errs = []
    hs = (0.02, 0.01, 0.005)
    for h in hs:
        m = one_step_matrix(LEAPFROG, h).as_array()
        rot = np.array([[np.cos(h), np.sin(h)], [-np.sin(h), np.cos(h)]])
        errs.append(np.abs(m - rot).max())
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    np.testing.assert_allclose(slopes, 3.0, atol=0.05)


def test_batched_integration_matches_single(small_cox, rng):
    theta = small_cox.params.mu + 0.3 * rng.standard_normal((3, small_cox.dim))
    p = rng.standard_normal((3, small_cox.dim))
    eps = np.array([[0.1], [0.2], [0.15]])
    tb, pb, lb, _, _ = integrate(theta, p, small_cox, eps, 5, "pretal")
    for i in range(3):
        t, q, lg, _, _ = integrate(theta[i], p[i], small_cox, float(eps[i, 0]), 5, "pretal")
        np.testing.assert_allclose(tb[i], t, rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(pb[i], q, rtol=1e-13, atol=1e-13)
        assert lb[i] == pytest.approx(lg, rel=1e-13)


def test_nonfinite_gradient_raises():
    target = CoxTarget(CoxModelParams.for_grid(2), np.array([0, 0, 0, 0]))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NonFiniteError, match="step"):
            integrate(np.full(4, 700.0), np.zeros(4), target, 1.0, 5, "leapfrog")


def test_propagator_matches_step_by_step():
    target = DiagonalGaussianTarget([0.7])
    for label in ALL:
        m11, m12, m21, m22 = linear_leg_matrix(label, 0.4 / 0.7, 9)
        t1, p1, _, _, _ = integrate(np.array([0.7]), np.array([0.2]), target, 0.4, 9, label)
        assert t1[0] / 0.7 == pytest.approx(m11 * 1.0 + m12 * 0.2, abs=1e-12)
        assert p1[0] == pytest.approx(m21 * 1.0 + m22 * 0.2, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(b=st.floats(0.2, 0.49).filter(lambda b: abs(6 * b - 1) > 1e-3 and abs(b - 0.25) > 1e-6),
       h=st.floats(1e-3, 3.0))
def test_family_determinant_property(b, h):
    m = one_step_matrix(IntegratorScheme.from_b(b), h)
    assert abs(m.det - 1.0) < 1e-10 * max(1.0, abs(m.m12 * m.m21))
    assert abs(m.m11 - m.m22) < 1e-10 * max(1.0, abs(m.m11))


@settings(max_examples=40, deadline=None)
@given(sigma=st.floats(0.1, 5.0), eps=st.floats(0.01, 1.5), theta=st.floats(-3, 3), p=st.floats(-3, 3),
       label=st.sampled_from(ALL))
def test_scaling_commutation(sigma, eps, theta, p, label):
    eta = stability_interval_length(label)
    if eps / sigma > 0.95 * eta:
        eps = 0.5 * eta * sigma
    t1, p1, _, _, _ = integrate(np.array([theta]), np.array([p]), DiagonalGaussianTarget([sigma]), eps, 5, label)
    t2, p2, _, _, _ = integrate(np.array([theta / sigma]), np.array([p]), UNIT, eps / sigma, 5, label)
    assert t1[0] / sigma == pytest.approx(t2[0], abs=1e-12 * (1 + abs(t2[0])))
    assert p1[0] == pytest.approx(p2[0], abs=1e-12 * (1 + abs(p2[0])))
