import math

import numpy as np
import pytest
from scipy import stats

from splithmc.rng import stream
from splithmc.targets import (
    CoxModelParams,
    CoxTarget,
    DiagonalGaussianTarget,
    build_cox_covariance,
    cached_cholesky,
    cox_fixed_point,
    cox_initial_state,
    cox_kernel_matrix,
    gaussian_exact_draw,
    generate_cox_data,
    load_cholesky,
    read_cox_dataset,
    write_cox_dataset,
)


@pytest.fixture(scope="module")
def cox8():
    params = CoxModelParams.for_grid(8)
    return CoxTarget(params, generate_cox_data(params, 5))


def test_harmonic_target_sigmas():
    t = DiagonalGaussianTarget.harmonic(4)
    np.testing.assert_allclose(t.sigmas, [1, 1 / 2, 1 / 3, 1 / 4])
    assert t.log_density(np.ones(4)) == pytest.approx(-0.5 * (1 + 4 + 9 + 16))


def test_gaussian_rejects_bad_sigmas():
    with pytest.raises(ValueError):
        DiagonalGaussianTarget([1.0, 0.0])


def test_exact_draw_variances():
    t = DiagonalGaussianTarget([1.0, 0.5, 2.0])
    x = gaussian_exact_draw(t, np.random.default_rng(0), size=10**6)
    np.testing.assert_allclose(x.var(axis=0), t.sigmas**2, rtol=0.01)


def test_exact_draw_standard_normal():
    x = gaussian_exact_draw(DiagonalGaussianTarget([1.0]), np.random.default_rng(1), size=10**4)[:, 0]
    assert stats.kstest(x, "norm").pvalue > 0.01


def test_exact_draw_deterministic():
    t = DiagonalGaussianTarget.harmonic(3)
    np.testing.assert_array_equal(gaussian_exact_draw(t, stream(4, "init")), gaussian_exact_draw(t, stream(4, "init")))


def test_default_params():
    p = CoxModelParams()
    assert p.dim == 4096 and p.m == 1 / 4096
    assert p.mu == pytest.approx(math.log(126) - 1.91 / 2)
    assert p.mu == pytest.approx(3.881, abs=1e-3)


def test_kernel_entries():
    params = CoxModelParams()
    # 1 / (64 beta) = 33/64 for neighbouring cells on the full grid
    assert 1 / (params.grid_n * params.beta) == pytest.approx(33 / 64)
    assert math.exp(-33 / 64) == pytest.approx(0.59713, abs=1e-5)
    small = CoxModelParams.for_grid(6)
    sigma = cox_kernel_matrix(small)
    assert np.all(np.diag(sigma) == 1.91)
    np.testing.assert_array_equal(sigma, sigma.T)
    assert sigma[0, 1] == pytest.approx(1.91 * math.exp(-1 / (6 * small.beta)))
    assert sigma[0, 7] == pytest.approx(1.91 * math.exp(-math.sqrt(2) / (6 * small.beta)))


def test_cholesky_factor(cox8):
    sigma, chol = build_cox_covariance(cox8.params)
    np.testing.assert_allclose(chol @ chol.T, sigma, atol=1e-12)
    np.testing.assert_allclose(cox8.precision @ sigma, np.eye(64), atol=1e-8)


def test_cholesky_cache_round_trip(tmp_path):
    params = CoxModelParams.for_grid(5)
    first = cached_cholesky(params, tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    assert files[0].stat().st_size > 25 * 26 // 2 * 8
    np.testing.assert_array_equal(cached_cholesky(params, tmp_path), first)
    with pytest.raises(ValueError):
        load_cholesky(files[0], CoxModelParams.for_grid(5, sigma2=2.0))


def test_solve_cov_matches_direct(cox8, rng):
    sigma, _ = build_cox_covariance(cox8.params)
    v = rng.standard_normal(64)
    np.testing.assert_allclose(cox8.solve_cov(v), np.linalg.solve(sigma, v), rtol=1e-10)
    np.testing.assert_allclose(cox8.solve_cov(v), cox8.precision @ v, rtol=1e-8)


def test_cox_gradient_finite_differences(cox8, rng):
    h = 1e-6
    for _ in range(20):
        y = cox8.params.mu + rng.standard_normal(64)
        g = cox8.grad_log_density(y)
        fd = np.empty(64)
        for i in range(64):
            e = np.zeros(64)
            e[i] = h
            fd[i] = (cox8.log_density(y + e) - cox8.log_density(y - e)) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6 * np.abs(g).max())


def test_cox_log_density_formula(cox8, rng):
    y = cox8.params.mu + rng.standard_normal(64)
    sigma, _ = build_cox_covariance(cox8.params)
    r = y - cox8.params.mu
    expected = np.sum(cox8.x * y - cox8.params.m * np.exp(y)) - 0.5 * r @ np.linalg.solve(sigma, r)
    assert cox8.log_density(y) == pytest.approx(expected, rel=1e-10)


def test_cox_batch_evaluation(cox8, rng):
    y = cox8.params.mu + rng.standard_normal((3, 64))
    lp, g = cox8.log_density_and_grad(y)
    for i in range(3):
        assert lp[i] == pytest.approx(cox8.log_density(y[i]))
        np.testing.assert_allclose(g[i], cox8.grad_log_density(y[i]))


def test_counts_validation():
    with pytest.raises(ValueError):
        CoxTarget(CoxModelParams.for_grid(2), np.array([1, 2, 3]))
    with pytest.raises(ValueError):
        CoxTarget(CoxModelParams.for_grid(2), np.array([1, -2, 3, 0]))


def test_generate_data_deterministic_and_nonnegative():
    params = CoxModelParams.for_grid(8)
    a, b = generate_cox_data(params, 11), generate_cox_data(params, 11)
    np.testing.assert_array_equal(a, b)
    assert a.dtype.kind == "i" and np.all(a >= 0)
    assert not np.array_equal(a, generate_cox_data(params, 12))


def test_generated_total_count_mean():
    # E[sum x] = d m exp(mu + sigma2/2) = 126 for any grid with m = 1/d
    params = CoxModelParams.for_grid(6)
    _, chol = build_cox_covariance(params)
    totals = [generate_cox_data(params, s, chol=chol).sum() for s in range(400)]
    assert params.dim * params.m * math.exp(params.mu + params.sigma2 / 2) == pytest.approx(126.0)
    # field correlation makes the total heavy-tailed; a loose band on the mean
    assert 126 * 0.8 < np.mean(totals) < 126 * 1.2


def test_dataset_round_trip(tmp_path):
    params = CoxModelParams.for_grid(6)
    x = generate_cox_data(params, 2)
    path = tmp_path / "counts.txt"
    write_cox_dataset(path, x, params, 2)
    x2, p2, seed = read_cox_dataset(path)
    np.testing.assert_array_equal(x2, x)
    assert p2 == params and seed == 2
    text = path.read_text(encoding="utf-8").splitlines()
    assert text[0].startswith("#") and len(text) == 2 + 6


def test_fixed_point_zero_gamma(cox8):
    res = cox_fixed_point(cox8, np.zeros(64))
    np.testing.assert_array_equal(res.y, cox8.params.mu)
    assert res.iterations == 1


@pytest.mark.parametrize("variant", ["curvature", "literal"])
def test_fixed_point_converges(cox8, variant):
    from splithmc.targets import _conditional_factor_apply
    gamma = stream(1, "init").standard_normal(64)
    res = cox_fixed_point(cox8, gamma, variant=variant)
    assert res.iterations < 200 and res.residual < 1e-12
    resid = res.y - cox8.params.mu - _conditional_factor_apply(cox8, res.y, gamma, variant)
    assert np.linalg.norm(resid) < 1e-10


def test_conditional_factor_is_cholesky_of_inverse(cox8, rng):
    from splithmc.targets import _conditional_factor_apply
    y = cox8.params.mu + 0.2 * rng.standard_normal(64)
    cols = np.stack([_conditional_factor_apply(cox8, y, e, "curvature") for e in np.eye(64)], axis=1)
    target = np.linalg.inv(cox8.precision + np.diag(cox8.params.m * np.exp(y)))
    np.testing.assert_allclose(cols @ cols.T, target, atol=1e-10)
    assert np.allclose(cols, np.tril(cols))


def test_fixed_point_nonconvergence_reports_residual(cox8):
    # this draw contracts slowly (about 0.91 per sweep) on the coarse grid
    gamma = stream(3, "init").standard_normal(64)
    with pytest.raises(RuntimeError, match="last step"):
        cox_fixed_point(cox8, gamma, max_iter=30)


def test_fixed_point_unknown_variant(cox8):
    with pytest.raises(ValueError):
        cox_fixed_point(cox8, np.ones(64), variant="diag")


def test_initial_state_deterministic(cox8):
    np.testing.assert_array_equal(cox_initial_state(cox8, 4), cox_initial_state(cox8, 4))
