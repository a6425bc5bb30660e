import numpy as np
import pytest

from plsim.estimation import (
    Dataset,
    EmbeddedIndex,
    FitConfig,
    embed,
    estimating_fn,
    fit,
    jacobian,
    ols,
    predict_link,
    profile_theta,
    reduce,
    sigma2_hat,
    solve_beta,
    solve_beta_detailed,
    stage_one,
)
from plsim.exceptions import CollinearityError, ConstraintViolation, PivotSignError
from plsim.simulation import angle
from plsim.smoothing import derived_bandwidths


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestDataset:
    def test_shapes(self, rng):
        d = Dataset(rng.normal(size=20), rng.normal(size=20), rng.normal(size=(20, 3)))
        assert (d.n, d.p, d.q) == (20, 3, 1)

    def test_rejects_bad_input(self, rng):
        with pytest.raises(ValueError):
            Dataset(rng.normal(size=5), rng.normal(size=5), rng.normal(size=(5, 2)))
        y = rng.normal(size=20)
        y[3] = np.nan
        with pytest.raises(ValueError):
            Dataset(y, rng.normal(size=20), rng.normal(size=(20, 2)))


class TestReparametrization:
    def test_embed_examples(self):
        np.testing.assert_allclose(embed(EmbeddedIndex([0.0], 0)), [1, 0])
        np.testing.assert_allclose(embed(EmbeddedIndex([0.6], 0)), [0.8, 0.6])

    def test_reduce_examples(self):
        np.testing.assert_allclose(reduce([0.8, 0.6], 0).reduced, [0.6])
        np.testing.assert_allclose(reduce([1.0, 0.0, 0.0], 0).reduced, [0, 0])

    def test_round_trip(self, rng):
        for _ in range(100):
            v = unit(rng.normal(size=4))
            r = int(np.argmax(np.abs(v)))
            v = v * np.sign(v[r])
            e = reduce(v, r)
            np.testing.assert_allclose(embed(e), v, atol=1e-14)
            assert np.linalg.norm(embed(e)) == pytest.approx(1)

    def test_jacobian_examples(self):
        np.testing.assert_allclose(jacobian(EmbeddedIndex([0.0], 0)), [[0], [1]])
        np.testing.assert_allclose(jacobian(EmbeddedIndex([0.6], 0)), [[-0.75], [1]])

    def test_jacobian_finite_differences(self, rng):
        delta = 1e-5
        for pivot in range(4):
            e = rng.uniform(-0.4, 0.4, size=3)
            num = np.empty((4, 3))
            for k in range(3):
                step = np.zeros(3)
                step[k] = delta
                num[:, k] = (embed(EmbeddedIndex(e + step, pivot)) - embed(EmbeddedIndex(e - step, pivot))) / (2 * delta)
            assert np.abs(jacobian(EmbeddedIndex(e, pivot)) - num).max() <= 1e-6

    def test_errors(self):
        with pytest.raises(ConstraintViolation):
            embed(EmbeddedIndex([0.8, 0.7], 1))
        with pytest.raises(PivotSignError):
            reduce([-0.8, 0.6], 0)


class TestOLS:
    def test_intercept_only(self, rng):
        y = rng.normal(size=30)
        assert ols(y, np.ones(30))[0] == pytest.approx(y.mean())

    def test_exact_fit(self, rng):
        a = rng.normal(size=(30, 2))
        np.testing.assert_allclose(a @ ols(a @ [1.0, -2.0], a), a @ [1.0, -2.0], atol=1e-12)

    def test_normal_equations(self, rng):
        a = rng.normal(size=(50, 2))
        y = rng.normal(size=50)
        np.testing.assert_allclose(ols(y, a), np.linalg.solve(a.T @ a, a.T @ y), atol=1e-10)


class TestSigma2:
    def test_examples(self):
        assert sigma2_hat(np.zeros(4)) == 0
        assert sigma2_hat([1.0, -1.0]) == 1


class TestStageOne:
    def test_independent_z_matches_centered_ols(self, rng):
        n = 2000
        x = rng.uniform(size=(n, 3))
        z = rng.normal(size=n)
        y = 0.7 * z + np.sin(2 * x @ unit([1, 1, 0])) + 0.3 * rng.normal(size=n)
        s1 = stage_one(Dataset(y, z, x))
        zc = z - z.mean()
        oracle = ols(y, np.column_stack([np.ones(n), zc]))[1]
        assert s1.theta_init[0] == pytest.approx(oracle, abs=1e-2)

    def test_zero_link(self, rng):
        n = 400
        x = rng.normal(size=(n, 2))
        z = rng.normal(size=n)
        y = 2.0 * z + 0.5 * rng.normal(size=n)
        s1 = stage_one(Dataset(y, z, x))
        assert s1.theta_init[0] == pytest.approx(2.0, abs=3 / np.sqrt(n))


class TestProfile:
    def test_zero_link_matches_ols(self, rng):
        n = 2000
        x = rng.normal(size=(n, 2))
        z = rng.normal(size=n)
        y = -1.3 * z + 0.5 * rng.normal(size=n)
        theta, _, _ = profile_theta(Dataset(y, z, x), unit([1, 1]), 0.4)
        assert theta[0] == pytest.approx(ols(y, np.column_stack([np.ones(n), z]))[1], abs=0.02)

    def test_noiseless_linear_part(self, rng):
        n = 200
        x = rng.normal(size=(n, 2))
        z = rng.normal(size=(n, 2))
        y = z @ [1.0, -1.0]
        theta, _, _ = profile_theta(Dataset(y, z, x), unit([1, 0.5]), 0.5)
        np.testing.assert_allclose(theta, [1, -1], atol=1e-6)

    def test_collinear(self, rng):
        n = 100
        x = rng.normal(size=(n, 2))
        u = x @ unit([1, 1])
        with pytest.raises(CollinearityError):
            profile_theta(Dataset(rng.normal(size=n), 1 + 2 * u, x), unit([1, 1]), 1e3)


def single_index_data(rng, n=500, noise=0.0, link=np.square):
    beta0 = unit([0.6, 0.8, 0.0])
    x = rng.normal(size=(n, 3))
    z = rng.normal(size=(n, 1))
    y = 1.5 * z[:, 0] + link(x @ beta0) + noise * rng.normal(size=n)
    return Dataset(y, z, x), beta0


class TestEstimatingEquation:
    def test_one_dimensional_index(self, rng):
        d = Dataset(rng.normal(size=20), rng.normal(size=20), rng.normal(size=20))
        bw = derived_bandwidths(0.5, 20)
        assert estimating_fn(d, [0.0], EmbeddedIndex([], 0), bw).size == 0
        np.testing.assert_array_equal(solve_beta(d, [0.0], [1.0], bw).coords, [1.0])

    def test_small_at_truth_for_linear_link(self, rng):
        d, beta0 = single_index_data(rng, n=1000, link=lambda t: t)
        bw = derived_bandwidths(0.3, d.n)
        r = estimating_fn(d, [1.5], reduce(beta0, 1), bw)
        assert np.linalg.norm(r) / d.n <= 0.05

    def test_noiseless_recovery(self, rng):
        d, beta0 = single_index_data(rng)
        init = unit(beta0 + [0.05, -0.03, 0.06])
        assert angle(init, beta0) < 0.1
        res = solve_beta_detailed(d, [1.5], init, derived_bandwidths(0.2, d.n))
        assert angle(res.direction.coords, beta0) <= 1e-3

    def test_residual_at_converged_solution(self, rng):
        d, beta0 = single_index_data(rng, noise=0.1)
        bw = derived_bandwidths(0.3, d.n)
        res = solve_beta_detailed(d, [1.5], unit(beta0 + 0.05), bw)
        assert res.converged
        r = estimating_fn(d, [1.5], reduce(res.direction.coords, res.direction.pivot), bw)
        assert np.linalg.norm(r) / d.n <= 1e-8

    def test_pivot_respected(self, rng):
        d, beta0 = single_index_data(rng, noise=0.1)
        res = solve_beta(d, [1.5], unit(beta0 + 0.05), derived_bandwidths(0.3, d.n), pivot=0)
        assert res.pivot == 0 and res.coords[0] > 0


class TestFit:
    def test_partial_linear_oracle(self, rng):
        n = 500
        x = rng.normal(size=n)
        z = rng.normal(size=n) + 0.5 * x
        y = 0.8 * z + 2.0 * x + 0.3 * rng.normal(size=n)
        res = fit(Dataset(y, z, x))
        oracle = ols(y, np.column_stack([np.ones(n), x, z]))[2]
        assert res.theta[0] == pytest.approx(oracle, abs=1e-2)
        np.testing.assert_array_equal(res.beta.coords, [1.0])

    def test_single_index_fit(self, rng):
        # a monotone link keeps the sliced inverse regression start informative
        d, beta0 = single_index_data(rng, n=300, noise=0.2, link=lambda t: t + 0.3 * t**2)
        res = fit(d)
        assert angle(res.beta.coords, beta0) < 0.1
        assert res.theta[0] == pytest.approx(1.5, abs=0.1)
        assert res.sigma2 == pytest.approx(0.04, rel=0.4)
        assert len(res.theta_path) == len(res.beta_path) == 2
        assert res.bandwidths.h1 == res.bandwidths.h_opt
        assert 0 <= res.r_squared <= 1
        np.testing.assert_allclose(res.residuals, d.y - d.z @ res.theta - res.g_at_design)
        assert res.sigma2 == pytest.approx(np.mean(res.residuals**2))

    def test_fixed_bandwidth_and_iterations(self, rng):
        d, _ = single_index_data(rng, n=150, noise=0.2)
        res = fit(d, FitConfig(h_opt=0.6, iterations=0))
        assert res.bandwidths.h_opt == 0.6
        assert res.gcv_grid is None
        assert len(res.theta_path) == 1

    def test_predict_link_at_design(self, rng):
        d, _ = single_index_data(rng, n=150, noise=0.2)
        res = fit(d)
        np.testing.assert_allclose(predict_link(res, d, res.index), res.g_at_design, atol=1e-12)
