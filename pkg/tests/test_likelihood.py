import numpy as np
import pytest
from scipy.stats import multivariate_normal

from corrnoise.likelihood import (StateSpaceForm, arma_kalman_loglik_fast,
                                  arma_statespace, exact_mvn_loglik,
                                  kalman_innovations, kalman_loglik,
                                  loglik_ar1_conditional,
                                  loglik_arma11_conditional, loglik_auto,
                                  loglik_iid)
from corrnoise.noise import NoiseModel, simulate_noise
from corrnoise.odes import constant_model, integrate
from corrnoise.series import TimeSeries

LOG_2PI = np.log(2 * np.pi)

# Independent straight-line recursion of the conditional ARMA(1,1)
# likelihood on the 5-point fixture below (nu(1)=nu(2)=0, sum from t=3).
ARMA11_FIXTURE_X = np.array([0.3, -0.1, 0.7, 0.2, -0.4])
ARMA11_FIXTURE_F = np.array([0.1, 0.0, 0.2, 0.1, 0.0])
ARMA11_FIXTURE_LOGLIK = -2.472999445671  # rho=0.4, phi=0.2, sigma=0.8


class TestIid:
    def test_zero_residuals(self):
        f = np.linspace(0, 1, 20)
        ll = loglik_iid(f.copy(), f, 1.0)
        assert ll.value == pytest.approx(-10 * LOG_2PI, rel=1e-14)

    def test_single_point(self):
        ll = loglik_iid(np.array([1.0]), np.array([0.0]), 1.0)
        assert ll.value == pytest.approx(-0.5 * LOG_2PI - 0.5, rel=1e-14)

    def test_matches_mvn_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=40)
        f = rng.normal(size=40)
        got = loglik_iid(x, f, 1.7).value
        want = exact_mvn_loglik(x, f, NoiseModel.iid(1.7)).value
        assert got == pytest.approx(want, abs=1e-12)

    def test_grid_mismatch_rejected(self):
        a = TimeSeries(0.0, 1.0, np.zeros(5))
        b = TimeSeries(0.0, 0.5, np.zeros(5))
        with pytest.raises(ValueError, match="grids"):
            loglik_iid(a, b, 1.0)


class TestAr1Conditional:
    def test_rho_zero_reduces_to_iid(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=30)
        f = rng.normal(size=30)
        a = loglik_ar1_conditional(x, f, 1.3, 0.0).value
        b = loglik_iid(x[1:], f[1:], 1.3).value
        assert a == pytest.approx(b, abs=1e-12)

    def test_three_point_hand_case(self):
        ll = loglik_ar1_conditional(np.array([1.0, 2.0, 3.0]), np.zeros(3), 1.0, 0.5)
        assert ll.value == pytest.approx(-LOG_2PI - 0.5 * (1.5**2 + 2.0**2), rel=1e-14)
        assert ll.conditioned_steps == 1
        assert ll.value == pytest.approx(ll.per_step.sum(), rel=1e-14)

    def test_stationarity_bound(self):
        with pytest.raises(ValueError):
            loglik_ar1_conditional(np.zeros(5), np.zeros(5), 1.0, 1.0)

    def test_conditional_approaches_exact(self):
        # per-observation gap to the exact likelihood shrinks with T
        nm = NoiseModel.ar1(1.0, 0.7)
        gaps = []
        for n in (100, 1000):
            x = simulate_noise(nm, n, seed=100 + n).values
            f = np.zeros(n)
            cond = loglik_ar1_conditional(x, f, 1.0, 0.7).value
            exact = exact_mvn_loglik(x, f, nm).value
            gaps.append(abs(cond - exact) / n)
        assert gaps[1] < gaps[0]
        assert gaps[1] < 0.05


class TestArma11Conditional:
    def test_five_point_fixture(self):
        ll = loglik_arma11_conditional(ARMA11_FIXTURE_X, ARMA11_FIXTURE_F,
                                       0.8, 0.4, 0.2)
        assert ll.value == pytest.approx(ARMA11_FIXTURE_LOGLIK, abs=1e-10)
        assert ll.conditioned_steps == 2

    def test_phi_zero_reduces_to_ar1(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=25)
        f = rng.normal(size=25)
        a = loglik_arma11_conditional(x, f, 1.1, 0.4, 0.0).value
        b = loglik_ar1_conditional(x[1:], f[1:], 1.1, 0.4).value
        assert a == pytest.approx(b, abs=1e-12)

    def test_both_zero_reduces_to_iid(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=25)
        f = rng.normal(size=25)
        a = loglik_arma11_conditional(x, f, 0.9, 0.0, 0.0).value
        b = loglik_iid(x[2:], f[2:], 0.9).value
        assert a == pytest.approx(b, abs=1e-12)

    def test_invertibility_bound(self):
        with pytest.raises(ValueError):
            loglik_arma11_conditional(np.zeros(5), np.zeros(5), 1.0, 0.3, 1.2)


class TestKalman:
    def test_iid_reduction(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=60)
        f = rng.normal(size=60)
        ssf = arma_statespace(NoiseModel.iid(0.9))
        got = kalman_loglik(x, f, ssf).value
        want = loglik_iid(x, f, 0.9).value
        assert got == pytest.approx(want, abs=1e-10)

    def test_matches_mvn_oracle_arma11(self):
        nm = NoiseModel.arma(0.7, [0.6], [0.3])
        x = simulate_noise(nm, 50, seed=8).values
        got = kalman_loglik(x, np.zeros(50), arma_statespace(nm)).value
        want = exact_mvn_loglik(x, np.zeros(50), nm).value
        assert got == pytest.approx(want, abs=1e-8)

    def test_ar1_steady_state_prediction_variance(self):
        # after the first update the AR(1) state is known exactly, so
        # one-step prediction variance collapses to sigma^2
        sigma, rho = 1.3, 0.5
        nm = NoiseModel.ar1(sigma, rho)
        x = simulate_noise(nm, 12, seed=9).values
        ll = kalman_loglik(x, np.zeros(12), arma_statespace(nm))
        inn = kalman_innovations(x, np.zeros(12), arma_statespace(nm))
        f_var = np.exp(-2.0 * ll.per_step - LOG_2PI - inn**2)
        assert abs(f_var[0] - sigma**2 / (1 - rho**2)) < 1e-10
        np.testing.assert_allclose(f_var[2:], sigma**2, atol=1e-10)

    def test_oracle_triangle_random_draws(self):
        rng = np.random.default_rng(11)
        for i in range(20):
            rho = rng.uniform(-0.9, 0.9)
            phi = rng.uniform(-0.9, 0.9)
            sigma = rng.uniform(0.3, 2.0)
            nm = NoiseModel.arma(sigma, [rho], [phi])
            x = simulate_noise(nm, 50, seed=300 + i).values
            a = kalman_loglik(x, np.zeros(50), arma_statespace(nm)).value
            b = exact_mvn_loglik(x, np.zeros(50), nm).value
            assert abs(a - b) < 1e-8 * max(1.0, abs(b))

    def test_diffuse_initialisation_available(self):
        nm = NoiseModel.ar1(1.0, 0.5)
        ssf = arma_statespace(nm, init="diffuse")
        assert ssf.initial_cov[0, 0] == pytest.approx(1e7)
        x = simulate_noise(nm, 30, seed=12).values
        stat = kalman_loglik(x, np.zeros(30), arma_statespace(nm)).value
        diff = kalman_loglik(x, np.zeros(30), ssf).value
        assert np.isfinite(diff) and diff != pytest.approx(stat)

    def test_fast_path_matches_validated_path(self):
        nm = NoiseModel.arma(1.2, [0.5], [-0.2])
        x = simulate_noise(nm, 80, seed=13).values
        fast = arma_kalman_loglik_fast(x, nm.rho, nm.phi, nm.sigma)
        full = kalman_loglik(x, np.zeros(80), arma_statespace(nm)).value
        assert fast == pytest.approx(full, abs=1e-10)


class TestExactMvn:
    def test_ar1_three_point_covariance(self):
        # Sigma = sigma^2/(1-rho^2) * [[1,rho,rho^2],[rho,1,rho],[rho^2,rho,1]]
        sigma, rho = 1.2, 0.6
        x = np.array([0.4, -0.3, 0.9])
        g0 = sigma**2 / (1 - rho**2)
        cov = g0 * np.array([[1, rho, rho**2], [rho, 1, rho], [rho**2, rho, 1]])
        want = multivariate_normal(mean=np.zeros(3), cov=cov).logpdf(x)
        got = exact_mvn_loglik(x, np.zeros(3), NoiseModel.ar1(sigma, rho)).value
        assert got == pytest.approx(want, rel=1e-12)

    def test_length_limit(self):
        with pytest.raises(ValueError, match="too long"):
            exact_mvn_loglik(np.zeros(3000), np.zeros(3000), NoiseModel.iid(1.0))


class TestStateSpaceForm:
    def test_paper_arma11_block(self):
        nm = NoiseModel.arma(1.0, [0.5], [0.3])
        ssf = arma_statespace(nm)
        np.testing.assert_allclose(ssf.transition, [[0.5, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(ssf.innovation_loading, [1.0, 0.3])
        np.testing.assert_allclose(ssf.observation, [1.0, 0.0])
        # stationary initial covariance reproduces the process variance
        g0 = (1 + 0.3**2 + 2 * 0.3 * 0.5) / (1 - 0.25)
        assert ssf.initial_cov[0, 0] == pytest.approx(g0, rel=1e-12)

    def test_dimension_validation(self):
        with pytest.raises(ValueError):
            StateSpaceForm(np.eye(2), np.ones(3), np.ones(2), 1.0,
                           np.zeros(2), np.eye(2))
        with pytest.raises(ValueError, match="semidefinite"):
            StateSpaceForm(np.eye(2), np.ones(2), np.ones(2), 1.0,
                           np.zeros(2), -np.eye(2))


class TestDispatch:
    def test_auto_routes(self):
        x = simulate_noise(NoiseModel.ar1(1.0, 0.5), 30, seed=14).values
        f = np.zeros(30)
        assert loglik_auto(x, f, NoiseModel.iid(1.0)) == pytest.approx(
            loglik_iid(x, f, 1.0).value)
        assert loglik_auto(x, f, NoiseModel.ar1(1.0, 0.5)) == pytest.approx(
            loglik_ar1_conditional(x, f, 1.0, 0.5).value)
        assert loglik_auto(x, f, NoiseModel.ma1(1.0, 0.4)) == pytest.approx(
            loglik_arma11_conditional(x, f, 1.0, 0.0, 0.4).value)
        nm22 = NoiseModel.arma(1.0, [0.4, 0.1], [0.2, 0.1])
        assert loglik_auto(x, f, nm22) == pytest.approx(
            kalman_loglik(x, f, arma_statespace(nm22)).value)

    def test_kalman_engine_forced(self):
        x = simulate_noise(NoiseModel.ar1(1.0, 0.5), 30, seed=15).values
        f = np.zeros(30)
        got = loglik_auto(x, f, NoiseModel.ar1(1.0, 0.5), engine="kalman")
        want = kalman_loglik(x, f, arma_statespace(NoiseModel.ar1(1.0, 0.5))).value
        assert got == pytest.approx(want)


def test_trajectory_input_and_grid_checks():
    model = constant_model(2.0)
    grid = TimeSeries(0.0, 1.0, np.zeros(10))
    trajectory = integrate(model, [2.0], grid)
    obs = grid.with_values(2.0 + 0.1 * np.arange(10.0))
    ll = loglik_iid(obs, trajectory, 0.5)
    assert np.isfinite(ll.value)


def test_true_parameters_beat_perturbed_ones():
    # true values outscore a 5-standard-error perturbation in >= 95% of seeds
    sigma, rho, n = 1.0, 0.6, 400
    nm = NoiseModel.ar1(sigma, rho)
    se = np.sqrt(sigma**2 / (n * (1 - rho) ** 2))
    wins = 0
    n_seeds = 200
    for s in range(n_seeds):
        x = 3.0 + simulate_noise(nm, n, seed=9000 + s).values
        f_true = np.full(n, 3.0)
        f_pert = np.full(n, 3.0 + 5 * se)
        if loglik_ar1_conditional(x, f_true, sigma, rho).value > \
           loglik_ar1_conditional(x, f_pert, sigma, rho).value:
            wins += 1
    assert wins >= 0.95 * n_seeds
