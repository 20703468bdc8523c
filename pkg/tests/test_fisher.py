import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import lfilter

from corrnoise.fisher import (FisherMatrix, VirReport, fim_constant_ar1,
                              fim_initial_state_block, fim_multiparam,
                              nuisance_orthogonality_check, vir_ar1, vir_arma11,
                              vir_arma_pq_constant, vir_initial_state_aware,
                              vir_ma1, vir_multiparam_exact,
                              vir_nonlinear_single)
from corrnoise.noise import NoiseModel
from corrnoise.odes import constant_model, logistic_analytic, logistic_model, \
    sensitivities


class TestClosedForms:
    def test_fim_constant_ar1(self):
        assert fim_constant_ar1(100, 1.0, 0.0) == pytest.approx(100.0)
        assert fim_constant_ar1(100, 1.0, 0.5) == pytest.approx(25.0)
        # reciprocal is the estimator variance
        assert 1.0 / fim_constant_ar1(1000, 1.0, 0.8) == pytest.approx(
            1.0 / (1000 * 0.04))

    def test_vir_ar1_values(self):
        assert vir_ar1(0.0) == pytest.approx(1.0)
        assert vir_ar1(0.5) == pytest.approx(3.0)
        assert vir_ar1(-0.5) == pytest.approx(1.0 / 3.0)

    def test_vir_ma1_values(self):
        assert vir_ma1(0.0) == pytest.approx(1.0)
        assert vir_ma1(1.0) == pytest.approx(2.0)
        assert vir_ma1(0.5) == pytest.approx(1.8)

    def test_vir_arma11_values(self):
        assert vir_arma11(0.5, 0.0) == pytest.approx(vir_ar1(0.5), rel=1e-14)
        assert vir_arma11(0.0, 0.7) == pytest.approx(vir_ma1(0.7), rel=1e-14)
        assert vir_arma11(0.5, 0.5) == pytest.approx(27.0 / 7.0, rel=1e-12)

    @given(st.floats(0.001, 0.97), st.floats(0.001, 0.97))
    @settings(max_examples=200, deadline=None)
    def test_arma11_exceeds_ar1_for_positive_coefficients(self, rho, phi):
        assert vir_arma11(rho, phi) >= vir_ar1(rho)

    def test_monotonicity_on_grid(self):
        grid = np.linspace(0.01, 0.97, 99)
        ar1_vals = np.array([vir_ar1(r) for r in grid])
        ma1_vals = np.array([vir_ma1(p) for p in grid])
        assert np.all(np.diff(ar1_vals) > 0)
        assert np.all(np.diff(ma1_vals) > 0)
        assert np.all(ar1_vals > ma1_vals)  # equal coefficient ordering

    def test_domain_checks(self):
        with pytest.raises(ValueError):
            vir_ar1(1.0)
        with pytest.raises(ValueError):
            vir_ma1(1.5)


class TestGeneralArma:
    def test_reduces_to_ar1(self):
        got = vir_arma_pq_constant(NoiseModel.ar1(2.0, 0.7))
        assert got == pytest.approx(vir_ar1(0.7), rel=1e-12)

    def test_reduces_to_arma11(self):
        for rho, phi in [(0.5, 0.5), (0.3, -0.2), (-0.4, 0.8), (0.9, 0.9)]:
            got = vir_arma_pq_constant(NoiseModel.arma(1.3, [rho], [phi]))
            assert got == pytest.approx(vir_arma11(rho, phi), rel=1e-12)

    def test_reduces_to_ma1(self):
        got = vir_arma_pq_constant(NoiseModel.ma1(1.0, 0.6))
        assert got == pytest.approx(vir_ma1(0.6), rel=1e-12)

    def test_ar2_value_frozen(self):
        # cross-checked by the Monte-Carlo harness in the acceptance suite
        nm = NoiseModel.arma(1.0, [0.5, 0.2], [])
        psi1 = 1.0 - 0.5 - 0.2
        from corrnoise.noise import process_variance
        want = (1.0 / psi1**2) * (1.0 / process_variance(nm))
        assert vir_arma_pq_constant(nm) == pytest.approx(want, rel=1e-12)

    def test_unit_root_rejected(self):
        nm = NoiseModel.arma(1.0, [0.5, 0.2], [])
        object.__setattr__(nm, "rho", np.array([0.7, 0.3]))  # Psi(1) = 0
        with pytest.raises(ValueError):
            vir_arma_pq_constant(nm)


class TestSensitivityForms:
    def test_constant_sensitivities_recover_ar1(self):
        sens = np.full(201, 2.5)
        assert vir_nonlinear_single(sens, 0.6) == pytest.approx(vir_ar1(0.6),
                                                                rel=1e-10)

    def test_rho_zero_gives_one(self):
        sens = np.linspace(0.5, 3.0, 100)
        assert vir_nonlinear_single(sens, 0.0) == pytest.approx(1.0)

    def test_single_param_reduction(self):
        sens = np.sin(np.linspace(0, 3, 150)) + 1.5
        a = vir_multiparam_exact(sens[:, None], 0.7, 0)
        b = vir_nonlinear_single(sens, 0.7)
        assert a == pytest.approx(b, rel=1e-12)

    def test_multiparam_rho_zero_all_ones(self):
        model = logistic_model()
        sens = sensitivities(model, model.theta_ref, np.linspace(0, 20, 101),
                             "forward_ode").sensitivities
        np.testing.assert_allclose(vir_multiparam_exact(sens, 0.0), 1.0,
                                   rtol=1e-10)

    def test_single_vs_multiparam_consistency(self):
        # with the other parameters pinned, the single-parameter formula is
        # the 1x1 case of the exact matrix formula
        model = logistic_model()
        sens = sensitivities(model, model.theta_ref, np.linspace(0, 20, 201),
                             "forward_ode").sensitivities
        single = vir_nonlinear_single(sens[:, 0], 0.9)
        exact_1d = vir_multiparam_exact(sens[:, :1], 0.9, 0)
        assert single == pytest.approx(exact_1d, rel=1e-12)

    def test_singular_information_diagnosed(self):
        sens = np.column_stack([np.linspace(0, 1, 50), np.linspace(0, 2, 50)])
        with pytest.raises(ValueError, match="unidentifiable"):
            vir_multiparam_exact(sens, 0.5)


class TestInitialStateBlock:
    def test_rho_zero_matches_plain_fim(self):
        rng = np.random.default_rng(0)
        sens = rng.normal(size=(80, 3))
        a = fim_initial_state_block(sens, 0.0, 1.3, x0_index=2).matrix
        b = fim_multiparam(sens, 0.0, 1.3).matrix
        np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_constant_model_off_diagonal(self):
        # f independent of x0: off-diagonals reduce to rho/sigma^2 *
        # (s_i(1) - rho * s_i(0))
        rng = np.random.default_rng(1)
        sens = np.column_stack([rng.normal(size=60), np.zeros(60)])
        rho, sigma = 0.6, 1.1
        fim = fim_initial_state_block(sens, rho, sigma, x0_index=1).matrix
        expected = rho / sigma**2 * (sens[1, 0] - rho * sens[0, 0])
        assert fim[0, 1] == pytest.approx(expected, rel=1e-12)
        assert fim[1, 1] == pytest.approx(rho**2 / sigma**2, rel=1e-12)

    def test_fd_hessian_matches_on_noise_free_data(self):
        # the expectation of the observed information keeps only the
        # deterministic lag-difference part, which noise-free data isolates
        rho, sigma = 0.9, 1.0
        n_obs = 2001
        times = np.linspace(0.0, 20.0, n_obs)
        theta0 = np.array([0.5, 50.0, 1.0])
        x = logistic_analytic(theta0, times)[None, :]
        hess = -_mean_fd_hessian(theta0, x, times, rho, sigma)
        model = logistic_model()
        sens = sensitivities(model, theta0, times, "forward_ode").sensitivities
        fim = fim_initial_state_block(sens, rho, sigma, x0_index=2).matrix
        np.testing.assert_allclose(hess, fim, rtol=1e-3)

    def test_fd_hessian_matches_in_expectation(self):
        # Monte-Carlo mean of the observed information over simulated
        # datasets, compared within 4 MC standard errors entrywise
        rho, sigma = 0.9, 1.0
        n_obs = 501
        times = np.linspace(0.0, 20.0, n_obs)
        theta0 = np.array([0.5, 50.0, 1.0])
        rng = np.random.Generator(np.random.PCG64(424242))
        n_data = 300
        innov = sigma * rng.standard_normal((n_data, n_obs + 500))
        eps = lfilter([1.0], [1.0, -rho], innov, axis=1)[:, 500:]
        x = logistic_analytic(theta0, times)[None, :] + eps
        mean_h, se_h = _fd_hessian_stats(theta0, x, times, rho, sigma)
        model = logistic_model()
        sens = sensitivities(model, theta0, times, "forward_ode").sensitivities
        fim = fim_initial_state_block(sens, rho, sigma, x0_index=2).matrix
        assert np.all(np.abs(-mean_h - fim) < 4.0 * se_h + 1e-3 * np.abs(fim).max())

    def test_vir_initial_state_aware_reduces_at_rho_zero(self):
        model = logistic_model()
        sens = sensitivities(model, model.theta_ref, np.linspace(0, 20, 101),
                             "forward_ode").sensitivities
        np.testing.assert_allclose(vir_initial_state_aware(sens, 0.0, 2), 1.0,
                                   rtol=1e-10)


def _boundary_loglik(theta, x, times, rho, sigma):
    """Independent evaluation of the AR(1) likelihood whose first residual
    lags through the initial-state parameter (vectorised over datasets)."""
    f = logistic_analytic(theta, times)
    nu1 = x[:, 1] - rho * theta[2] - (f[1] - rho * f[0])
    nus = (x[:, 2:] - rho * x[:, 1:-1]) - (f[2:] - rho * f[1:-1])[None, :]
    return -(nu1**2 + (nus**2).sum(axis=1)) / (2.0 * sigma**2)


def _fd_hessian_per_dataset(theta0, x, times, rho, sigma):
    m = theta0.size
    hs = 1e-4 * np.maximum(1.0, np.abs(theta0))
    hess = np.zeros((m, m, x.shape[0]))
    for i in range(m):
        for j in range(i, m):
            ei = np.zeros(m)
            ei[i] = hs[i]
            ej = np.zeros(m)
            ej[j] = hs[j]
            if i == j:
                vals = (_boundary_loglik(theta0 + ei, x, times, rho, sigma)
                        - 2 * _boundary_loglik(theta0, x, times, rho, sigma)
                        + _boundary_loglik(theta0 - ei, x, times, rho, sigma)) \
                    / hs[i]**2
            else:
                vals = (_boundary_loglik(theta0 + ei + ej, x, times, rho, sigma)
                        - _boundary_loglik(theta0 + ei - ej, x, times, rho, sigma)
                        - _boundary_loglik(theta0 - ei + ej, x, times, rho, sigma)
                        + _boundary_loglik(theta0 - ei - ej, x, times, rho, sigma)) \
                    / (4 * hs[i] * hs[j])
            hess[i, j] = hess[j, i] = vals
    return hess


def _mean_fd_hessian(theta0, x, times, rho, sigma):
    return _fd_hessian_per_dataset(theta0, x, times, rho, sigma).mean(axis=2)


def _fd_hessian_stats(theta0, x, times, rho, sigma):
    hess = _fd_hessian_per_dataset(theta0, x, times, rho, sigma)
    n = hess.shape[2]
    return hess.mean(axis=2), hess.std(axis=2, ddof=1) / np.sqrt(n)


class TestSigmaBridge:
    def test_iid_sigma_estimate_matches_process_sd(self):
        # the IID model's fitted noise scale converges to the AR(1)
        # process standard deviation sigma / sqrt(1 - rho^2)
        from corrnoise.noise import simulate_noise
        sigma, rho, n = 1.0, 0.8, 100_000
        x = simulate_noise(NoiseModel.ar1(sigma, rho), n, seed=606).values
        mu_hat = x.mean()
        sigma_hat = np.sqrt(np.mean((x - mu_hat) ** 2))
        assert sigma_hat == pytest.approx(sigma / np.sqrt(1 - rho**2), rel=0.02)


class TestNuisanceOrthogonality:
    def test_constant_model(self):
        model = constant_model(3.0)
        report = nuisance_orthogonality_check(model, [3.0], np.arange(50.0),
                                              1.0, 0.6, n_datasets=4000, seed=2)
        assert report["ok"]
        assert abs(report["sigma_theta"]["mu"]["z"]) < 4
        assert abs(report["rho_theta"]["mu"]["z"]) < 4

    def test_logistic_model(self):
        model = logistic_model()
        grid = np.linspace(0.0, 20.0, 51)
        report = nuisance_orthogonality_check(model, model.theta_ref, grid,
                                              1.0, 0.9, n_datasets=4000, seed=3)
        assert report["ok"]

    def test_zero_residuals_give_exact_zero(self):
        # with data equal to the trajectory, the sigma-theta cross term is
        # identically zero, not just zero in expectation
        model = constant_model(3.0)
        times = np.arange(30.0)
        f = np.full(30, 3.0)
        rho, sigma = 0.5, 1.0
        h = 1e-5
        x = f[None, :]
        nu_p = (x[:, 1:] - rho * x[:, :-1]) - ((f + 0) [1:] - rho * f[:-1])[None, :]
        # direct finite difference of the sigma-score around mu
        def ssq(mu):
            fv = np.full(30, mu)
            nus = (x[:, 1:] - rho * x[:, :-1]) - (fv[1:] - rho * fv[:-1])[None, :]
            return (nus**2).sum(axis=1)
        cross = (ssq(3.0 + h) - ssq(3.0 - h)) / (2 * h) / sigma**3
        assert cross[0] == pytest.approx(0.0, abs=1e-12)


class TestReportTypes:
    def test_fisher_matrix_validation(self):
        with pytest.raises(ValueError, match="symmetric"):
            FisherMatrix(("a", "b"), np.array([[1.0, 2.0], [0.0, 1.0]]))
        with pytest.raises(ValueError, match="semidefinite"):
            FisherMatrix(("a",), np.array([[-1.0]]))
        fm = FisherMatrix(("a", "b"), np.array([[2.0, 0.1], [0.1, 1.0]]))
        inv = fm.inverse()
        np.testing.assert_allclose(inv @ fm.matrix, np.eye(2), atol=1e-12)

    def test_condition_limit_guard(self):
        mat = np.diag([1.0, 1e-14])
        with pytest.raises(ValueError, match="unidentifiable"):
            FisherMatrix(("a", "b"), mat).inverse()

    def test_vir_report_json(self, tmp_path):
        report = VirReport({"r": {"vir": 3.0, "formula": "constant_ar1"}},
                           rho=0.5)
        path = tmp_path / "vir.json"
        report.to_json(path)
        import json
        rows = json.loads(path.read_text())
        assert rows[0]["parameter"] == "r"
        assert rows[0]["vir"] == 3.0
        assert rows[0]["formula"] == "constant_ar1"
        with pytest.raises(ValueError):
            VirReport({"r": {"vir": -1.0, "formula": "constant_ar1"}})
        with pytest.raises(ValueError):
            VirReport({"r": {"vir": 1.0, "formula": "mystery"}})
