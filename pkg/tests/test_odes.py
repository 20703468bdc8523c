import numpy as np
import pytest

from corrnoise import odes
from corrnoise.odes import (IntegrationError, VoltageProtocol, constant_model,
                            demo_step_protocol, gating_steady_state, herg_model,
                            integrate, integrate_states, logistic_analytic,
                            logistic_model, sensitivities)
from corrnoise.series import TimeSeries

THETA = np.array([0.5, 50.0, 1.0])

# Kinetics in the study-prior scale (1/s rates with voltages in volts).
HERG_P = np.array([2.26e-1, 6.99e1, 3.45e-2, 5.46e1, 8.73e1, 8.91e0, 5.15e0, 3.16e1])
HERG_THETA = np.concatenate(([33.0], HERG_P))


class TestLogistic:
    def test_initial_condition(self):
        tr = integrate(logistic_model(*THETA), THETA, np.array([0.0, 0.1]))
        assert tr.values[0] == pytest.approx(1.0, abs=1e-12)

    def test_solution_at_t20(self):
        # closed form evaluated independently of the solver
        expected = 50.0 / (1.0 + ((50.0 - 1.0) / 1.0) * np.exp(-0.5 * 20.0))
        grid = np.linspace(0.0, 20.0, 501)
        tr = integrate(logistic_model(*THETA), THETA, grid)
        assert tr.values[-1] == pytest.approx(expected, rel=1e-6)
        assert logistic_analytic(THETA, 20.0) == pytest.approx(expected, rel=1e-14)

    def test_solver_matches_analytic_everywhere(self):
        grid = np.linspace(0.0, 20.0, 500)
        tr = integrate(logistic_model(*THETA), THETA, grid)
        exact = logistic_analytic(THETA, grid)
        rel = np.max(np.abs(tr.values - exact) / np.abs(exact))
        assert rel < 1e-6

    def test_half_capacity_time(self):
        # x(t*) = kappa/2 at t* = ln((kappa - x0)/x0) / r
        t_star = np.log((50.0 - 1.0) / 1.0) / 0.5
        assert logistic_analytic(THETA, t_star) == pytest.approx(25.0, rel=1e-12)
        grid = np.linspace(0.0, t_star, 200)
        tr = integrate(logistic_model(*THETA), THETA, grid)
        assert tr.values[-1] == pytest.approx(25.0, rel=1e-6)

    def test_equilibrium_at_capacity(self):
        theta = np.array([0.5, 50.0, 50.0])
        grid = np.linspace(0.0, 20.0, 50)
        tr = integrate(logistic_model(0.5, 50.0, 50.0), theta, grid)
        np.testing.assert_allclose(tr.values, 50.0, rtol=1e-10)

    def test_nonpositive_parameters_rejected(self):
        with pytest.raises(ValueError):
            logistic_model(-0.5, 50.0, 1.0)
        with pytest.raises(ValueError):
            logistic_model(0.5, 0.0, 1.0)
        with pytest.raises(ValueError):
            integrate(logistic_model(), np.array([0.5, 50.0, -1.0]),
                      np.linspace(0, 1, 5))

    @pytest.mark.parametrize("tol", [1e-5, 1e-6, 1e-7, 1e-8])
    def test_self_convergence(self, tol):
        # dense-output error dominates the node error by up to ~10x, so the
        # 10x-tighter run must agree within a 10x envelope of the looser
        # tolerance scale (and thereby shrink proportionally with it)
        grid = np.linspace(0.0, 20.0, 200)
        model = logistic_model(*THETA)
        loose = integrate(model, THETA, grid, rtol=tol, atol=tol).values
        tight = integrate(model, THETA, grid, rtol=tol / 10, atol=tol / 10).values
        scale = tol + tol * np.abs(tight).max()
        assert np.max(np.abs(loose - tight)) < 10.0 * scale


class TestSensitivities:
    def test_constant_model_unit_sensitivity(self):
        model = constant_model(3.0)
        tr = sensitivities(model, np.array([3.0]), np.linspace(0, 10, 11),
                           "finite_difference")
        np.testing.assert_allclose(tr.sensitivities[:, 0], 1.0, atol=1e-9)

    def test_logistic_dkappa_saturates_at_one(self):
        grid = np.linspace(0.0, 60.0, 61)
        tr = sensitivities(logistic_model(*THETA), THETA, grid, "forward_ode")
        j = tr.param_names.index("kappa")
        assert tr.sensitivities[-1, j] == pytest.approx(1.0, abs=1e-6)

    def test_methods_agree_on_logistic(self):
        grid = np.linspace(0.0, 20.0, 101)
        fd = sensitivities(logistic_model(*THETA), THETA, grid, "finite_difference")
        fw = sensitivities(logistic_model(*THETA), THETA, grid, "forward_ode")
        mask = np.abs(fw.sensitivities) > 1e-8
        rel = np.abs(fd.sensitivities[mask] - fw.sensitivities[mask]) \
            / np.abs(fw.sensitivities[mask])
        assert np.max(rel) < 1e-4

    def test_methods_agree_on_channel_strong_signal(self):
        # step-protocol kinks limit finite differences on weak components,
        # so compare where the signal carries information
        proto = demo_step_protocol()
        model = herg_model(HERG_THETA[0], HERG_P, proto)
        grid = np.arange(0.0, 4.5, 0.02)
        fd = sensitivities(model, HERG_THETA, grid, "finite_difference")
        fw = sensitivities(model, HERG_THETA, grid, "forward_ode")
        col_scale = np.abs(fw.sensitivities).max(axis=0, keepdims=True)
        mask = np.abs(fw.sensitivities) > 0.5 * col_scale
        rel = np.abs(fd.sensitivities[mask] - fw.sensitivities[mask]) \
            / np.abs(fw.sensitivities[mask])
        assert np.max(rel) < 1e-3

    def test_generic_python_fallback(self):
        # a model with a plain-Python rhs and no analytic sensitivity system
        def rhs(t, x, theta, ctx):
            return np.array([-theta[0] * x[0]])

        model = odes.DynamicalModel(
            name="decay", state_dim=1, param_names=("lam",), rhs=rhs,
            initial_state=lambda th: np.array([2.0]),
            observe_path=lambda t, x, th: x[:, 0],
            observe_jac=lambda t, x, th: (np.ones((t.size, 1)),
                                          np.zeros((t.size, 1))),
            lower=np.array([0.0]), upper=np.array([np.inf]),
            theta_ref=np.array([0.7]))
        grid = np.linspace(0.0, 3.0, 31)
        fw = sensitivities(model, [0.7], grid, "forward_ode")
        exact = -grid * 2.0 * np.exp(-0.7 * grid)
        np.testing.assert_allclose(fw.sensitivities[:, 0], exact, rtol=1e-5,
                                   atol=1e-8)


class TestChannel:
    def test_zero_current_at_reversal_potential(self):
        hold = VoltageProtocol(np.array([0.0]), np.array([-88.0]), ("hold",))
        model = herg_model(HERG_THETA[0], HERG_P, hold, e_k_mv=-88.0)
        tr = integrate(model, HERG_THETA, np.linspace(0.0, 5.0, 50))
        np.testing.assert_allclose(tr.values, 0.0, atol=1e-12)

    def test_gates_relax_to_steady_state(self):
        v = -20.0
        a_inf, r_inf, tau_a, tau_r = gating_steady_state(v, HERG_THETA)
        hold = VoltageProtocol(np.array([0.0]), np.array([v]), ("hold",))
        model = herg_model(HERG_THETA[0], HERG_P, hold)
        horizon = 40.0 * max(tau_a, tau_r)
        states = integrate_states(model, HERG_THETA, np.array([0.0, horizon]))
        assert states[-1, 0] == pytest.approx(a_inf, rel=1e-7)
        assert states[-1, 1] == pytest.approx(r_inf, rel=1e-7)

    def test_timescale_halves_when_rates_double(self):
        theta2 = HERG_THETA.copy()
        theta2[1] *= 2.0  # p1 and p3 scale k1, k2 multiplicatively
        theta2[3] *= 2.0
        _, _, tau_a, _ = gating_steady_state(-20.0, HERG_THETA)
        _, _, tau_a2, _ = gating_steady_state(-20.0, theta2)
        assert tau_a2 == pytest.approx(tau_a / 2.0, rel=1e-12)

    def test_steady_state_current_value(self):
        v = 0.0
        a_inf, r_inf, tau_a, tau_r = gating_steady_state(v, HERG_THETA)
        hold = VoltageProtocol(np.array([0.0]), np.array([v]), ("hold",))
        model = herg_model(HERG_THETA[0], HERG_P, hold, e_k_mv=-88.0)
        horizon = 40.0 * max(tau_a, tau_r)
        tr = integrate(model, HERG_THETA, np.array([0.0, horizon]))
        expected = HERG_THETA[0] * a_inf * r_inf * (v - (-88.0))
        assert tr.values[-1] == pytest.approx(expected, rel=1e-6)

    def test_gates_stay_in_unit_interval(self):
        proto = demo_step_protocol()
        rng = np.random.Generator(np.random.PCG64(5))
        grid = np.arange(0.0, 4.5, 0.02)
        checked = 0
        while checked < 5:
            scale = np.exp(0.3 * rng.standard_normal(9))
            theta = HERG_THETA * scale
            model = herg_model(theta[0], theta[1:], proto)
            try:
                model.check_bounds(theta)
            except ValueError:
                continue
            states = integrate_states(model, theta, grid)
            assert states.min() >= -1e-9
            assert states.max() <= 1.0 + 1e-9
            checked += 1

    def test_rate_guard_rejects_extreme_kinetics(self):
        proto = demo_step_protocol()
        bad = HERG_P.copy()
        bad[1] = 400.0  # steep voltage dependence pushes rates out of band
        model = herg_model(33.0, bad, proto)
        with pytest.raises(ValueError, match="plausibility guard"):
            integrate(model, np.concatenate(([33.0], bad)),
                      np.linspace(0.0, 1.0, 10))


class TestVoltageProtocol:
    def test_round_trip(self, tmp_path):
        proto = demo_step_protocol()
        path = tmp_path / "proto.csv"
        proto.to_csv(path)
        back = VoltageProtocol.from_csv(path)
        np.testing.assert_allclose(back.times_ms, proto.times_ms)
        np.testing.assert_allclose(back.voltages_mv, proto.voltages_mv)
        assert back.modes == proto.modes

    def test_non_monotone_rejected(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            VoltageProtocol(np.array([0.0, 10.0, 10.0]),
                            np.array([-80.0, 20.0, -40.0]),
                            ("hold", "hold", "hold"))

    def test_first_breakpoint_nonpositive(self):
        with pytest.raises(ValueError, match="t <= 0"):
            VoltageProtocol(np.array([5.0]), np.array([-80.0]), ("hold",))

    def test_ramp_interpolation(self):
        proto = VoltageProtocol(np.array([0.0, 1000.0]), np.array([0.0, 100.0]),
                                ("ramp", "hold"))
        np.testing.assert_allclose(proto.voltage_mv(np.array([0.0, 0.5, 1.0, 2.0])),
                                   [0.0, 50.0, 100.0, 100.0])

    def test_hold_is_right_continuous(self):
        proto = demo_step_protocol()
        v = proto.voltage_mv(np.array([0.5]))  # exactly at the first step edge
        assert v[0] == proto.voltages_mv[1]


class TestIntegrationFailure:
    def test_blowup_reports_failure_time(self):
        def rhs(t, x, theta, ctx):
            return np.array([x[0] ** 2])

        model = odes.DynamicalModel(
            name="blowup", state_dim=1, param_names=("x0",), rhs=rhs,
            initial_state=lambda th: np.array([th[0]]),
            observe_path=lambda t, x, th: x[:, 0],
            lower=np.array([0.0]), upper=np.array([np.inf]),
            theta_ref=np.array([1.0]))
        with pytest.raises(IntegrationError) as err:
            integrate(model, [1.0], np.linspace(0.0, 2.0, 21))
        assert 0.9 < err.value.time <= 1.05  # finite-time blowup at t = 1


def test_jitted_and_python_paths_agree():
    # same stepping source compiled two ways must agree bit-for-bit
    from corrnoise import _dopri5

    grid = np.linspace(0.0, 20.0, 200)
    y_out_nb = np.empty((200, 1))
    y_out_py = np.empty((200, 1))
    theta = THETA
    ctx = np.zeros(1)
    rhs_nb = odes._logistic_rhs
    args = (0.0, 20.0, np.array([1.0]), theta, ctx, 1e-8, 1e-8, grid)
    _dopri5._core_nb(rhs_nb, *args, y_out_nb, 1, 200_000)
    _dopri5._core(rhs_nb.py_func, *args, y_out_py, 1, 200_000)
    y_out_nb[0, 0] = y_out_py[0, 0] = 1.0
    assert y_out_nb.tobytes() == y_out_py.tobytes()


def test_trajectory_grid_matches_request():
    grid = TimeSeries(0.0, 0.25, np.zeros(9))
    tr = integrate(logistic_model(*THETA), THETA, grid)
    assert tr.grid.same_grid(grid)
