"""Dynamical models, adaptive integration and parameter sensitivities.

A :class:`DynamicalModel` bundles a right-hand side, an initial-state map,
an observable map and parameter bounds.  The bundled models are the
logistic growth equation and a two-gate Hodgkin-Huxley style potassium
channel driven by a voltage protocol.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from . import _dopri5
from .series import TimeSeries

__all__ = [
    "IntegrationError",
    "DynamicalModel",
    "Trajectory",
    "VoltageProtocol",
    "integrate",
    "sensitivities",
    "constant_model",
    "logistic_model",
    "logistic_analytic",
    "herg_model",
    "gating_steady_state",
    "demo_step_protocol",
]

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-8


class IntegrationError(RuntimeError):
    """Integration failed; ``time`` holds where the solver gave up."""

    def __init__(self, time: float, reason: str):
        super().__init__(f"integration failed at t={time:g}: {reason}")
        self.time = time
        self.reason = reason


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Observable values on a grid, optionally with parameter sensitivities
    (one column per model parameter, in ``param_names`` order)."""

    grid: TimeSeries
    sensitivities: Optional[np.ndarray] = None
    param_names: tuple = ()

    @property
    def values(self) -> np.ndarray:
        return self.grid.values


@dataclass(frozen=True, eq=False)
class DynamicalModel:
    """An ODE system dx/dt = rhs(t, x, theta) with a scalar observable.

    ``rhs`` has signature ``rhs(t, x, theta, ctx_row)``; jitted right-hand
    sides run through the compiled integrator core, plain callables through
    the Python one.  ``ctx`` carries per-segment constants (one row per
    inter-breakpoint interval); models without discontinuities use a single
    row.  The initial state may depend on parameters, so inferring it costs
    nothing extra.
    """

    name: str
    state_dim: int
    param_names: tuple
    rhs: Callable
    initial_state: Callable
    observe_path: Callable
    lower: np.ndarray
    upper: np.ndarray
    theta_ref: np.ndarray
    ctx: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    t_init: float = 0.0
    time_breakpoints: tuple = ()
    rhs_sens: Optional[Callable] = None
    observe_jac: Optional[Callable] = None
    initial_state_jac: Optional[Callable] = None
    analytic_path: Optional[Callable] = None
    theta_guard: Optional[Callable] = None

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def check_bounds(self, theta: np.ndarray) -> None:
        if np.any(theta <= self.lower) or np.any(theta >= self.upper):
            bad = [
                f"{name}={val:g}"
                for name, val, lo, hi in zip(self.param_names, theta, self.lower, self.upper)
                if not (lo < val < hi)
            ]
            raise ValueError(f"parameters outside declared bounds for {self.name}: {bad}")
        if self.theta_guard is not None and not self.theta_guard(theta):
            raise ValueError(f"parameters rejected by the {self.name} plausibility guard")


def _as_times(grid) -> np.ndarray:
    if isinstance(grid, TimeSeries):
        return grid.times
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValueError("grid must be a TimeSeries or a 1-D array of times")
    if times.size > 1:
        steps = np.diff(times)
        if np.any(steps <= 0) or np.any(np.abs(steps - steps[0]) > 1e-9 * max(1.0, steps[0])):
            raise ValueError("grid must be uniformly spaced and increasing")
    return times


def _ctx_row(model: DynamicalModel, t: float) -> np.ndarray:
    if model.ctx.shape[0] == 1:
        return model.ctx[0]
    idx = bisect.bisect_right(model.time_breakpoints, t)
    return model.ctx[idx]


def _integrate_states(model, theta, times, rtol, atol, rhs, y0):
    """Run the stepper across breakpoint segments, returning states at
    ``times`` (rows aligned with times)."""
    t_start = model.t_init
    t_end = float(times[-1])
    y_out = np.empty((times.size, y0.size))
    ie = 0
    eps = 1e-12 * max(1.0, abs(t_start))
    while ie < times.size and times[ie] <= t_start + eps:
        y_out[ie] = y0
        ie += 1
    if t_end <= t_start + eps:
        return y_out
    cuts = [b for b in model.time_breakpoints if t_start < b < t_end]
    bounds = [t_start] + cuts + [t_end]
    y = np.ascontiguousarray(y0, dtype=float)
    for a, b in zip(bounds[:-1], bounds[1:]):
        ctx_row = _ctx_row(model, 0.5 * (a + b))
        ie, status, t_fail, y = _dopri5.step_dense(
            rhs, a, b, y, theta, ctx_row, rtol, atol, times, y_out, ie)
        if status == _dopri5.STATUS_UNDERFLOW:
            raise IntegrationError(t_fail, "step size underflow")
        if status == _dopri5.STATUS_NONFINITE:
            raise IntegrationError(t_fail, "non-finite state or derivative")
        if status == _dopri5.STATUS_MAXSTEPS:
            raise IntegrationError(t_fail, "step budget exhausted (stiff system?)")
    while ie < times.size:  # grid points at exactly t_end, guarded for rounding
        y_out[ie] = y
        ie += 1
    return y_out


def integrate(model: DynamicalModel, theta, grid,
              rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Trajectory:
    """Solve the model on a uniform grid and return the observable path.

    Uses an embedded Dormand-Prince 4(5) pair with adaptive steps; values
    between accepted steps come from the method's quartic interpolant.
    """
    theta = np.ascontiguousarray(theta, dtype=float)
    if theta.size != model.n_params:
        raise ValueError(f"{model.name} expects {model.n_params} parameters, got {theta.size}")
    model.check_bounds(theta)
    times = _as_times(grid)
    if times[0] < model.t_init - 1e-12:
        raise ValueError(f"grid starts before the model's initial time {model.t_init}")
    if model.analytic_path is not None:
        values = model.analytic_path(theta, times)
    else:
        y0 = np.asarray(model.initial_state(theta), dtype=float)
        states = _integrate_states(model, theta, times, rtol, atol, model.rhs, y0)
        values = model.observe_path(times, states, theta)
    t0 = float(times[0])
    dt = float(times[1] - times[0]) if times.size > 1 else 1.0
    return Trajectory(grid=TimeSeries(t0, dt, values), param_names=model.param_names)


def integrate_states(model: DynamicalModel, theta, grid,
                     rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> np.ndarray:
    """Full state trajectory (rows = grid times); mainly for diagnostics."""
    theta = np.ascontiguousarray(theta, dtype=float)
    model.check_bounds(theta)
    times = _as_times(grid)
    y0 = np.asarray(model.initial_state(theta), dtype=float)
    return _integrate_states(model, theta, times, rtol, atol, model.rhs, y0)


def _initial_state_jacobian(model: DynamicalModel, theta: np.ndarray) -> np.ndarray:
    if model.initial_state_jac is not None:
        return np.asarray(model.initial_state_jac(theta), dtype=float)
    m = model.n_params
    jac = np.empty((model.state_dim, m))
    for j in range(m):
        h = 1e-7 * max(1.0, abs(theta[j]))
        tp = theta.copy()
        tp[j] += h
        tm = theta.copy()
        tm[j] -= h
        jac[:, j] = (np.asarray(model.initial_state(tp)) -
                     np.asarray(model.initial_state(tm))) / (2.0 * h)
    return jac


def _generic_sensitivity_rhs(model: DynamicalModel):
    """Augmented rhs with finite-difference Jacobians, for models that do
    not ship an analytic sensitivity system.  Python path only."""
    n, m = model.state_dim, model.n_params
    base = model.rhs

    def aug(t, z, theta, ctx):
        x = z[:n]
        sens = z[n:].reshape(n, m)
        f = np.asarray(base(t, x, theta, ctx), dtype=float)
        jx = np.empty((n, n))
        for j in range(n):
            h = 1e-7 * max(1.0, abs(x[j]))
            xp = x.copy()
            xp[j] += h
            xm = x.copy()
            xm[j] -= h
            jx[:, j] = (np.asarray(base(t, xp, theta, ctx)) -
                        np.asarray(base(t, xm, theta, ctx))) / (2.0 * h)
        jp = np.empty((n, m))
        for j in range(m):
            h = 1e-7 * max(1.0, abs(theta[j]))
            tp = theta.copy()
            tp[j] += h
            tm = theta.copy()
            tm[j] -= h
            jp[:, j] = (np.asarray(base(t, x, tp, ctx)) -
                        np.asarray(base(t, x, tm, ctx))) / (2.0 * h)
        return np.concatenate([f, (jx @ sens + jp).ravel()])

    return aug


def sensitivities(model: DynamicalModel, theta, grid, method: str = "forward_ode",
                  rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> Trajectory:
    """Observable trajectory plus d f / d theta_i columns.

    ``finite_difference`` re-solves at central-difference stencil points
    with relative step 1e-6 * max(1, |theta_i|); ``forward_ode`` augments
    the state with the n*m sensitivity equations and integrates once.
    """
    theta = np.ascontiguousarray(theta, dtype=float)
    model.check_bounds(theta)
    times = _as_times(grid)

    if method == "finite_difference":
        base = integrate(model, theta, grid, rtol, atol)
        m = model.n_params
        sens = np.empty((times.size, m))
        for j in range(m):
            h = 1e-6 * max(1.0, abs(theta[j]))
            tp = theta.copy()
            tp[j] += h
            tm = theta.copy()
            tm[j] -= h
            fp = integrate(model, tp, grid, rtol, atol).values
            fm = integrate(model, tm, grid, rtol, atol).values
            sens[:, j] = (fp - fm) / (2.0 * h)
        return Trajectory(grid=base.grid, sensitivities=sens,
                          param_names=model.param_names)

    if method != "forward_ode":
        raise ValueError(f"unknown sensitivity method {method!r}")
    if model.analytic_path is not None:
        # No ODE to augment; differentiate the closed-form path instead.
        return sensitivities(model, theta, grid, "finite_difference", rtol, atol)

    n, m = model.state_dim, model.n_params
    y0 = np.asarray(model.initial_state(theta), dtype=float)
    s0 = _initial_state_jacobian(model, theta)
    z0 = np.concatenate([y0, s0.ravel()])
    rhs = model.rhs_sens if model.rhs_sens is not None else _generic_sensitivity_rhs(model)
    z_path = _integrate_states(model, theta, times, rtol, atol, rhs, z0)
    states = z_path[:, :n]
    s_path = z_path[:, n:].reshape(times.size, n, m)
    values = model.observe_path(times, states, theta)
    if model.observe_jac is None:
        raise ValueError(f"{model.name} has no observable Jacobian; "
                         "use method='finite_difference'")
    dg_dx, dg_dth = model.observe_jac(times, states, theta)
    sens = np.einsum("tn,tnm->tm", dg_dx, s_path) + dg_dth
    t0 = float(times[0])
    dt = float(times[1] - times[0]) if times.size > 1 else 1.0
    return Trajectory(grid=TimeSeries(t0, dt, values), sensitivities=sens,
                      param_names=model.param_names)


# ---------------------------------------------------------------------------
# constant-mean model
# ---------------------------------------------------------------------------

def constant_model(mu: float = 0.0) -> DynamicalModel:
    """f(t; mu) = mu.  Trivial dynamics used by the constant-mean analyses."""

    def path(theta, times):
        return np.full(times.size, theta[0])

    def observe(times, states, theta):
        return states[:, 0]

    return DynamicalModel(
        name="constant",
        state_dim=1,
        param_names=("mu",),
        rhs=lambda t, x, theta, ctx: np.zeros(1),
        initial_state=lambda theta: np.array([theta[0]]),
        observe_path=observe,
        lower=np.array([-np.inf]),
        upper=np.array([np.inf]),
        theta_ref=np.array([float(mu)]),
        analytic_path=path,
    )


# ---------------------------------------------------------------------------
# logistic growth
# ---------------------------------------------------------------------------

@njit(cache=True)
def _logistic_rhs(t, y, theta, ctx):
    out = np.empty(1)
    out[0] = theta[0] * y[0] * (1.0 - y[0] / theta[1])
    return out


@njit(cache=True)
def _logistic_rhs_sens(t, z, theta, ctx):
    r = theta[0]
    kappa = theta[1]
    x = z[0]
    gx = r * (1.0 - 2.0 * x / kappa)
    out = np.empty(4)
    out[0] = r * x * (1.0 - x / kappa)
    out[1] = gx * z[1] + x * (1.0 - x / kappa)
    out[2] = gx * z[2] + r * x * x / (kappa * kappa)
    out[3] = gx * z[3]
    return out


def logistic_model(r: float = 0.5, kappa: float = 50.0, x0: float = 1.0) -> DynamicalModel:
    """Resource-limited growth dx/dt = r x (1 - x / kappa), observed directly.

    Parameters (all strictly positive): growth rate ``r``, carrying
    capacity ``kappa`` and initial size ``x0``; the initial state is an
    ordinary inferable parameter.
    """
    for name, val in (("r", r), ("kappa", kappa), ("x0", x0)):
        if not np.isfinite(val) or val <= 0:
            raise ValueError(f"logistic parameter {name} must be positive, got {val}")

    def observe(times, states, theta):
        return states[:, 0]

    def observe_jac(times, states, theta):
        dg_dx = np.ones((times.size, 1))
        dg_dth = np.zeros((times.size, 3))
        return dg_dx, dg_dth

    return DynamicalModel(
        name="logistic",
        state_dim=1,
        param_names=("r", "kappa", "x0"),
        rhs=_logistic_rhs,
        initial_state=lambda theta: np.array([theta[2]]),
        observe_path=observe,
        lower=np.zeros(3),
        upper=np.full(3, np.inf),
        theta_ref=np.array([float(r), float(kappa), float(x0)]),
        rhs_sens=_logistic_rhs_sens,
        observe_jac=observe_jac,
        initial_state_jac=lambda theta: np.array([[0.0, 0.0, 1.0]]),
    )


def logistic_analytic(theta, t) -> np.ndarray:
    """Closed-form logistic solution; the independent oracle for the solver."""
    r, kappa, x0 = float(theta[0]), float(theta[1]), float(theta[2])
    t = np.asarray(t, dtype=float)
    return kappa / (1.0 + ((kappa - x0) / x0) * np.exp(-r * t))


# ---------------------------------------------------------------------------
# hERG channel (two Hodgkin-Huxley gates under a voltage protocol)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VoltageProtocol:
    """Piecewise voltage stimulus given as (time ms, voltage mV) breakpoints.

    ``modes[i]`` says how to interpolate between breakpoint i and i+1:
    ``hold`` keeps the voltage constant, ``ramp`` interpolates linearly.
    The final segment always holds.  Times must be strictly increasing and
    start at or before zero.
    """

    times_ms: np.ndarray
    voltages_mv: np.ndarray
    modes: tuple

    def __post_init__(self):
        t = np.asarray(self.times_ms, dtype=float)
        v = np.asarray(self.voltages_mv, dtype=float)
        if t.ndim != 1 or t.size < 1 or t.size != v.size or len(self.modes) != t.size:
            raise ValueError("protocol needs equally many times, voltages and modes")
        if np.any(np.diff(t) <= 0):
            raise ValueError("protocol times must be strictly increasing (no gaps or repeats)")
        if t[0] > 0:
            raise ValueError("first protocol breakpoint must be at t <= 0")
        for m in self.modes:
            if m not in ("hold", "ramp"):
                raise ValueError(f"unknown interpolation mode {m!r}")
        object.__setattr__(self, "times_ms", t)
        object.__setattr__(self, "voltages_mv", v)

    @property
    def times_s(self) -> np.ndarray:
        return self.times_ms * 1e-3

    def end_time_s(self) -> float:
        return float(self.times_ms[-1]) * 1e-3

    def segment_table(self) -> np.ndarray:
        """Rows [v0_mV, slope_mV_per_s, t_ref_s], one per breakpoint interval."""
        t_s = self.times_s
        v = self.voltages_mv
        rows = np.zeros((t_s.size, 3))
        for i in range(t_s.size):
            rows[i, 0] = v[i]
            rows[i, 2] = t_s[i]
            if self.modes[i] == "ramp" and i + 1 < t_s.size:
                rows[i, 1] = (v[i + 1] - v[i]) / (t_s[i + 1] - t_s[i])
        return rows

    def voltage_mv(self, t_s) -> np.ndarray:
        """Voltage (mV) at times given in seconds; right-continuous at steps."""
        t_s = np.atleast_1d(np.asarray(t_s, dtype=float))
        table = self.segment_table()
        idx = np.clip(np.searchsorted(self.times_s, t_s, side="right") - 1, 0, len(table) - 1)
        return table[idx, 0] + table[idx, 1] * (t_s - table[idx, 2])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("time_ms,voltage_mV,mode\n")
            for t, v, m in zip(self.times_ms, self.voltages_mv, self.modes):
                fh.write(f"{float(t)!r},{float(v)!r},{m}\n")

    @classmethod
    def from_csv(cls, path) -> "VoltageProtocol":
        times, volts, modes = [], [], []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().replace(" ", "")
            if header != "time_ms,voltage_mV,mode":
                raise ValueError(f"expected header 'time_ms,voltage_mV,mode', got {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                t_str, v_str, m_str = line.split(",")
                times.append(float(t_str))
                volts.append(float(v_str))
                modes.append(m_str.strip())
        return cls(np.asarray(times), np.asarray(volts), tuple(modes))


def demo_step_protocol() -> VoltageProtocol:
    """Bundled 8-step hold protocol spanning -120..+40 mV (500 ms per step)."""
    steps = [-80.0, 20.0, -120.0, -40.0, 40.0, -100.0, 0.0, -60.0, 20.0, -80.0]
    times = np.arange(len(steps)) * 500.0
    return VoltageProtocol(times, np.asarray(steps), tuple(["hold"] * len(steps)))


@njit(cache=True)
def _herg_rhs(t, y, theta, ctx):
    v = (ctx[0] + ctx[1] * (t - ctx[2])) * 1e-3
    k1 = theta[1] * np.exp(theta[2] * v)
    k2 = theta[3] * np.exp(-theta[4] * v)
    k3 = theta[5] * np.exp(theta[6] * v)
    k4 = theta[7] * np.exp(-theta[8] * v)
    out = np.empty(2)
    out[0] = k1 * (1.0 - y[0]) - k2 * y[0]
    out[1] = k4 * (1.0 - y[1]) - k3 * y[1]
    return out


@njit(cache=True)
def _herg_rhs_sens(t, z, theta, ctx):
    v = (ctx[0] + ctx[1] * (t - ctx[2])) * 1e-3
    e1 = np.exp(theta[2] * v)
    e2 = np.exp(-theta[4] * v)
    e3 = np.exp(theta[6] * v)
    e4 = np.exp(-theta[8] * v)
    k1 = theta[1] * e1
    k2 = theta[3] * e2
    k3 = theta[5] * e3
    k4 = theta[7] * e4
    a = z[0]
    r = z[1]
    ja = -(k1 + k2)
    jr = -(k3 + k4)
    out = np.empty(20)
    out[0] = k1 * (1.0 - a) - k2 * a
    out[1] = k4 * (1.0 - r) - k3 * r
    pa = np.zeros(9)
    pa[1] = (1.0 - a) * e1
    pa[2] = (1.0 - a) * v * k1
    pa[3] = -a * e2
    pa[4] = a * v * k2
    pr = np.zeros(9)
    pr[5] = -r * e3
    pr[6] = -r * v * k3
    pr[7] = (1.0 - r) * e4
    pr[8] = -(1.0 - r) * v * k4
    for j in range(9):
        out[2 + j] = ja * z[2 + j] + pa[j]
        out[11 + j] = jr * z[11 + j] + pr[j]
    return out


def gating_steady_state(v_mv: float, theta) -> tuple:
    """(a_inf, r_inf, tau_a_s, tau_r_s) at a fixed voltage (mV)."""
    v = v_mv * 1e-3
    k1 = theta[1] * np.exp(theta[2] * v)
    k2 = theta[3] * np.exp(-theta[4] * v)
    k3 = theta[5] * np.exp(theta[6] * v)
    k4 = theta[7] * np.exp(-theta[8] * v)
    return k1 / (k1 + k2), k4 / (k3 + k4), 1.0 / (k1 + k2), 1.0 / (k3 + k4)


_PREPACE_SECONDS = 100.0
_PREPACE_MV = -80.0

#: transition-rate band (1/s) enforced across the protocol's voltage range;
#: keeps the kinetics physically plausible and the system non-stiff on the
#: seconds timescale.
RATE_MIN = 1e-7
RATE_MAX = 1e3


def herg_model(g_kr: float, p, protocol: VoltageProtocol,
               e_k_mv: float = -88.0, rate_min: float = RATE_MIN,
               rate_max: float = RATE_MAX) -> DynamicalModel:
    """Potassium-channel current I = g_Kr * a * r * (V - E_K).

    Two gates relax toward voltage-dependent steady states with rates
    k = p_i * exp(+/- p_j * V); voltages enter the rate expressions in
    volts and time runs in seconds.  The gates start from a(0)=0, r(0)=1
    relaxed for 100 s at -80 mV before the protocol begins.  ``e_k_mv`` is
    the potassium reversal potential, a fixed input (default -88 mV).
    Parameter vectors whose rates leave [rate_min, rate_max] 1/s anywhere
    over the protocol's voltage range are rejected.
    """
    p = np.asarray(p, dtype=float)
    if p.size != 8:
        raise ValueError(f"expected 8 kinetic parameters, got {p.size}")
    theta_ref = np.concatenate(([float(g_kr)], p))
    if np.any(~np.isfinite(theta_ref)) or np.any(theta_ref <= 0):
        raise ValueError("all channel parameters must be positive and finite")

    table = protocol.segment_table()
    cuts = tuple(t for t in protocol.times_s if t > 0.0)
    v_lo = min(float(np.min(protocol.voltages_mv)), _PREPACE_MV) * 1e-3
    v_hi = max(float(np.max(protocol.voltages_mv)), _PREPACE_MV) * 1e-3

    def theta_guard(theta):
        # each rate is monotone in V, so the extremes suffice
        for a_idx, b_idx, sign in ((1, 2, 1.0), (3, 4, -1.0), (5, 6, 1.0), (7, 8, -1.0)):
            for v in (v_lo, v_hi):
                k = theta[a_idx] * np.exp(sign * theta[b_idx] * v)
                if not (rate_min <= k <= rate_max):
                    return False
        return True

    def initial_state(theta):
        a_inf, r_inf, tau_a, tau_r = gating_steady_state(_PREPACE_MV, theta)
        a0 = a_inf + (0.0 - a_inf) * np.exp(-_PREPACE_SECONDS / tau_a)
        r0 = r_inf + (1.0 - r_inf) * np.exp(-_PREPACE_SECONDS / tau_r)
        return np.array([a0, r0])

    def observe(times, states, theta):
        v_mv = protocol.voltage_mv(times)
        return theta[0] * states[:, 0] * states[:, 1] * (v_mv - e_k_mv)

    def observe_jac(times, states, theta):
        v_mv = protocol.voltage_mv(times)
        drive = v_mv - e_k_mv
        dg_dx = np.column_stack([theta[0] * states[:, 1] * drive,
                                 theta[0] * states[:, 0] * drive])
        dg_dth = np.zeros((times.size, 9))
        dg_dth[:, 0] = states[:, 0] * states[:, 1] * drive
        return dg_dx, dg_dth

    return DynamicalModel(
        name="herg",
        state_dim=2,
        param_names=("g_kr", "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8"),
        rhs=_herg_rhs,
        initial_state=initial_state,
        observe_path=observe,
        lower=np.zeros(9),
        upper=np.full(9, np.inf),
        theta_ref=theta_ref,
        ctx=np.ascontiguousarray(table),
        time_breakpoints=cuts,
        rhs_sens=_herg_rhs_sens,
        observe_jac=observe_jac,
        theta_guard=theta_guard,
    )
