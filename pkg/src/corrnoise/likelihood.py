"""Log-likelihood engines for x(t) = f(t; theta) + eps(t).

Conditional ARMA likelihoods fix the first unobservable innovations at
zero and recurse; the Kalman filter evaluates the exact joint Gaussian
density through one-step prediction errors; a dense multivariate-normal
oracle provides an independent cross-check for tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from numba import njit
from scipy.signal import lfilter

from .noise import NoiseModel, autocovariances
from .odes import Trajectory
from .series import TimeSeries

__all__ = [
    "LogLikelihood",
    "ObservationModel",
    "StateSpaceForm",
    "loglik_iid",
    "loglik_ar1_conditional",
    "loglik_arma11_conditional",
    "kalman_loglik",
    "kalman_innovations",
    "exact_mvn_loglik",
    "arma_statespace",
    "loglik_auto",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class LogLikelihood:
    """A log-likelihood value with optional per-step decomposition.

    ``conditioned_steps`` counts leading observations used only to prime
    lag recursions (they contribute no term of their own).
    """

    value: float
    per_step: Optional[np.ndarray] = None
    conditioned_steps: int = 0

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """A dynamical model observed through an additive stationary error
    process: x(t) = f(t; theta) + eps(t)."""

    dynamics: object
    noise: NoiseModel

    def __post_init__(self):
        self.noise.require_stationary()


@dataclass(frozen=True, eq=False)
class StateSpaceForm:
    """Linear state-space form alpha(t) = T alpha(t-1) + R nu(t),
    x(t) = Z alpha(t) + f(t), with nu(t) ~ N(0, sigma^2)."""

    transition: np.ndarray
    innovation_loading: np.ndarray
    observation: np.ndarray
    sigma: float
    initial_mean: np.ndarray
    initial_cov: np.ndarray

    def __post_init__(self):
        t_mat = np.ascontiguousarray(self.transition, dtype=float)
        r_vec = np.ascontiguousarray(self.innovation_loading, dtype=float)
        z_vec = np.ascontiguousarray(self.observation, dtype=float)
        a1 = np.ascontiguousarray(self.initial_mean, dtype=float)
        p1 = np.ascontiguousarray(self.initial_cov, dtype=float)
        k = t_mat.shape[0]
        if t_mat.shape != (k, k):
            raise ValueError("transition matrix must be square")
        for name, arr, shape in (("innovation_loading", r_vec, (k,)),
                                 ("observation", z_vec, (k,)),
                                 ("initial_mean", a1, (k,))):
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
        if p1.shape != (k, k):
            raise ValueError("initial_cov must be square, matching the state dimension")
        if not np.allclose(p1, p1.T, atol=1e-10):
            raise ValueError("initial_cov must be symmetric")
        scale = max(1.0, float(np.max(np.abs(p1))))
        if np.min(scipy.linalg.eigvalsh(p1)) < -1e-10 * scale:
            raise ValueError("initial_cov must be positive semidefinite")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "transition", t_mat)
        object.__setattr__(self, "innovation_loading", r_vec)
        object.__setattr__(self, "observation", z_vec)
        object.__setattr__(self, "initial_mean", a1)
        object.__setattr__(self, "initial_cov", p1)

    @property
    def dim(self) -> int:
        return self.transition.shape[0]


def arma_statespace(noise: NoiseModel, init: str = "stationary",
                    diffuse_scale: float = 1e7) -> StateSpaceForm:
    """Harvey-form state space for a zero-mean ARMA(p, q) error process.

    State dimension k = max(p, q + 1); the first state component carries
    eps(t).  ``stationary`` initialisation solves P = T P T' + sigma^2 R R'
    so the filter likelihood is exact; ``diffuse`` uses a large isotropic
    prior instead.
    """
    p, q = noise.p, noise.q
    k = max(p, q + 1, 1)
    t_mat = np.zeros((k, k))
    t_mat[:p, 0] = noise.rho
    for i in range(k - 1):
        t_mat[i, i + 1] = 1.0
    r_vec = np.zeros(k)
    r_vec[0] = 1.0
    r_vec[1:q + 1] = noise.phi
    z_vec = np.zeros(k)
    z_vec[0] = 1.0
    a1 = np.zeros(k)
    if init == "stationary":
        noise.require_stationary()
        q_mat = noise.sigma**2 * np.outer(r_vec, r_vec)
        p1 = scipy.linalg.solve_discrete_lyapunov(t_mat, q_mat)
        p1 = 0.5 * (p1 + p1.T)
    elif init == "diffuse":
        p1 = diffuse_scale * np.eye(k)
    else:
        raise ValueError(f"unknown initialisation {init!r}")
    return StateSpaceForm(t_mat, r_vec, z_vec, noise.sigma, a1, p1)


# ---------------------------------------------------------------------------
# residual extraction
# ---------------------------------------------------------------------------

def _paired_values(obs, f) -> tuple[np.ndarray, np.ndarray]:
    """Extract aligned observation / trajectory arrays, checking grids when
    both sides carry one."""
    obs_grid = obs if isinstance(obs, TimeSeries) else None
    f_grid = f.grid if isinstance(f, Trajectory) else (f if isinstance(f, TimeSeries) else None)
    x = obs.values if obs_grid is not None else np.asarray(obs, dtype=float)
    fv = f_grid.values if f_grid is not None else np.asarray(f, dtype=float)
    if obs_grid is not None and f_grid is not None and not obs_grid.same_grid(f_grid):
        raise ValueError("observation and trajectory grids do not match")
    if x.shape != fv.shape:
        raise ValueError(f"length mismatch: {x.shape} observations vs {fv.shape} trajectory")
    return x, fv


# ---------------------------------------------------------------------------
# likelihoods
# ---------------------------------------------------------------------------

def loglik_iid(obs, f, sigma: float) -> LogLikelihood:
    """Independent Gaussian errors: sum_t log N(x_t | f_t, sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x, fv = _paired_values(obs, f)
    resid = x - fv
    per = -0.5 * (_LOG_2PI + np.log(sigma**2) + (resid / sigma) ** 2)
    return LogLikelihood(float(np.sum(per)), per_step=per, conditioned_steps=0)


def loglik_ar1_conditional(obs, f, sigma: float, rho: float) -> LogLikelihood:
    """AR(1) conditional likelihood with the t=0 observation as a fixed lag.

    nu_t = (x_t - rho x_{t-1}) - (f_t - rho f_{t-1}) for t = 1..T, so with
    rho = 0 this reduces exactly to the IID likelihood on t = 1..T.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be < 1 for stationarity, got {rho}")
    x, fv = _paired_values(obs, f)
    if x.size < 2:
        raise ValueError("AR(1) conditional likelihood needs at least 2 observations")
    nu = (x[1:] - rho * x[:-1]) - (fv[1:] - rho * fv[:-1])
    per = -0.5 * (_LOG_2PI + np.log(sigma**2) + (nu / sigma) ** 2)
    return LogLikelihood(float(np.sum(per)), per_step=per, conditioned_steps=1)


def loglik_arma11_conditional(obs, f, sigma: float, rho: float, phi: float) -> LogLikelihood:
    """ARMA(1,1) conditional likelihood with nu(1) = nu(2) = 0.

    eps(t) = x(t) - f(t); nu(t) = eps(t) - rho eps(t-1) - phi nu(t-1) for
    t >= 3, and the first two observations are conditioned away.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not abs(rho) < 1:
        raise ValueError(f"|rho| must be < 1 for stationarity, got {rho}")
    if not abs(phi) < 1:
        raise ValueError(f"|phi| must be < 1 for invertibility, got {phi}")
    x, fv = _paired_values(obs, f)
    if x.size < 3:
        raise ValueError("ARMA(1,1) conditional likelihood needs at least 3 observations")
    eps = x - fv
    w = eps[2:] - rho * eps[1:-1]
    # nu_t = w_t - phi nu_{t-1} with nu(2) = 0 is an IIR filter in t.
    nu = lfilter([1.0], [1.0, phi], w)
    per = -0.5 * (_LOG_2PI + np.log(sigma**2) + (nu / sigma) ** 2)
    return LogLikelihood(float(np.sum(per)), per_step=per, conditioned_steps=2)


@njit(cache=True)
def _kalman_core(resid, t_mat, r_vec, z_vec, sigma2, a1, p1):
    n = resid.shape[0]
    k = a1.shape[0]
    a = a1.copy()
    p = p1.copy()
    per = np.empty(n)
    inn = np.empty(n)
    log2pi = np.log(2.0 * np.pi)
    pz = np.zeros(k)
    a_new = np.zeros(k)
    p_new = np.zeros((k, k))
    for t in range(n):
        za = 0.0
        for i in range(k):
            za += z_vec[i] * a[i]
        v = resid[t] - za
        f_var = 0.0
        for i in range(k):
            zi = z_vec[i]
            if zi != 0.0:
                for j in range(k):
                    if z_vec[j] != 0.0:
                        f_var += zi * p[i, j] * z_vec[j]
        if not np.isfinite(f_var) or f_var <= 0.0:
            return 0.0, per, inn, 1
        per[t] = -0.5 * (log2pi + np.log(f_var) + v * v / f_var)
        inn[t] = v / np.sqrt(f_var)
        for i in range(k):
            s = 0.0
            for j in range(k):
                s += p[i, j] * z_vec[j]
            pz[i] = s
        for i in range(k):
            a[i] += pz[i] * v / f_var
        for i in range(k):
            for j in range(k):
                p[i, j] -= pz[i] * pz[j] / f_var
        for i in range(k):
            s = 0.0
            for j in range(k):
                s += t_mat[i, j] * a[j]
            a_new[i] = s
        for i in range(k):
            for j in range(k):
                s = 0.0
                for l in range(k):
                    tl = t_mat[i, l]
                    if tl != 0.0:
                        for m in range(k):
                            s += tl * p[l, m] * t_mat[j, m]
                p_new[i, j] = s + sigma2 * r_vec[i] * r_vec[j]
        for i in range(k):
            a[i] = a_new[i]
            for j in range(k):
                p[i, j] = p_new[i, j]
    total = 0.0
    for t in range(n):
        total += per[t]
    return total, per, inn, 0


def _run_kalman(obs, f, ssf: StateSpaceForm):
    x, fv = _paired_values(obs, f)
    resid = np.ascontiguousarray(x - fv)
    total, per, inn, status = _kalman_core(
        resid, ssf.transition, ssf.innovation_loading, ssf.observation,
        ssf.sigma**2, ssf.initial_mean, ssf.initial_cov)
    if status != 0:
        raise ValueError("Kalman filter hit a non-positive prediction variance "
                         "(numerically degenerate state-space form)")
    return total, per, inn


def kalman_loglik(obs, f, ssf: StateSpaceForm) -> LogLikelihood:
    """Exact Gaussian likelihood from the Kalman prediction-error
    decomposition; no observations are conditioned away."""
    total, per, _ = _run_kalman(obs, f, ssf)
    return LogLikelihood(float(total), per_step=per, conditioned_steps=0)


def arma_kalman_loglik_fast(resid: np.ndarray, rho: np.ndarray, phi: np.ndarray,
                            sigma: float) -> float:
    """Exact zero-mean ARMA likelihood without the validated state-space
    wrapper; the hot path for order-selection searches.

    Builds the Harvey form and the stationary initial covariance directly
    and returns -inf for non-stationary coefficients or degenerate
    variances instead of raising.
    """
    p, q = rho.size, phi.size
    k = max(p, q + 1, 1)
    t_mat = np.zeros((k, k))
    t_mat[:p, 0] = rho
    for i in range(k - 1):
        t_mat[i, i + 1] = 1.0
    r_vec = np.zeros(k)
    r_vec[0] = 1.0
    r_vec[1:q + 1] = phi
    z_vec = np.zeros(k)
    z_vec[0] = 1.0
    q_mat = sigma**2 * np.outer(r_vec, r_vec)
    # stationary covariance: vec(P) = (I - T (x) T)^-1 vec(Q)
    kk = k * k
    try:
        vec_p = np.linalg.solve(np.eye(kk) - np.kron(t_mat, t_mat), q_mat.ravel())
    except np.linalg.LinAlgError:
        return -np.inf
    p1 = vec_p.reshape(k, k)
    p1 = 0.5 * (p1 + p1.T)
    if not np.all(np.isfinite(p1)) or p1[0, 0] <= 0:
        return -np.inf
    total, _, _, status = _kalman_core(
        np.ascontiguousarray(resid, dtype=float), t_mat, r_vec, z_vec,
        sigma**2, np.zeros(k), np.ascontiguousarray(p1))
    if status != 0:
        return -np.inf
    return float(total)


def kalman_innovations(obs, f, ssf: StateSpaceForm) -> np.ndarray:
    """Standardised one-step prediction errors v(t) / sqrt(F(t)); white
    noise with unit variance when the model is correct."""
    _, _, inn = _run_kalman(obs, f, ssf)
    return inn


def exact_mvn_loglik(obs, f, noise: NoiseModel, max_len: int = 2000) -> LogLikelihood:
    """Dense multivariate-normal likelihood with Sigma_ij = gamma_|i-j|.

    O(T^3) Cholesky factorisation; a brute-force oracle for testing the
    recursive engines, limited to short series.
    """
    x, fv = _paired_values(obs, f)
    n = x.size
    if n > max_len:
        raise ValueError(f"series too long for the dense oracle ({n} > {max_len})")
    gamma = autocovariances(noise, n - 1)
    cov = scipy.linalg.toeplitz(gamma)
    resid = x - fv
    try:
        chol = scipy.linalg.cholesky(cov, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("autocovariance matrix is not positive definite "
                         "(non-stationary or degenerate noise model)") from exc
    white = scipy.linalg.solve_triangular(chol, resid, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    value = -0.5 * (n * _LOG_2PI + logdet + float(np.dot(white, white)))
    return LogLikelihood(value, per_step=None, conditioned_steps=0)


def loglik_auto(obs, f, noise: NoiseModel, engine: str = "auto") -> float:
    """Dispatch to the natural likelihood engine for a noise model.

    ``auto`` uses the conditional recursions for IID / AR(1) / MA(1) /
    ARMA(1,1) and the Kalman filter beyond; ``kalman`` forces the exact
    full-sample filter (needed when likelihoods are compared across noise
    models of different orders).
    """
    if engine == "kalman":
        return kalman_loglik(obs, f, arma_statespace(noise)).value
    if engine != "auto":
        raise ValueError(f"unknown engine {engine!r}")
    if noise.kind == "iid":
        return loglik_iid(obs, f, noise.sigma).value
    if noise.kind == "ar1":
        return loglik_ar1_conditional(obs, f, noise.sigma, noise.rho[0]).value
    if noise.kind == "ma1":
        return loglik_arma11_conditional(obs, f, noise.sigma, 0.0, noise.phi[0]).value
    if noise.p <= 1 and noise.q <= 1:
        rho = noise.rho[0] if noise.p else 0.0
        phi = noise.phi[0] if noise.q else 0.0
        return loglik_arma11_conditional(obs, f, noise.sigma, rho, phi).value
    return kalman_loglik(obs, f, arma_statespace(noise)).value
