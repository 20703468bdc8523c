"""Stationary error processes: IID Gaussian, AR(1), MA(1) and general ARMA(p,q).

Covers simulation of sample paths, theoretical autocovariances / ACFs and the
sample ACF estimator used for residual diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .series import TimeSeries

__all__ = [
    "NoiseModel",
    "LagPolynomials",
    "simulate_noise",
    "process_variance",
    "autocovariances",
    "theoretical_acf",
    "sample_acf",
]

KINDS = ("iid", "ar1", "ma1", "arma")

#: default number of leading samples discarded so simulations start from the
#: stationary distribution; geometric decay leaves a transient < 1e-40 for
#: |rho| <= 0.975.
DEFAULT_BURN_IN = 1000

_PSI_TRUNCATION_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Tagged description of an error process.

    ``sigma`` is the standard deviation of the IID Gaussian innovations;
    ``rho`` holds the AR coefficients and ``phi`` the MA coefficients.
    The kind tag must agree with the coefficient vector lengths.
    """

    kind: str
    sigma: float
    rho: np.ndarray = field(default_factory=lambda: np.empty(0))
    phi: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError(f"sigma must be a positive real, got {self.sigma}")
        rho = np.asarray(self.rho, dtype=float).reshape(-1)
        phi = np.asarray(self.phi, dtype=float).reshape(-1)
        expected = {
            "iid": (0, 0),
            "ar1": (1, 0),
            "ma1": (0, 1),
        }
        if self.kind in expected and (rho.size, phi.size) != expected[self.kind]:
            raise ValueError(
                f"kind {self.kind!r} requires (p, q) = {expected[self.kind]}, "
                f"got ({rho.size}, {phi.size})"
            )
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi", phi)

    # -- constructors ---------------------------------------------------
    @classmethod
    def iid(cls, sigma: float) -> "NoiseModel":
        return cls("iid", sigma)

    @classmethod
    def ar1(cls, sigma: float, rho: float) -> "NoiseModel":
        return cls("ar1", sigma, rho=np.array([float(rho)]))

    @classmethod
    def ma1(cls, sigma: float, phi: float) -> "NoiseModel":
        return cls("ma1", sigma, phi=np.array([float(phi)]))

    @classmethod
    def arma(cls, sigma: float, rho, phi) -> "NoiseModel":
        return cls(
            "arma",
            sigma,
            rho=np.atleast_1d(np.asarray(rho, dtype=float)),
            phi=np.atleast_1d(np.asarray(phi, dtype=float)),
        )

    # -- structure ------------------------------------------------------
    @property
    def p(self) -> int:
        return self.rho.size

    @property
    def q(self) -> int:
        return self.phi.size

    def lag_polynomials(self) -> "LagPolynomials":
        return LagPolynomials(
            psi=np.concatenate(([1.0], -self.rho)),
            phi_poly=np.concatenate(([1.0], self.phi)),
        )

    def is_stationary(self, margin: float = 0.0) -> bool:
        """All roots of the AR lag polynomial lie outside the unit circle."""
        return _roots_outside_unit_circle(np.concatenate(([1.0], -self.rho)), margin)

    def is_invertible(self, margin: float = 0.0) -> bool:
        """All roots of the MA lag polynomial lie outside the unit circle."""
        return _roots_outside_unit_circle(np.concatenate(([1.0], self.phi)), margin)

    def require_stationary(self) -> None:
        if not self.is_stationary():
            raise ValueError(
                f"non-stationary AR coefficients {self.rho}: the AR lag polynomial "
                "has a root on or inside the unit circle, so the process has no "
                "finite stationary variance"
            )

    def describe(self) -> str:
        if self.kind == "iid":
            return f"iid(sigma={self.sigma:g})"
        if self.kind == "ar1":
            return f"ar1(sigma={self.sigma:g}, rho={self.rho[0]:g})"
        if self.kind == "ma1":
            return f"ma1(sigma={self.sigma:g}, phi={self.phi[0]:g})"
        return (
            f"arma(sigma={self.sigma:g}, rho={np.array2string(self.rho, precision=6)}, "
            f"phi={np.array2string(self.phi, precision=6)})"
        )


@dataclass(frozen=True)
class LagPolynomials:
    """Coefficients of the AR polynomial 1 - rho_1 L - ... - rho_p L^p and
    the MA polynomial 1 + phi_1 L + ... + phi_q L^q, constant term first."""

    psi: np.ndarray
    phi_poly: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        phi_poly = np.asarray(self.phi_poly, dtype=float)
        if psi.size < 1 or psi[0] != 1.0:
            raise ValueError("AR lag polynomial must have constant term 1")
        if phi_poly.size < 1 or phi_poly[0] != 1.0:
            raise ValueError("MA lag polynomial must have constant term 1")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "phi_poly", phi_poly)

    def at_one(self) -> tuple[float, float]:
        """(Psi_p(1), Phi_q(1)) -- the polynomials evaluated at L = 1."""
        return float(np.sum(self.psi)), float(np.sum(self.phi_poly))


def _roots_outside_unit_circle(poly_low_first: np.ndarray, margin: float = 0.0) -> bool:
    coeffs = np.asarray(poly_low_first[::-1], dtype=float)
    scale = np.max(np.abs(coeffs))
    if scale == 0.0 or not np.isfinite(scale):
        return False
    # vanishing leading coefficients only add roots far outside the unit
    # circle; trimming them keeps the companion-matrix eigensolve finite
    keep = np.abs(coeffs) / scale > 1e-250
    first = int(np.argmax(keep))
    coeffs = coeffs[first:]
    if coeffs.size <= 1:
        return True
    roots = np.roots(coeffs / scale)
    return bool(np.all(np.abs(roots) > 1.0 + margin))


def ma_infinity_weights(model: NoiseModel, rtol: float = _PSI_TRUNCATION_RTOL,
                        extra_terms: int = 0, max_terms: int = 100_000) -> np.ndarray:
    """Weights of the MA(infinity) expansion eps(t) = sum_j w_j nu(t-j).

    w_0 = 1 and w_j = phi_j + sum_i rho_i w_{j-i}.  The expansion is
    truncated once the tail is below ``rtol`` relative to the running sum
    of squares (and past the explicit MA lags); ``extra_terms`` continues
    the recursion beyond that point, which autocovariances at lag k need
    (gamma_k pairs weights k indices apart).
    """
    model.require_stationary()
    rho, phi = model.rho, model.phi
    p, q = rho.size, phi.size
    weights = [1.0]
    total_sq = 1.0
    j = 1
    remaining_extra = None
    while j < max_terms:
        w = phi[j - 1] if j <= q else 0.0
        for i in range(1, min(j, p) + 1):
            w += rho[i - 1] * weights[j - i]
        weights.append(w)
        total_sq += w * w
        if remaining_extra is None:
            if j > q and w * w <= rtol * total_sq:
                remaining_extra = extra_terms
        else:
            remaining_extra -= 1
        if remaining_extra is not None and remaining_extra <= 0:
            break
        j += 1
    return np.asarray(weights)


def process_variance(model: NoiseModel) -> float:
    """Stationary variance gamma_0 = var(eps(t)).

    AR(1) and MA(1) use their closed forms; the general case sums the
    squared MA(infinity) weights.
    """
    model.require_stationary()
    s2 = model.sigma**2
    if model.kind == "iid":
        return s2
    if model.kind == "ar1":
        rho = model.rho[0]
        return s2 / (1.0 - rho**2)
    if model.kind == "ma1":
        return s2 * (1.0 + model.phi[0] ** 2)
    w = ma_infinity_weights(model)
    return s2 * float(np.dot(w, w))


def autocovariances(model: NoiseModel, max_lag: int) -> np.ndarray:
    """gamma_0 .. gamma_max_lag of the stationary process."""
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    model.require_stationary()
    s2 = model.sigma**2
    if model.kind == "iid":
        out = np.zeros(max_lag + 1)
        out[0] = s2
        return out
    if model.kind == "ar1":
        rho = model.rho[0]
        return s2 / (1.0 - rho**2) * rho ** np.arange(max_lag + 1)
    w = ma_infinity_weights(model, extra_terms=max_lag)
    m = w.size - max_lag
    out = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        out[k] = s2 * float(np.dot(w[:m], w[k:k + m]))
    return out


def theoretical_acf(model: NoiseModel, max_lag: int) -> np.ndarray:
    """Autocorrelations at lags 1..max_lag.

    AR(1): rho**tau.  MA(1): phi / (1 + phi**2) at lag one, zero beyond.
    General ARMA: autocovariances from the MA(infinity) expansion,
    normalised by the process variance.
    """
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    model.require_stationary()
    lags = np.arange(1, max_lag + 1)
    if model.kind == "iid":
        return np.zeros(max_lag)
    if model.kind == "ar1":
        return model.rho[0] ** lags.astype(float)
    if model.kind == "ma1":
        phi = model.phi[0]
        out = np.zeros(max_lag)
        out[0] = phi / (1.0 + phi**2)
        return out
    gamma = autocovariances(model, max_lag)
    return gamma[1:] / gamma[0]


def simulate_noise(model: NoiseModel, n: int, seed: int,
                   burn_in: int = DEFAULT_BURN_IN) -> TimeSeries:
    """Draw n consecutive samples of eps(t) after discarding ``burn_in``.

    Innovations are standard-normal variates (ziggurat transform) from a
    seeded 64-bit PCG PRNG scaled by sigma, pushed through the ARMA lag
    recursion.  Identical (model, n, seed, burn_in) inputs give
    bit-identical paths.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    model.require_stationary()
    rng = np.random.Generator(np.random.PCG64(seed))
    innovations = model.sigma * rng.standard_normal(n + burn_in)
    poly = model.lag_polynomials()
    eps = lfilter(poly.phi_poly, poly.psi, innovations)
    return TimeSeries(t0=0.0, dt=1.0, values=eps[burn_in:])


def sample_acf(series: TimeSeries, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags 1..max_lag.

    Uses the biased (1/T denominator) estimator with mean removal, which
    keeps the implied autocovariance sequence positive semidefinite:

        Gamma_hat(tau) = sum_{t=tau+1}^{T} (x_t - xbar)(x_{t-tau} - xbar)
                         / sum_{t=1}^{T} (x_t - xbar)^2
    """
    x = series.values
    t_len = x.size
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if t_len <= max_lag:
        raise ValueError(f"series length {t_len} must exceed max_lag {max_lag}")
    centered = x - x.mean()
    denom = float(np.dot(centered, centered))
    if denom == 0.0:
        raise ValueError("constant series has zero variance; ACF undefined")
    out = np.empty(max_lag)
    for tau in range(1, max_lag + 1):
        out[tau - 1] = float(np.dot(centered[tau:], centered[:-tau])) / denom
    return out
