"""Residual diagnosis pipeline: fit-with-IID residuals -> sample ACF ->
AIC over an ARMA(p, q) grid -> noise-model recommendation.

Autocorrelated residuals can come from the measurement process or from a
misspecified dynamical model; the recommendation carries that caveat
rather than deciding for the analyst.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtri

from .likelihood import (arma_kalman_loglik_fast, arma_statespace,
                         kalman_innovations)
from .noise import NoiseModel, sample_acf
from .odes import DynamicalModel, integrate
from .series import TimeSeries

__all__ = [
    "ResidualSeries",
    "AcfReport",
    "AicRow",
    "AicTable",
    "Recommendation",
    "compute_residuals",
    "acf_diagnostic",
    "arma_grid_search",
    "recommend",
    "innovation_residuals",
    "pacf_to_ar",
]

MISSPECIFICATION_CAVEAT = (
    "Residual autocorrelation can reflect either a persistent measurement "
    "process or a misspecified dynamical model. If the mechanistic model is "
    "suspect, revise it; only refit with an autocorrelated noise model when "
    "the measurement process is the plausible cause."
)


@dataclass(frozen=True, eq=False)
class ResidualSeries:
    """Residuals x(t) - f(t; theta_hat) on the data grid."""

    residuals: TimeSeries
    source_fit: object = None

    @property
    def values(self) -> np.ndarray:
        return self.residuals.values


def compute_residuals(data: TimeSeries, fit, model: DynamicalModel) -> ResidualSeries:
    """Residuals at the fit's point estimate."""
    theta = np.array([fit.point[name] for name in model.param_names])
    trajectory = integrate(model, theta, data)
    return ResidualSeries(
        residuals=data.with_values(data.values - trajectory.values),
        source_fit=fit,
    )


# ---------------------------------------------------------------------------
# ACF diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AcfReport:
    lags: np.ndarray
    acf: np.ndarray
    band: float                  # +/- white-noise band at the chosen confidence
    confidence: float
    substantial_autocorrelation: bool
    frac_outside_checked: float
    n_checked: int

    def outside(self) -> np.ndarray:
        return np.abs(self.acf) > self.band

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("lag,acf,band_lo,band_hi\n")
            for lag, val in zip(self.lags, self.acf):
                fh.write(f"{int(lag)},{float(val)!r},{-self.band!r},{self.band!r}\n")

    def to_json(self, path=None) -> str:
        payload = {
            "band": self.band,
            "confidence": self.confidence,
            "substantial_autocorrelation": self.substantial_autocorrelation,
            "frac_outside_checked": self.frac_outside_checked,
            "lags": self.lags.tolist(),
            "acf": self.acf.tolist(),
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


#: fraction of the first checked lags that must breach the band before the
#: series is flagged; the checked window is the first 20 lags.
SUBSTANTIAL_FRACTION = 0.20
CHECKED_LAGS = 20


def acf_diagnostic(res, max_lag: int = 50, confidence_band: float = 0.95) -> AcfReport:
    """Sample ACF with a white-noise band of +/- z / sqrt(T).

    Flags substantial autocorrelation when at least 20% of the first 20
    lags (or of ``max_lag`` when smaller) fall outside the band.
    """
    series = res.residuals if isinstance(res, ResidualSeries) else res
    if not 0 < confidence_band < 1:
        raise ValueError("confidence_band must be in (0, 1)")
    acf = sample_acf(series, max_lag)
    n = len(series)
    z = float(ndtri(0.5 + confidence_band / 2.0))
    band = z / math.sqrt(n)
    n_checked = min(CHECKED_LAGS, max_lag)
    frac = float(np.mean(np.abs(acf[:n_checked]) > band))
    return AcfReport(
        lags=np.arange(1, max_lag + 1),
        acf=acf,
        band=band,
        confidence=confidence_band,
        substantial_autocorrelation=frac >= SUBSTANTIAL_FRACTION,
        frac_outside_checked=frac,
        n_checked=n_checked,
    )


# ---------------------------------------------------------------------------
# ARMA order selection by AIC
# ---------------------------------------------------------------------------

def pacf_to_ar(partials: np.ndarray) -> np.ndarray:
    """Durbin-Levinson map from partial autocorrelations in (-1, 1) to the
    coefficients of a stationary AR polynomial."""
    coeffs = np.empty(0)
    for r in partials:
        coeffs = np.concatenate([coeffs - r * coeffs[::-1], [r]])
    return coeffs


def _unpack_arma_params(z: np.ndarray, p: int, q: int):
    rho = pacf_to_ar(np.tanh(z[:p])) if p else np.empty(0)
    # invertible MA region is the stationary region of the sign-flipped poly
    phi = -pacf_to_ar(np.tanh(z[p:p + q])) if q else np.empty(0)
    sigma = math.exp(z[p + q])
    return rho, phi, sigma


@dataclass(frozen=True, eq=False)
class AicRow:
    p: int
    q: int
    loglik: float
    k: int
    aic: float
    converged: bool
    sigma: float
    rho: tuple
    phi: tuple

    def noise_model(self) -> NoiseModel:
        if self.p == 0 and self.q == 0:
            return NoiseModel.iid(self.sigma)
        if self.p == 1 and self.q == 0:
            return NoiseModel.ar1(self.sigma, self.rho[0])
        if self.p == 0 and self.q == 1:
            return NoiseModel.ma1(self.sigma, self.phi[0])
        return NoiseModel.arma(self.sigma, np.asarray(self.rho), np.asarray(self.phi))


@dataclass(frozen=True, eq=False)
class AicTable:
    rows: tuple
    best: tuple  # (p, q)

    def row(self, p: int, q: int) -> AicRow:
        for r in self.rows:
            if r.p == p and r.q == q:
                return r
        raise KeyError(f"no ({p}, {q}) cell in the table")

    def best_row(self) -> AicRow:
        return self.row(*self.best)

    def min_aic(self) -> float:
        return min(r.aic for r in self.rows if r.converged)

    def to_csv(self, path) -> None:
        base = self.min_aic()
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("p,q,loglik,k,aic,aic_delta,aic_pct_diff,converged\n")
            for r in self.rows:
                delta = r.aic - base
                pct = 100.0 * delta / abs(base) if base != 0 else float("nan")
                fh.write(f"{r.p},{r.q},{r.loglik!r},{r.k},{r.aic!r},{delta!r},"
                         f"{pct!r},{int(r.converged)}\n")

    def to_json(self, path=None) -> str:
        base = self.min_aic()
        payload = {
            "best": {"p": self.best[0], "q": self.best[1]},
            "rows": [
                {"p": r.p, "q": r.q, "loglik": r.loglik, "k": r.k, "aic": r.aic,
                 "aic_delta": r.aic - base, "converged": r.converged,
                 "sigma": r.sigma, "rho": list(r.rho), "phi": list(r.phi)}
                for r in self.rows
            ],
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def _fit_arma_cell(values: np.ndarray, p: int, q: int) -> AicRow:
    """Maximum-likelihood zero-mean ARMA(p, q) fit via the exact Kalman
    likelihood over a stationarity/invertibility-preserving
    reparametrisation (tanh partial autocorrelations, log sigma)."""
    values = np.ascontiguousarray(values, dtype=float)
    n_free = p + q + 1
    sd = float(np.std(values))
    sd = sd if sd > 0 else 1e-6

    def objective(z):
        rho, phi, sigma = _unpack_arma_params(z, p, q)
        val = arma_kalman_loglik_fast(values, rho, phi, sigma)
        return -val if np.isfinite(val) else 1e300

    z0 = np.zeros(n_free)
    z0[-1] = math.log(sd)
    starts = [z0]
    if p or q:
        z1 = z0.copy()
        z1[:p + q] = 0.35
        starts.append(z1)
    best = None
    converged = False
    for start in starts:
        res = minimize(objective, start, method="Nelder-Mead",
                       options={"maxiter": 2000 * n_free, "xatol": 1e-7, "fatol": 1e-9})
        if best is None or res.fun < best.fun:
            best = res
            converged = bool(res.success) and np.isfinite(res.fun) and res.fun < 1e299
    rho, phi, sigma = _unpack_arma_params(best.x, p, q)
    loglik = -float(best.fun)
    k = n_free
    return AicRow(p=p, q=q, loglik=loglik, k=k, aic=2.0 * k - 2.0 * loglik,
                  converged=converged, sigma=float(sigma),
                  rho=tuple(float(v) for v in rho), phi=tuple(float(v) for v in phi))


def arma_grid_search(res, p_max: int = 2, q_max: int = 2) -> AicTable:
    """Fit zero-mean ARMA(p, q) models to residuals for every order up to
    (p_max, q_max) and rank them by AIC.

    Every cell uses the same full-sample Kalman likelihood, so AIC values
    are comparable across orders (conditional likelihoods would drop a
    different number of points per order).
    """
    series = res.residuals if isinstance(res, ResidualSeries) else res
    values = np.asarray(series.values, dtype=float)
    min_len = 10 * max(1, p_max + q_max)
    if values.size < min_len:
        raise ValueError(f"need at least {min_len} residuals for a "
                         f"({p_max}, {q_max}) grid search, got {values.size}")
    rows = []
    for p in range(p_max + 1):
        for q in range(q_max + 1):
            rows.append(_fit_arma_cell(values, p, q))
    converged = [r for r in rows if r.converged]
    if not converged:
        raise RuntimeError("no ARMA cell converged; residuals may be degenerate")
    best = min(converged, key=lambda r: r.aic)
    return AicTable(rows=tuple(rows), best=(best.p, best.q))


# ---------------------------------------------------------------------------
# recommendation
# ---------------------------------------------------------------------------

#: a noise model this rich risks leaving the system practically unidentified
COMPLEXITY_FLAG_ORDER = 4


@dataclass(frozen=True, eq=False)
class Recommendation:
    noise: NoiseModel
    p: int
    q: int
    aic: float
    aic_delta_to_best: float
    identifiability_risk: bool
    note: str


def recommend(table: AicTable, parsimony_threshold: float = 2.0) -> Recommendation:
    """Smallest (p + q) model whose AIC is within ``parsimony_threshold``
    of the grid minimum; complex winners are flagged as an
    identifiability risk rather than silently endorsed."""
    converged = [r for r in table.rows if r.converged]
    if not converged:
        raise ValueError("AIC table has no converged rows")
    best_aic = min(r.aic for r in converged)
    candidates = [r for r in converged if r.aic <= best_aic + parsimony_threshold]
    chosen = min(candidates, key=lambda r: (r.p + r.q, r.aic))
    return Recommendation(
        noise=chosen.noise_model(),
        p=chosen.p,
        q=chosen.q,
        aic=chosen.aic,
        aic_delta_to_best=chosen.aic - best_aic,
        identifiability_risk=(chosen.p + chosen.q) >= COMPLEXITY_FLAG_ORDER,
        note=MISSPECIFICATION_CAVEAT,
    )


def innovation_residuals(res, noise: NoiseModel) -> TimeSeries:
    """Standardised one-step Kalman prediction errors of residuals under a
    fitted noise model; white with unit variance when the model fits."""
    series = res.residuals if isinstance(res, ResidualSeries) else res
    values = np.asarray(series.values, dtype=float)
    inn = kalman_innovations(values, np.zeros_like(values), arma_statespace(noise))
    return TimeSeries(series.t0, series.dt, inn)
