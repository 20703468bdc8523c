"""Parameter estimation: priors, unconstrained transforms, restarted
Nelder-Mead MAP optimisation and adaptive-Metropolis posterior sampling.

Sampling runs on an unconstrained reparametrisation of the parameters
(log for half-lines, scaled atanh for intervals) with the log-Jacobian
folded into the target, and adapts a full proposal covariance toward the
23.4% random-walk acceptance target during warmup.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import betaln, gammaln, ndtr, ndtri
from scipy.stats import rankdata

from .likelihood import ObservationModel, loglik_auto
from .noise import NoiseModel
from .odes import IntegrationError, integrate
from .seeds import mix_seed

__all__ = [
    "Prior",
    "FitResult",
    "parameter_transforms",
    "ParameterTransforms",
    "optimize_map",
    "sample_posterior",
    "rhat",
    "free_parameter_names",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Prior:
    """A univariate prior with explicit support bounds.

    The density is normalised on (lo, hi); hard truncation bounds change
    the normalisation constant, not just the support.
    """

    kind: str
    params: tuple
    lo: float
    hi: float
    _log_norm: float = field(default=0.0, repr=False, compare=False)

    # -- constructors ---------------------------------------------------
    @classmethod
    def uniform(cls, lo: float, hi: float) -> "Prior":
        if not hi > lo:
            raise ValueError("uniform prior needs hi > lo")
        return cls("uniform", (float(lo), float(hi)), float(lo), float(hi),
                   math.log(hi - lo))

    @classmethod
    def normal(cls, mean: float, sd: float, lo: float = -np.inf,
               hi: float = np.inf) -> "Prior":
        if sd <= 0:
            raise ValueError("normal prior needs sd > 0")
        z = ndtr((hi - mean) / sd) - ndtr((lo - mean) / sd)
        if z <= 0:
            raise ValueError("empty truncation interval")
        return cls("normal", (float(mean), float(sd)), float(lo), float(hi),
                   math.log(z))

    @classmethod
    def truncated_normal(cls, mean: float, sd: float, lo: float = 0.0,
                         hi: float = np.inf) -> "Prior":
        prior = cls.normal(mean, sd, lo, hi)
        return cls("truncated_normal", prior.params, prior.lo, prior.hi,
                   prior._log_norm)

    @classmethod
    def log_normal(cls, mean_log: float, sd_log: float, lo: float = 0.0,
                   hi: float = np.inf) -> "Prior":
        if sd_log <= 0:
            raise ValueError("log-normal prior needs sd_log > 0")
        lo = max(lo, 0.0)
        zhi = ndtr((math.log(hi) - mean_log) / sd_log) if np.isfinite(hi) else 1.0
        zlo = ndtr((math.log(lo) - mean_log) / sd_log) if lo > 0 else 0.0
        z = zhi - zlo
        if z <= 0:
            raise ValueError("empty truncation interval")
        return cls("log_normal", (float(mean_log), float(sd_log)), lo, float(hi),
                   math.log(z))

    @classmethod
    def gamma(cls, shape: float, rate: float, lo: float = 0.0,
              hi: float = np.inf) -> "Prior":
        if shape <= 0 or rate <= 0:
            raise ValueError("gamma prior needs shape > 0 and rate > 0")
        if lo != 0.0 or np.isfinite(hi):
            from scipy.stats import gamma as _gamma_dist
            z = (_gamma_dist.cdf(hi, shape, scale=1.0 / rate)
                 - _gamma_dist.cdf(max(lo, 0.0), shape, scale=1.0 / rate))
            if z <= 0:
                raise ValueError("empty truncation interval")
            log_norm = math.log(z)
        else:
            log_norm = 0.0
        return cls("gamma", (float(shape), float(rate)), max(lo, 0.0), float(hi),
                   log_norm)

    @classmethod
    def beta(cls, a: float, b: float) -> "Prior":
        if a <= 0 or b <= 0:
            raise ValueError("beta prior needs positive shape parameters")
        return cls("beta", (float(a), float(b)), 0.0, 1.0, 0.0)

    # -- density ----------------------------------------------------------
    def logpdf(self, x: float) -> float:
        if not (self.lo < x < self.hi):
            return -np.inf
        if self.kind == "uniform":
            return -self._log_norm
        if self.kind in ("normal", "truncated_normal"):
            mean, sd = self.params
            z = (x - mean) / sd
            return -0.5 * (_LOG_2PI + z * z) - math.log(sd) - self._log_norm
        if self.kind == "log_normal":
            mean_log, sd_log = self.params
            lx = math.log(x)
            z = (lx - mean_log) / sd_log
            return (-0.5 * (_LOG_2PI + z * z) - math.log(sd_log) - lx
                    - self._log_norm)
        if self.kind == "gamma":
            shape, rate = self.params
            return (shape * math.log(rate) - gammaln(shape)
                    + (shape - 1.0) * math.log(x) - rate * x - self._log_norm)
        if self.kind == "beta":
            a, b = self.params
            return ((a - 1.0) * math.log(x) + (b - 1.0) * math.log(1.0 - x)
                    - betaln(a, b))
        raise ValueError(f"unknown prior kind {self.kind!r}")

    def sample(self, rng: np.random.Generator, max_tries: int = 1000) -> float:
        """Rejection-sample against the truncation bounds."""
        for _ in range(max_tries):
            if self.kind == "uniform":
                return float(rng.uniform(*self.params))
            if self.kind in ("normal", "truncated_normal"):
                x = float(rng.normal(*self.params))
            elif self.kind == "log_normal":
                x = float(np.exp(rng.normal(*self.params)))
            elif self.kind == "gamma":
                shape, rate = self.params
                x = float(rng.gamma(shape, 1.0 / rate))
            elif self.kind == "beta":
                return float(rng.beta(*self.params))
            else:
                raise ValueError(f"unknown prior kind {self.kind!r}")
            if self.lo < x < self.hi:
                return x
        raise RuntimeError(f"could not draw from {self.kind} prior within its bounds")


# ---------------------------------------------------------------------------
# unconstrained transforms
# ---------------------------------------------------------------------------

def _log1m_tanh_sq(z: float) -> float:
    # log(1 - tanh(z)^2) = 2 (log 2 - |z| - log1p(exp(-2|z|))), stable for large |z|
    az = abs(z)
    return 2.0 * (math.log(2.0) - az - math.log1p(math.exp(-2.0 * az)))


class _Transform1D:
    """Bijection between a prior's support and the whole real line."""

    def __init__(self, lo: float, hi: float, kind: Optional[str] = None):
        if kind is None:
            if np.isfinite(lo) and np.isfinite(hi):
                kind = "interval"
            elif np.isfinite(lo):
                kind = "log"
            elif np.isfinite(hi):
                kind = "log_upper"
            else:
                kind = "identity"
        self.kind = kind
        self.lo = lo
        self.hi = hi

    def forward(self, x: float) -> float:
        if self.kind == "identity":
            return x
        if self.kind == "log":
            return math.log(x - self.lo)
        if self.kind == "log_upper":
            return math.log(self.hi - x)
        u = 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0
        return math.atanh(u)

    def inverse(self, z: float) -> float:
        if self.kind == "identity":
            return z
        if self.kind == "log":
            return self.lo + math.exp(z)
        if self.kind == "log_upper":
            return self.hi - math.exp(z)
        return self.lo + 0.5 * (self.hi - self.lo) * (math.tanh(z) + 1.0)

    def log_jacobian(self, z: float) -> float:
        if self.kind == "identity":
            return 0.0
        if self.kind in ("log", "log_upper"):
            return z
        return math.log(0.5 * (self.hi - self.lo)) + _log1m_tanh_sq(z)


class ParameterTransforms:
    """Per-parameter bijections onto unconstrained space, chosen from the
    prior supports: log for half-lines, scaled atanh for finite intervals,
    identity for the real line."""

    def __init__(self, names, transforms):
        self.names = list(names)
        self._t = list(transforms)

    def to_unconstrained(self, x: np.ndarray) -> np.ndarray:
        return np.array([t.forward(v) for t, v in zip(self._t, x)])

    def to_constrained(self, z: np.ndarray) -> np.ndarray:
        return np.array([t.inverse(v) for t, v in zip(self._t, z)])

    def log_jacobian(self, z: np.ndarray) -> float:
        return float(sum(t.log_jacobian(v) for t, v in zip(self._t, z)))


def parameter_transforms(priors: dict, overrides: Optional[dict] = None) -> ParameterTransforms:
    """Build transforms for an ordered {name: Prior} mapping.

    ``overrides`` may force a specific transform kind per parameter
    (``identity``, ``log``, ``interval``); sampling results must agree
    across such choices up to Monte-Carlo error.
    """
    overrides = overrides or {}
    transforms = [
        _Transform1D(prior.lo, prior.hi, overrides.get(name))
        for name, prior in priors.items()
    ]
    return ParameterTransforms(priors.keys(), transforms)


# ---------------------------------------------------------------------------
# observation-model target
# ---------------------------------------------------------------------------

def free_parameter_names(obs_model: ObservationModel, fixed: Optional[dict] = None) -> list:
    """Dynamics parameters, then sigma, then noise coefficients, minus any
    fixed ones.  Noise coefficients are named rho / phi (with _1.. suffixes
    beyond order one)."""
    fixed = fixed or {}
    names = [n for n in obs_model.dynamics.param_names if n not in fixed]
    if "sigma" not in fixed:
        names.append("sigma")
    for coef_names in (_rho_names(obs_model.noise), _phi_names(obs_model.noise)):
        names.extend(n for n in coef_names if n not in fixed)
    return names


def _rho_names(noise: NoiseModel) -> list:
    if noise.p == 0:
        return []
    return ["rho"] if noise.p == 1 else [f"rho_{i+1}" for i in range(noise.p)]


def _phi_names(noise: NoiseModel) -> list:
    if noise.q == 0:
        return []
    return ["phi"] if noise.q == 1 else [f"phi_{i+1}" for i in range(noise.q)]


class _Target:
    """Log-posterior over the free parameters of an observation model."""

    def __init__(self, obs_model: ObservationModel, data, priors: dict,
                 fixed: Optional[dict] = None, engine: str = "auto"):
        self.obs_model = obs_model
        self.data = data
        self.engine = engine
        self.fixed = dict(fixed or {})
        self.names = free_parameter_names(obs_model, self.fixed)
        missing = [n for n in self.names if n not in priors]
        if missing:
            raise ValueError(f"no prior supplied for free parameters: {missing}")
        self.priors = {n: priors[n] for n in self.names}  # canonical order
        self._dyn_names = list(obs_model.dynamics.param_names)
        self._rho_names = _rho_names(obs_model.noise)
        self._phi_names = _phi_names(obs_model.noise)
        self.n_failed_integrations = 0

    def split(self, values: dict):
        theta = np.array([values[n] for n in self._dyn_names])
        sigma = float(values["sigma"])
        rho = np.array([values[n] for n in self._rho_names])
        phi = np.array([values[n] for n in self._phi_names])
        return theta, sigma, rho, phi

    def values_dict(self, x: np.ndarray) -> dict:
        values = dict(self.fixed)
        values.update(zip(self.names, x))
        return values

    def log_prior(self, x: np.ndarray) -> float:
        total = 0.0
        for name, val in zip(self.names, x):
            lp = self.priors[name].logpdf(val)
            if not np.isfinite(lp):
                return -np.inf
            total += lp
        return total

    def log_likelihood(self, x: np.ndarray) -> float:
        values = self.values_dict(x)
        theta, sigma, rho, phi = self.split(values)
        base = self.obs_model.noise
        try:
            noise = NoiseModel(base.kind, sigma, rho=rho, phi=phi)
            trajectory = integrate(self.obs_model.dynamics, theta, self.data)
            return loglik_auto(self.data, trajectory, noise, engine=self.engine)
        except IntegrationError:
            self.n_failed_integrations += 1
            return -np.inf
        except ValueError:
            return -np.inf

    def log_posterior(self, x: np.ndarray) -> float:
        lp = self.log_prior(x)
        if not np.isfinite(lp):
            return -np.inf
        ll = self.log_likelihood(x)
        if not np.isfinite(ll):
            return -np.inf
        return lp + ll


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FitResult:
    """Point estimates plus, for MCMC fits, retained chains and summaries."""

    param_names: tuple
    point: dict
    seed: int
    model_description: str
    noise_kind: str
    map_value: Optional[float] = None
    chains: Optional[np.ndarray] = None         # (chain, iteration, parameter)
    log_posterior: Optional[np.ndarray] = None  # (chain, iteration)
    posterior_summaries: Optional[dict] = None
    rhat: Optional[dict] = None
    accept_rate: Optional[float] = None
    warmup: int = 0

    def __post_init__(self):
        if self.posterior_summaries is not None:
            for name, s in self.posterior_summaries.items():
                if not (s["q2.5"] <= s["median"] <= s["q97.5"]):
                    raise ValueError(f"quantile ordering violated for {name}")

    def draws(self, name: str) -> np.ndarray:
        if self.chains is None:
            raise ValueError("no chains stored in this fit")
        return self.chains[:, :, self.param_names.index(name)].reshape(-1)

    def to_json(self, path=None) -> str:
        payload = {
            "model": self.model_description,
            "noise": self.noise_kind,
            "seed": self.seed,
            "point": self.point,
            "map_value": self.map_value,
            "posterior_summaries": self.posterior_summaries,
            "rhat": self.rhat,
            "accept_rate": self.accept_rate,
        }
        text = json.dumps(payload, indent=2, default=float)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    def draws_to_csv(self, path) -> None:
        """One row per retained draw: chain, iteration, parameters, log-posterior."""
        if self.chains is None:
            raise ValueError("no chains stored in this fit")
        n_chains, n_iter, _ = self.chains.shape
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("chain,iteration," + ",".join(self.param_names) + ",log_posterior\n")
            for c in range(n_chains):
                for i in range(n_iter):
                    row = ",".join(repr(float(v)) for v in self.chains[c, i])
                    lp = float(self.log_posterior[c, i]) \
                        if self.log_posterior is not None else float("nan")
                    fh.write(f"{c},{i},{row},{lp!r}\n")


# ---------------------------------------------------------------------------
# MAP optimisation
# ---------------------------------------------------------------------------

def optimize_map(obs_model: ObservationModel, data, priors: dict, seed: int = 0,
                 restarts: int = 10, fixed: Optional[dict] = None,
                 engine: str = "auto", include_prior: bool = True,
                 transform_overrides: Optional[dict] = None,
                 max_iter: int = 4000) -> FitResult:
    """Restarted Nelder-Mead on the unconstrained transform of the target.

    Starts are drawn from the priors; the best of ``restarts`` runs wins,
    after a polishing restart from its optimum.  ``include_prior=False``
    targets the likelihood alone (maximum likelihood).  Deterministic for
    fixed inputs and seed.
    """
    target = _Target(obs_model, data, priors, fixed, engine)
    transforms = parameter_transforms(target.priors, transform_overrides)

    def objective(z):
        x = transforms.to_constrained(z)
        if include_prior:
            val = target.log_posterior(x)
        elif target.log_prior(x) == -np.inf:  # priors still bound the search space
            val = -np.inf
        else:
            val = target.log_likelihood(x)
        if not np.isfinite(val):
            return 1e300
        return -float(val)

    rng = np.random.Generator(np.random.PCG64(mix_seed(seed, 0xA11)))
    best_z, best_val = None, np.inf
    n_finite = 0
    for _ in range(max(1, restarts)):
        x0 = np.array([target.priors[n].sample(rng) for n in target.names])
        z0 = transforms.to_unconstrained(x0)
        if not np.isfinite(objective(z0)) or objective(z0) >= 1e300:
            continue
        res = minimize(objective, z0, method="Nelder-Mead",
                       options={"maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-10})
        n_finite += 1
        if res.fun < best_val:
            best_val, best_z = res.fun, res.x
    if best_z is None:
        raise RuntimeError(
            f"all {restarts} restarts failed to reach a finite objective; "
            f"{target.n_failed_integrations} integration failures observed")
    res = minimize(objective, best_z, method="Nelder-Mead",
                   options={"maxiter": max_iter, "xatol": 1e-9, "fatol": 1e-11})
    if res.fun < best_val:
        best_val, best_z = res.fun, res.x
    x_best = transforms.to_constrained(best_z)
    point = dict(zip(target.names, (float(v) for v in x_best)))
    return FitResult(
        param_names=tuple(target.names),
        point=point,
        seed=seed,
        model_description=obs_model.dynamics.name,
        noise_kind=obs_model.noise.kind,
        map_value=-best_val,
    )


# ---------------------------------------------------------------------------
# adaptive Metropolis sampling
# ---------------------------------------------------------------------------

_TARGET_ACCEPT = 0.234


def _run_chain(log_post_z, z0, n_iter, warmup, rng, d):
    draws = np.empty((n_iter - warmup, d))
    logps = np.empty(n_iter - warmup)
    z = z0.copy()
    lp = log_post_z(z)
    mean = z.copy()
    cov = np.eye(d) * 1e-2
    log_scale = math.log(2.38**2 / d)
    chol = np.linalg.cholesky(np.exp(log_scale) * cov + 1e-12 * np.eye(d))
    accepted_post = 0
    kept = 0
    for t in range(n_iter):
        prop = z + chol @ rng.standard_normal(d)
        lp_prop = log_post_z(prop)
        log_alpha = lp_prop - lp
        accept = (log_alpha >= 0.0) or (rng.random() < math.exp(max(-745.0, log_alpha)))
        if accept:
            z = prop
            lp = lp_prop
        if t < warmup:
            # Haario covariance recursion plus Andrieu-Thoms scale tuning.
            gamma = (t + 10) ** -0.6
            delta = z - mean
            mean = mean + gamma * delta
            cov = cov + gamma * (np.outer(delta, delta) - cov)
            alpha = min(1.0, math.exp(min(0.0, log_alpha))) if np.isfinite(log_alpha) else 0.0
            log_scale += gamma * (alpha - _TARGET_ACCEPT)
            chol = np.linalg.cholesky(np.exp(log_scale) * cov + 1e-12 * np.eye(d))
        else:
            draws[kept] = z
            logps[kept] = lp
            kept += 1
            if accept:
                accepted_post += 1
    accept_rate = accepted_post / max(1, n_iter - warmup)
    return draws, logps, accept_rate


def sample_posterior(obs_model: ObservationModel, data, priors: dict,
                     chains: int = 4, iterations: int = 10_000,
                     warmup: Optional[int] = None, seed: int = 0,
                     fixed: Optional[dict] = None, engine: str = "auto",
                     init: Optional[dict] = None,
                     transform_overrides: Optional[dict] = None) -> FitResult:
    """Adaptive-Metropolis random-walk sampling on transformed parameters.

    ``warmup`` defaults to half the iterations and is discarded; proposal
    covariance and scale adapt only during warmup, so retained draws come
    from a fixed kernel.  Split-chain rank-normalised R-hat is reported per
    parameter.  Chains are seeded independently from ``seed`` and the chain
    index, so results are reproducible and chain-parallelisable.
    """
    if chains < 2:
        raise ValueError("need at least 2 chains to compute R-hat")
    if warmup is None:
        warmup = iterations // 2
    if not 0 <= warmup < iterations:
        raise ValueError("warmup must be smaller than iterations")
    target = _Target(obs_model, data, priors, fixed, engine)
    transforms = parameter_transforms(target.priors, transform_overrides)
    d = len(target.names)

    def log_post_z(z):
        x = transforms.to_constrained(z)
        lp = target.log_posterior(x)
        if not np.isfinite(lp):
            return -np.inf
        return lp + transforms.log_jacobian(z)

    all_draws = []
    all_logps = []
    rates = []
    for c in range(chains):
        rng = np.random.Generator(np.random.PCG64(mix_seed(seed, 0xC4A1, c)))
        z0 = None
        if init is not None:
            x0 = np.array([init[n] for n in target.names])
            x0 = x0 * (1.0 + 0.01 * rng.standard_normal(d))
            z0_try = transforms.to_unconstrained(x0)
            if np.isfinite(log_post_z(z0_try)):
                z0 = z0_try
        if z0 is None:
            for _ in range(100):
                x0 = np.array([target.priors[n].sample(rng) for n in target.names])
                z0_try = transforms.to_unconstrained(x0)
                if np.isfinite(log_post_z(z0_try)):
                    z0 = z0_try
                    break
        if z0 is None:
            raise RuntimeError(
                "no finite posterior found among 100 prior draws at initialisation")
        draws_z, logps, rate = _run_chain(log_post_z, z0, iterations, warmup, rng, d)
        draws_x = np.empty_like(draws_z)
        for i in range(draws_z.shape[0]):
            draws_x[i] = transforms.to_constrained(draws_z[i])
        all_draws.append(draws_x)
        all_logps.append(logps)
        rates.append(rate)

    chains_arr = np.stack(all_draws)            # (chains, kept, d)
    logps_arr = np.stack(all_logps)
    rhats = rhat(chains_arr)
    pooled = chains_arr.reshape(-1, d)
    summaries = {}
    for j, name in enumerate(target.names):
        col = pooled[:, j]
        q2, q50, q97 = np.percentile(col, [2.5, 50.0, 97.5])
        summaries[name] = {
            "median": float(q50), "q2.5": float(q2), "q97.5": float(q97),
            "mean": float(col.mean()), "sd": float(col.std(ddof=1)),
            "var": float(col.var(ddof=1)),
        }
    point = {name: summaries[name]["median"] for name in target.names}
    return FitResult(
        param_names=tuple(target.names),
        point=point,
        seed=seed,
        model_description=obs_model.dynamics.name,
        noise_kind=obs_model.noise.kind,
        chains=chains_arr,
        log_posterior=logps_arr,
        posterior_summaries=summaries,
        rhat=dict(zip(target.names, (float(r) for r in rhats))),
        accept_rate=float(np.mean(rates)),
        warmup=warmup,
    )


# ---------------------------------------------------------------------------
# convergence diagnostics
# ---------------------------------------------------------------------------

def _rhat_single(group: np.ndarray) -> float:
    n_chains, n = group.shape
    means = group.mean(axis=1)
    between = n * np.var(means, ddof=1)
    within = float(np.mean(np.var(group, axis=1, ddof=1)))
    if within == 0.0:
        return 1.0 if between == 0.0 else np.inf
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def rhat(chains: np.ndarray) -> np.ndarray:
    """Split-chain rank-normalised potential scale reduction factor.

    Chains are halved, pooled draws are rank-transformed to normal scores,
    and the classic between/within ratio is computed on the scores.
    Shape (chains, draws) or (chains, draws, params); returns one value per
    parameter.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    m, n, d = x.shape
    if m < 2:
        raise ValueError("R-hat needs at least 2 chains")
    if n < 4:
        raise ValueError("R-hat needs at least 4 draws per chain")
    half = n // 2
    split = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    out = np.empty(d)
    for j in range(d):
        flat = split[:, :, j]
        ranks = rankdata(flat, method="average").reshape(flat.shape)
        scores = ndtri((ranks - 0.375) / (flat.size + 0.25))
        out[j] = _rhat_single(scores)
    return out
