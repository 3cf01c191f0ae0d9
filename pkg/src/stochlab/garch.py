"""GARCH(p, q) conditional variance, Gaussian quasi-likelihood, fitting and forecasts.

    r_t = mu + a_t,   a_t = sigma_t * eps_t
    sigma_t^2 = omega + sum_i alpha_i a_{t-i}^2 + sum_j beta_j sigma_{t-j}^2

with ``q = len(alphas)`` ARCH lags and ``p = len(betas)`` GARCH lags.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter, lfiltic

from stochlab._accel import njit, select
from stochlab.calibration import LOG_2PI, Objective, OptimizerResult, simplex_minimize
from stochlab.engine import RngSeed, as_seed

MAX_PERSISTENCE = 1.0 - 1e-6


@dataclass(frozen=True)
class GarchParams:
    omega: float
    alphas: tuple[float, ...] = ()
    betas: tuple[float, ...] = ()
    mean: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in np.atleast_1d(self.alphas)))
        object.__setattr__(self, "betas", tuple(float(b) for b in np.atleast_1d(self.betas)))
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if any(c < 0 or not math.isfinite(c) for c in self.alphas + self.betas):
            raise ValueError("GARCH coefficients must be finite and nonnegative")
        if self.persistence >= 1.0:
            raise ValueError(f"non-stationary parameters: sum(alpha) + sum(beta) = {self.persistence:.6g} >= 1")

    @property
    def p(self) -> int:
        return len(self.betas)

    @property
    def q(self) -> int:
        return len(self.alphas)

    @property
    def persistence(self) -> float:
        return float(sum(self.alphas) + sum(self.betas))

    @property
    def long_run_variance(self) -> float:
        return self.omega / (1.0 - self.persistence)

    def to_dict(self) -> dict:
        return {
            "model": "garch",
            "p": self.p,
            "q": self.q,
            "omega": self.omega,
            "alphas": list(self.alphas),
            "betas": list(self.betas),
            "mean": self.mean,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "GarchParams":
        return cls(float(d["omega"]), tuple(d.get("alphas", ())), tuple(d.get("betas", ())), float(d.get("mean", 0.0)))


# --------------------------------------------------------------------------- kernels


def _recursion_loop(a2, omega, alphas, betas, init):
    n = a2.size
    q = alphas.size
    p = betas.size
    s2 = np.empty(n)
    for t in range(n):
        v = omega
        for i in range(q):
            j = t - 1 - i
            v += alphas[i] * (a2[j] if j >= 0 else init)
        for i in range(p):
            j = t - 1 - i
            v += betas[i] * (s2[j] if j >= 0 else init)
        s2[t] = v
    return s2


def _recursion_filter(a2, omega, alphas, betas, init):
    n = a2.size
    q = alphas.size
    x = np.full(n, omega)
    if q:
        padded = np.concatenate((np.full(q, init), a2))
        for i in range(q):
            x += alphas[i] * padded[q - 1 - i : q - 1 - i + n]
    if betas.size == 0:
        return x
    den = np.concatenate(([1.0], -betas))
    zi = lfiltic([1.0], den, y=np.full(betas.size, init))
    return lfilter([1.0], den, x, zi=zi)[0]


def _simulate_loop(eps, omega, alphas, betas, init):
    n = eps.size
    q = alphas.size
    p = betas.size
    a = np.empty(n)
    s2 = np.empty(n)
    for t in range(n):
        v = omega
        for i in range(q):
            j = t - 1 - i
            v += alphas[i] * (a[j] * a[j] if j >= 0 else init)
        for i in range(p):
            j = t - 1 - i
            v += betas[i] * (s2[j] if j >= 0 else init)
        s2[t] = v
        a[t] = math.sqrt(v) * eps[t]
    return a, s2


recursion_numba = njit(_recursion_loop)
recursion_numpy = _recursion_filter
simulate_numba = njit(_simulate_loop)
# innovations feed back into the variance, so there is no vector form
simulate_numpy = _simulate_loop
_recursion = select(recursion_numba, recursion_numpy)
_simulate = select(simulate_numba, simulate_numpy)


# --------------------------------------------------------------------------- recursion / likelihood


def _returns_array(returns) -> np.ndarray:
    return np.asarray(getattr(returns, "values", returns), dtype=float)


def _presample(params: GarchParams, a: np.ndarray, init) -> float:
    if init == "sample":
        return float(np.mean(a * a))
    if init == "unconditional":
        return params.long_run_variance
    v = float(init)
    if not v > 0:
        raise ValueError("presample variance must be positive")
    return v


def variance_recursion(params: GarchParams, returns, init="sample") -> np.ndarray:
    """Conditional variances for each observation.

    Presample ``a^2`` and ``sigma^2`` are set to ``init``: ``"sample"`` (mean of
    the squared residuals), ``"unconditional"`` (omega / (1 - persistence)) or
    a positive number.
    """
    r = _returns_array(returns)
    if r.size <= max(params.p, params.q):
        raise ValueError("need more returns than the model order")
    a = r - params.mean
    v0 = _presample(params, a, init)
    return _recursion(
        np.ascontiguousarray(a * a), float(params.omega),
        np.asarray(params.alphas, dtype=float), np.asarray(params.betas, dtype=float), v0,
    )


def garch_loglik(params: GarchParams, returns, init="sample") -> float:
    r = _returns_array(returns)
    if r.size == 0:
        raise ValueError("empty return series")
    s2 = variance_recursion(params, r, init)
    a = r - params.mean
    return float(-0.5 * np.sum(LOG_2PI + np.log(s2) + a * a / s2))


def forecast_variance(params: GarchParams, last_a2, last_sigma2, horizon: int) -> np.ndarray:
    """h-step variance forecasts using E[a^2] = sigma^2 for future steps.

    ``last_a2`` and ``last_sigma2`` hold the most recent values, newest last
    (at least ``q`` and ``p`` of them respectively).
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    a2 = list(np.atleast_1d(np.asarray(last_a2, dtype=float)))
    s2 = list(np.atleast_1d(np.asarray(last_sigma2, dtype=float)))
    if len(a2) < params.q or len(s2) < params.p:
        raise ValueError("not enough lagged values for the model order")
    out = np.empty(horizon)
    for h in range(horizon):
        v = params.omega
        v += sum(params.alphas[i] * a2[-1 - i] for i in range(params.q))
        v += sum(params.betas[j] * s2[-1 - j] for j in range(params.p))
        out[h] = v
        a2.append(v)
        s2.append(v)
    return out


def simulate_garch(
    params: GarchParams, n: int, seed: int | RngSeed | None = None, burn_in: int = 500
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n`` returns with Gaussian innovations; returns ``(returns, sigma2)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    eps = as_seed(seed).generator().standard_normal(n + burn_in)
    a, s2 = _simulate(
        eps, float(params.omega), np.asarray(params.alphas, dtype=float),
        np.asarray(params.betas, dtype=float), params.long_run_variance,
    )
    return params.mean + a[burn_in:], s2[burn_in:]


# --------------------------------------------------------------------------- fitting


@dataclass(frozen=True)
class GarchFit:
    params: GarchParams
    loglik: float
    start_loglik: float
    result: OptimizerResult

    @property
    def converged(self) -> bool:
        return self.result.converged


def _unpack(v: np.ndarray, p: int, q: int, mean: float) -> GarchParams:
    omega = math.exp(v[0])
    e = np.exp(np.clip(v[1:], -700.0, 700.0))
    coeffs = MAX_PERSISTENCE * e / (1.0 + e.sum())
    return GarchParams(omega, tuple(coeffs[:q]), tuple(coeffs[q:]), mean)


def _pack(params: GarchParams) -> np.ndarray:
    coeffs = np.array(params.alphas + params.betas)
    slack = MAX_PERSISTENCE - coeffs.sum()
    return np.concatenate(([math.log(params.omega)], np.log(coeffs / slack)))


def fit_garch(returns, p: int = 1, q: int = 1, init="sample", max_iter: int = 2000) -> GarchFit:
    """Gaussian QMLE with the mean fixed at the sample mean.

    Searches ``log(omega)`` and multinomial-logit coordinates for the
    coefficients, which keeps them positive with sum below 1 - 1e-6.  Starts
    from omega = 0.1 * var, alpha = 0.1 and beta = 0.8 (split evenly over the
    lags).
    """
    r = _returns_array(returns)
    if r.size < 100:
        raise ValueError("GARCH fitting needs at least 100 returns")
    if p < 0 or q < 0:
        raise ValueError("orders must be nonnegative")
    mean = float(r.mean())
    var = float(r.var())
    start = GarchParams(
        0.1 * var if p + q else var,
        tuple([0.1 / q] * q),
        tuple([0.8 / p] * p),
        mean,
    )

    def negll(v):
        return -garch_loglik(_unpack(v, p, q, mean), r, init)

    res = simplex_minimize(Objective(1 + p + q, negll), _pack(start), max_iter=max_iter)
    return GarchFit(_unpack(res.x, p, q, mean), -res.f, garch_loglik(start, r, init), res)
