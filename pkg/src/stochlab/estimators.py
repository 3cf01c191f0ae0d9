"""Estimators for the variance-gamma and Heston models.

Variance gamma is fitted by maximum likelihood with the closed-form increment
density.  Heston gets a moment-based estimate from a price series (rolling
variance as the latent-variance proxy), which is a quick starting point rather
than an efficient estimator.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln, kve

from stochlab.calibration import CalibrationResult, Objective, simplex_minimize
from stochlab.engine import HestonParams, VgParams
from stochlab.marketdata import PriceSeries, log_returns, rolling_volatility

_X_FLOOR = 1e-12


def vg_logpdf(x, p: VgParams, dt: float = 1.0) -> np.ndarray:
    """Log-density of a variance-gamma increment over a time step ``dt``."""
    if p.sigma <= 0:
        raise ValueError("the VG density needs sigma > 0")
    x = np.asarray(x, dtype=float)
    ax = np.maximum(np.abs(x), _X_FLOOR)
    s2 = p.sigma**2
    shape = dt / p.nu
    c = 2.0 * s2 / p.nu + p.theta**2
    z = ax * math.sqrt(c) / s2
    order = shape - 0.5
    return (
        math.log(2.0)
        + p.theta * x / s2
        - shape * math.log(p.nu)
        - 0.5 * math.log(2.0 * math.pi)
        - math.log(p.sigma)
        - gammaln(shape)
        + (0.5 * shape - 0.25) * (2.0 * np.log(ax) - math.log(c))
        + np.log(kve(order, z))
        - z
    )


def fit_vg(returns, dt: float = 1.0, max_iter: int = 4000) -> CalibrationResult:
    """Maximum likelihood over (theta, log sigma, log nu), started from moments."""
    r = np.asarray(getattr(returns, "values", returns), dtype=float)
    if r.size < 30:
        raise ValueError("VG fitting needs at least 30 returns")
    m = r.mean()
    sd = r.std()
    kurt = float(np.mean((r - m) ** 4) / sd**4 - 3.0)
    nu0 = max(kurt, 0.3) * dt / 3.0
    theta0 = m / dt
    sigma0 = math.sqrt(max(sd**2 / dt - theta0**2 * nu0, 0.25 * sd**2 / dt))

    def negll(v):
        return -float(np.sum(vg_logpdf(r, VgParams(v[0], math.exp(v[1]), math.exp(v[2])), dt)))

    start = np.array([theta0, math.log(sigma0), math.log(nu0)])
    obj = Objective(3, negll)
    start_obj = obj(start)
    res = simplex_minimize(obj, start, max_iter=max_iter)
    return CalibrationResult(
        model="vg",
        names=("theta", "sigma", "nu"),
        values=(float(res.x[0]), math.exp(res.x[1]), math.exp(res.x[2])),
        objective=res.f,
        iterations=res.iterations,
        converged=res.converged,
        start_objective=start_obj,
        extra={"dt": dt, "method": "mle"},
    )


def fit_heston(prices: PriceSeries, dt: float = 1.0 / 252.0, window: int = 30) -> CalibrationResult:
    """Moment estimates of the Heston parameters from one price series.

    The annualized rolling variance stands in for the latent variance ``v``;
    an AR(1) regression of ``v`` gives ``kappa`` and ``theta``, the residual
    scale gives ``xi``.  ``rho`` comes from the leverage moment
    ``sum_j Cov(r_t, r_{t+j}^2) = rho * xi * vbar * dt^2 * sum_j exp(-kappa j dt)``
    summed over about one mean-reversion time.
    """
    r = log_returns(prices)
    vol = rolling_volatility(r, window, 1.0 / dt)
    v = vol.values**2
    if v.size < 10:
        raise ValueError("price series too short for Heston moment estimates")
    x, y = v[:-1], v[1:]
    slope, intercept = np.polyfit(x, y, 1)
    slope = min(slope, 1.0 - 1e-6)
    kappa = max((1.0 - slope) / dt, 1e-6)
    theta = max(intercept / (1.0 - slope), 0.0)
    resid = y - (intercept + slope * x)
    vbar = max(float(np.mean(x)), 1e-12)
    xi = float(np.std(resid) / math.sqrt(vbar * dt))
    rho = _leverage_rho(r.values, kappa, xi, dt)
    mu = float(np.mean(r.values) / dt + 0.5 * np.mean(v))
    params = HestonParams(mu, float(kappa), float(theta), xi, float(np.clip(rho, -1.0, 1.0)), float(prices.prices[0]), float(v[0]))
    return CalibrationResult(
        model="heston",
        names=("mu", "kappa", "theta", "xi", "rho", "v0"),
        values=(params.mu, params.kappa, params.theta, params.xi, params.rho, params.v0),
        objective=None,
        iterations=0,
        converged=True,
        extra={"dt": dt, "window": window, "method": "moments", "feller_ratio": _finite_or_none(params.feller_ratio)},
    )


def _leverage_rho(r: np.ndarray, kappa: float, xi: float, dt: float) -> float:
    horizon = int(min(max(1.0 / (kappa * dt), 5), 126, r.size // 4))
    if horizon < 1 or xi <= 0:
        return 0.0
    rc = r - r.mean()
    r2 = r**2
    r2c = r2 - r2.mean()
    lags = np.arange(1, horizon + 1)
    cov = sum(float(np.mean(rc[:-j] * r2c[j:])) for j in lags)
    vbar = float(r2.mean()) / dt
    scale = xi * vbar * dt**2 * float(np.sum(np.exp(-kappa * lags * dt)))
    return float(np.clip(cov / scale, -1.0, 1.0)) if scale > 0 else 0.0


def _finite_or_none(v: float) -> float | None:
    return v if math.isfinite(v) else None
