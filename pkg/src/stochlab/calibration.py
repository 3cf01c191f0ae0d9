"""Objectives, derivative-free and box-constrained optimizers, path likelihoods.

Both optimizers minimize.  Objectives return ``+inf`` for infeasible or
non-finite points so a search can step away from them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from stochlab.engine import TimeGrid
from stochlab.errors import DataError, NumericalError
from stochlab.reaction import MarketState, RateConstants, integrate

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_RATES = (0.1, 0.2, 0.01, 0.05)
RATE_BOUNDS = (0.0, 10.0)


@dataclass
class Objective:
    """A scalar function to minimize over ``arity`` parameters.

    Calling the objective never raises on bad points: values outside the box,
    non-finite values and floating-point failures all map to ``+inf``.
    """

    arity: int
    fn: Callable[[np.ndarray], float]
    bounds: Sequence[tuple[float, float]] | None = None
    n_evals: int = field(default=0, init=False)

    def __post_init__(self):
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.shape != (self.arity, 2) or np.any(b[:, 0] > b[:, 1]):
                raise ValueError("bounds must be one (lo, hi) pair per parameter with lo <= hi")
            self.bounds = b

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0] if self.bounds is not None else np.full(self.arity, -np.inf)

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1] if self.bounds is not None else np.full(self.arity, np.inf)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        self.n_evals += 1
        if not self.contains(x):
            return math.inf
        try:
            with np.errstate(all="ignore"):
                v = float(self.fn(x))
        except (FloatingPointError, OverflowError, ZeroDivisionError):
            return math.inf
        return v if math.isfinite(v) else math.inf


@dataclass(frozen=True)
class OptimizerResult:
    x: np.ndarray
    f: float
    iterations: int
    converged: bool
    trace: list[float]
    message: str = ""


# --------------------------------------------------------------------------- Nelder-Mead


def simplex_minimize(
    obj: Objective,
    x0,
    ftol: float = 1e-8,
    xtol: float = 1e-8,
    max_iter: int = 2000,
) -> OptimizerResult:
    """Nelder-Mead with reflection 1, expansion 2, contraction 1/2, shrink 1/2.

    The initial simplex perturbs each coordinate of ``x0`` by 5% (0.00025 when
    the coordinate is zero).  Iteration stops once the spread of vertex values
    is below ``ftol`` and the simplex diameter below ``xtol``.  Vertices are
    ordered by value with ties broken by insertion order.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if n != obj.arity:
        raise ValueError(f"x0 has {n} entries, objective expects {obj.arity}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if obj.bounds is not None and not obj.contains(x0):
        raise ValueError("x0 lies outside the bounds")

    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        sim[i + 1, i] = x0[i] * 1.05 if x0[i] != 0 else 0.00025
    fs = np.array([obj(v) for v in sim])
    born = np.arange(n + 1)
    counter = n + 1

    def order():
        idx = np.lexsort((born, fs))
        return sim[idx], fs[idx], born[idx]

    sim, fs, born = order()
    trace = [float(fs[0])]
    converged = False
    message = "maximum iterations reached"
    it = 0
    while True:
        # both tests, since a simplex straddling the minimum has zero spread at any width
        spread_ok = fs[-1] - fs[0] < ftol and np.isfinite(fs[-1])
        if spread_ok and np.max(np.abs(sim[1:] - sim[0])) < xtol:
            converged, message = True, "simplex converged"
            break
        if it >= max_iter:
            break
        it += 1

        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = centroid + (centroid - worst)
        fr = obj(xr)
        accept = None
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = obj(xe)
            accept = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fs[-2]:
            accept = (xr, fr)
        elif fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = obj(xc)
            if fc <= fr:
                accept = (xc, fc)
        else:
            xcc = centroid + 0.5 * (worst - centroid)
            fcc = obj(xcc)
            if fcc < fs[-1]:
                accept = (xcc, fcc)

        if accept is not None:
            sim[-1], fs[-1] = accept
            born[-1] = counter
            counter += 1
        else:
            for i in range(1, n + 1):
                sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                fs[i] = obj(sim[i])
                born[i] = counter
                counter += 1
        sim, fs, born = order()
        trace.append(float(fs[0]))

    return OptimizerResult(sim[0].copy(), float(fs[0]), it, converged, trace, message)


# --------------------------------------------------------------------------- box-constrained descent


def fd_gradient(fn: Callable[[np.ndarray], float], x, lower=None, upper=None) -> np.ndarray:
    """Central differences with step 1e-6*max(1, |x_i|), kept inside the box."""
    x = np.asarray(x, dtype=float)
    lower = np.full(x.size, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(x.size, np.inf) if upper is None else np.asarray(upper, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        h = 1e-6 * max(1.0, abs(x[i]))
        hi = min(x[i] + h, upper[i])
        lo = max(x[i] - h, lower[i])
        xp = x.copy()
        xm = x.copy()
        xp[i] = hi
        xm[i] = lo
        g[i] = (fn(xp) - fn(xm)) / (hi - lo)
    return g


def bounded_descent(
    obj: Objective,
    x0,
    ftol: float = 1e-8,
    xtol: float = 1e-8,
    gtol: float = 1e-8,
    max_iter: int = 2000,
) -> OptimizerResult:
    """Projected gradient descent with finite-difference gradients.

    Each iteration backtracks (halving) from the previous accepted step length
    times two until the projected point satisfies the Armijo condition with
    constant 1e-4.  Stops when the projected gradient is below ``gtol``, the
    relative decrease below ``ftol`` or the step below ``xtol``.
    """
    if obj.bounds is None:
        raise ValueError("bounded_descent needs bounds")
    x = np.asarray(x0, dtype=float).ravel().copy()
    if x.size != obj.arity:
        raise ValueError(f"x0 has {x.size} entries, objective expects {obj.arity}")
    if not obj.contains(x):
        raise ValueError("x0 lies outside the bounds")
    lo, hi = obj.lower, obj.upper
    f = obj(x)
    if not math.isfinite(f):
        raise NumericalError("objective is not finite at the starting point")
    trace = [f]
    step = 1.0
    converged = False
    message = "maximum iterations reached"
    it = 0
    while it < max_iter:
        g = fd_gradient(obj, x, lo, hi)
        if not np.all(np.isfinite(g)):
            raise NumericalError("finite-difference gradient is not finite", step=it)
        if np.max(np.abs(x - np.clip(x - g, lo, hi))) < gtol:
            converged, message = True, "projected gradient below gtol"
            break
        it += 1
        t = min(step * 2.0, 1e12)
        accepted = False
        for _ in range(80):
            xn = np.clip(x - t * g, lo, hi)
            fn = obj(xn)
            if fn <= f + 1e-4 * float(g @ (xn - x)) and fn <= f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged, message = True, "line search cannot decrease the objective"
            break
        dx = np.max(np.abs(xn - x))
        df = f - fn
        x, f, step = xn, fn, t
        trace.append(f)
        if df <= ftol * max(abs(f), abs(f + df), 1.0):
            converged, message = True, "relative decrease below ftol"
            break
        if dx < xtol:
            converged, message = True, "step below xtol"
            break
    return OptimizerResult(x, f, it, converged, trace, message)


# --------------------------------------------------------------------------- path likelihoods


def gaussian_path_score(S, V, S_sim, V_sim) -> float:
    """Two-track Gaussian score using the observed V as variance for both tracks."""
    S, V, S_sim, V_sim = (np.asarray(a, dtype=float) for a in (S, V, S_sim, V_sim))
    ll_s = -0.5 * np.sum(LOG_2PI + np.log(V) + (S - S_sim) ** 2 / V)
    ll_v = -0.5 * np.sum(LOG_2PI + np.log(V) + (V - V_sim) ** 2 / V)
    return float(ll_s + ll_v)


def _observed(S, V) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(S, dtype=float)
    V = np.asarray(V, dtype=float)
    if S.shape != V.shape or S.ndim != 1 or S.size < 2:
        raise DataError("observed S and V must be equal-length series with at least 2 points")
    if not (np.all(np.isfinite(S)) and np.all(np.isfinite(V))):
        raise DataError("observed series contain non-finite values")
    return S, V


def paper_path_loglik(k, observed_S, observed_V, grid: TimeGrid | None = None) -> float:
    """Deterministic Euler path from the first observation, scored against the data.

    Returns ``-inf`` when the simulated path overflows.
    """
    S, V = _observed(observed_S, observed_V)
    if np.any(V <= 0):
        raise DataError("observed volatility must be strictly positive for the path likelihood")
    grid = TimeGrid(np.arange(S.size, dtype=float)) if grid is None else grid
    if len(grid) != S.size:
        raise ValueError("grid length must match the observed series")
    sim, failed = integrate(MarketState(S[0], V[0]), k, grid, method="euler")
    if failed >= 0:
        return -math.inf
    return gaussian_path_score(S, V, sim[:, 0], sim[:, 1])


class PathScore(NamedTuple):
    loglik: float
    floored: bool


def corrected_path_loglik(
    k,
    observed_S,
    observed_V,
    grid: TimeGrid | None = None,
    dt: float | None = None,
    variance_floor: float = 1e-12,
) -> PathScore:
    """One-step Gaussian transition likelihood.

    Price steps have variance ``(V_t * S_t)**2 * dt``; volatility steps use the
    mean squared one-step residual (its profile MLE).  Both variances are
    floored at ``variance_floor``; ``floored`` reports whether that happened.
    When ``dt`` is given it overrides the grid spacing (uniform step).
    """
    S, V = _observed(observed_S, observed_V)
    if np.any(V < 0):
        raise DataError("observed volatility must be nonnegative")
    if dt is not None:
        if not dt > 0:
            raise ValueError("dt must be positive")
        h = np.full(S.size - 1, float(dt))
    else:
        grid = TimeGrid(np.arange(S.size, dtype=float)) if grid is None else grid
        if len(grid) != S.size:
            raise ValueError("grid length must match the observed series")
        h = grid.dt
    k = RateConstants.of(k)
    s, v = S[:-1], V[:-1]
    ms = s + (k.k1 * s * v - k.k3 * s) * h
    mv = v + (k.k2 * v * s - k.k4 * v) * h
    rs = S[1:] - ms
    rv = V[1:] - mv
    var_s = (v * s) ** 2 * h
    var_v = np.full(rv.size, np.mean(rv**2 / h)) * h
    floored = bool(np.any(var_s < variance_floor) or np.any(var_v < variance_floor))
    var_s = np.maximum(var_s, variance_floor)
    var_v = np.maximum(var_v, variance_floor)
    ll = -0.5 * np.sum(LOG_2PI + np.log(var_s) + rs**2 / var_s)
    ll += -0.5 * np.sum(LOG_2PI + np.log(var_v) + rv**2 / var_v)
    return PathScore(float(ll), floored)


# --------------------------------------------------------------------------- reaction calibration


@dataclass(frozen=True)
class CalibrationResult:
    model: str
    names: tuple[str, ...]
    values: tuple[float, ...]
    objective: float | None
    iterations: int
    converged: bool
    start_objective: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {n: v for n, v in zip(self.names, self.values)},
            "objective": _json_float(self.objective),
            "start_objective": _json_float(self.start_objective),
            "iterations": self.iterations,
            "converged": self.converged,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationResult":
        names = tuple(d["params"])
        return cls(
            model=d["model"],
            names=names,
            values=tuple(float(d["params"][n]) for n in names),
            objective=_opt_float(d.get("objective")),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            start_objective=_opt_float(d.get("start_objective")),
            extra=d.get("extra", {}),
        )


def _json_float(v):
    # JSON has no NaN or infinity
    return float(v) if v is not None and math.isfinite(v) else None


def _opt_float(v):
    return None if v is None else float(v)


def align_price_volatility(prices, vol) -> tuple[np.ndarray, np.ndarray]:
    """Price and volatility observed on the same dates.

    Market-data series are inner-joined on their timestamps; plain arrays
    must already be aligned and of equal length.
    """
    if hasattr(prices, "timestamps") and hasattr(vol, "timestamps"):
        _, ip, iv = np.intersect1d(prices.timestamps, vol.timestamps, return_indices=True)
        if ip.size < 2:
            raise DataError("price and volatility series share fewer than 2 dates")
        return _observed(np.asarray(prices.prices, dtype=float)[ip], np.asarray(vol.values, dtype=float)[iv])
    return _observed(prices, vol)


def calibrate_reaction_model(
    prices,
    vol,
    x0=DEFAULT_RATES,
    likelihood: str = "paper",
    bounds: tuple[float, float] = RATE_BOUNDS,
    ftol: float = 1e-8,
    xtol: float = 1e-8,
    max_iter: int = 2000,
    optimizer: str = "descent",
) -> CalibrationResult:
    """Fit k1..k4 by minimizing the negative path log-likelihood over a box.

    Time runs in steps of one observation.  ``likelihood`` selects the
    two-track score (``"paper"``) or the transition likelihood
    (``"corrected"``).  ``optimizer`` is ``"descent"`` (projected gradient)
    or ``"simplex"``; the objective is badly conditioned and the simplex
    copes better from starts far from the optimum.
    """
    if optimizer not in ("descent", "simplex"):
        raise ValueError("optimizer must be 'descent' or 'simplex'")
    S, V = align_price_volatility(prices, vol)
    if likelihood == "paper":
        if np.any(V <= 0):
            raise DataError("calibration data: volatility series contains nonpositive values")
        grid = TimeGrid(np.arange(S.size, dtype=float))

        def negll(k):
            return -paper_path_loglik(k, S, V, grid)
    elif likelihood == "corrected":
        def negll(k):
            return -corrected_path_loglik(k, S, V).loglik
    else:
        raise ValueError("likelihood must be 'paper' or 'corrected'")

    obj = Objective(4, negll, [bounds] * 4)
    start = np.asarray(RateConstants.of(x0).as_array())
    if optimizer == "descent":
        res = bounded_descent(obj, start, ftol=ftol, xtol=xtol, max_iter=max_iter)
    else:
        if not math.isfinite(obj(start)):
            raise NumericalError("objective is not finite at the starting rates")
        res = simplex_minimize(obj, start, ftol=ftol, xtol=xtol, max_iter=max_iter)
    return CalibrationResult(
        model="reaction",
        names=("k1", "k2", "k3", "k4"),
        values=tuple(float(v) for v in res.x),
        objective=res.f,
        iterations=res.iterations,
        converged=res.converged,
        start_objective=res.trace[0],
        extra={"likelihood": likelihood, "optimizer": optimizer, "message": res.message, "dt": 1.0},
    )
