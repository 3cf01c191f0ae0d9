"""Price/volatility reaction network: drift, simulation and equilibrium analysis.

Two drift variants are available.  ``"bilinear"`` (the default) is

    dS/dt = k1*S*V - k3*S
    dV/dt = k2*V*S - k4*V

and ``"linear"`` is the mass-action drift implied by the propensities
``a1 = k1*S``, ``a2 = k2*V``, ``a3 = k3*S``, ``a4 = k4*V``::

    dS/dt = k2*V - k3*S
    dV/dt = k1*S - k4*V

For the bilinear drift the interior equilibrium is ``(k4/k2, k3/k1)`` and its
Jacobian ``[[0, k1*k4/k2], [k2*k3/k1, 0]]`` has eigenvalues ``+-sqrt(k3*k4)``,
so for positive rates it is always a saddle.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from stochlab._accel import njit, select
from stochlab.engine import RngSeed, SimPath, TimeGrid, euler_maruyama
from stochlab.errors import NumericalError

VARIANTS = ("bilinear", "linear")
CLASSES = (
    "stable node",
    "unstable node",
    "saddle",
    "center",
    "stable spiral",
    "unstable spiral",
    "degenerate",
)


@dataclass(frozen=True)
class RateConstants:
    k1: float
    k2: float
    k3: float
    k4: float

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "k4"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite nonnegative rate, got {v}")

    @classmethod
    def of(cls, k: "RateConstants | Sequence[float]") -> "RateConstants":
        if isinstance(k, cls):
            return k
        vals = [float(v) for v in k]
        if len(vals) != 4:
            raise ValueError("expected four rate constants k1..k4")
        return cls(*vals)

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.k3, self.k4])


@dataclass(frozen=True)
class MarketState:
    S: float
    V: float

    def __post_init__(self):
        if not (self.S >= 0 and self.V >= 0):
            raise ValueError("price and volatility must be nonnegative")


def _check_variant(variant: str) -> int:
    if variant not in VARIANTS:
        raise ValueError(f"unknown drift variant {variant!r}; expected one of {VARIANTS}")
    return VARIANTS.index(variant)


def drift(x: MarketState, k, variant: str = "bilinear") -> tuple[float, float]:
    k = RateConstants.of(k)
    s, v = x.S, x.V
    if _check_variant(variant) == 0:
        return (k.k1 * s * v - k.k3 * s, k.k2 * v * s - k.k4 * v)
    return (k.k2 * v - k.k3 * s, k.k1 * s - k.k4 * v)


def propensities(x: MarketState, k) -> tuple[float, float, float, float]:
    """Reaction rates (a1, a2, a3, a4) = (k1*S, k2*V, k3*S, k4*V)."""
    k = RateConstants.of(k)
    return (k.k1 * x.S, k.k2 * x.V, k.k3 * x.S, k.k4 * x.V)


# --------------------------------------------------------------------------- integration kernels


def _integrate_loop(s0, v0, k1, k2, k3, k4, dt, rk4, variant):
    n = dt.size + 1
    out = np.empty((n, 2))
    out[0, 0] = s0
    out[0, 1] = v0
    s = s0
    v = v0
    stages = 4 if rk4 else 1
    for i in range(n - 1):
        h = dt[i]
        fs = 0.0
        fv = 0.0
        acc_s = 0.0
        acc_v = 0.0
        for st in range(stages):
            if st == 0:
                ss = s
                vv = v
            else:
                c = 1.0 if st == 3 else 0.5
                ss = s + c * h * fs
                vv = v + c * h * fv
            if variant == 0:
                fs = k1 * ss * vv - k3 * ss
                fv = k2 * vv * ss - k4 * vv
            else:
                fs = k2 * vv - k3 * ss
                fv = k1 * ss - k4 * vv
            w = 2.0 if st == 1 or st == 2 else 1.0
            acc_s += w * fs
            acc_v += w * fv
        if rk4:
            s = s + h / 6.0 * acc_s
            v = v + h / 6.0 * acc_v
        else:
            s = s + fs * h
            v = v + fv * h
        if not (math.isfinite(s) and math.isfinite(v)):
            out[i + 1 :, :] = np.nan
            return out, i + 1
        out[i + 1, 0] = s
        out[i + 1, 1] = v
    return out, -1


integrate_numba = njit(_integrate_loop)
# no vector form exists for this nonlinear recursion; the fallback is the
# same loop run by the interpreter
integrate_numpy = _integrate_loop
_integrate = select(integrate_numba, integrate_numpy)


def integrate(x0: MarketState, k, grid: TimeGrid, method: str = "rk4", variant: str = "bilinear"):
    """Fixed-step integration of the drift; returns ``(states, failed_step)``.

    ``failed_step`` is -1 on success, otherwise the index of the first
    non-finite state (rows from there on are NaN).
    """
    if method not in ("rk4", "euler"):
        raise ValueError("method must be 'rk4' or 'euler'")
    k = RateConstants.of(k)
    with np.errstate(over="ignore", invalid="ignore"):
        return _integrate(
            float(x0.S), float(x0.V), k.k1, k.k2, k.k3, k.k4,
            np.ascontiguousarray(grid.dt), method == "rk4", _check_variant(variant),
        )


def simulate_deterministic(
    x0: MarketState, k, grid: TimeGrid, method: str = "rk4", variant: str = "bilinear"
) -> SimPath:
    states, failed = integrate(x0, k, grid, method, variant)
    if failed >= 0:
        raise NumericalError("reaction model state blew up", step=failed)
    return SimPath(grid, states, ("S", "V"))


def simulate_stochastic(
    x0: MarketState,
    k,
    grid: TimeGrid,
    noise_scale: float,
    seed: int | RngSeed | None = None,
    n_paths: int = 1,
    variant: str = "bilinear",
) -> SimPath:
    """Euler-Maruyama with chemical-Langevin style noise, clamped at zero.

    Each species gets an independent Wiener driver with coefficient
    ``noise_scale * sqrt(sum of the magnitudes of its drift terms)``.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    k = RateConstants.of(k)
    vi = _check_variant(variant)
    k1, k2, k3, k4 = k.k1, k.k2, k.k3, k.k4

    def batch_drift(x, t):
        s, v = x[:, 0], x[:, 1]
        if vi == 0:
            return np.stack([k1 * s * v - k3 * s, k2 * v * s - k4 * v], axis=1)
        return np.stack([k2 * v - k3 * s, k1 * s - k4 * v], axis=1)

    def batch_diffusion(x, t):
        s, v = x[:, 0], x[:, 1]
        if vi == 0:
            act_s, act_v = k1 * s * v + k3 * s, k2 * v * s + k4 * v
        else:
            act_s, act_v = k2 * v + k3 * s, k1 * s + k4 * v
        b = np.zeros((x.shape[0], 2, 2))
        b[:, 0, 0] = noise_scale * np.sqrt(np.maximum(act_s, 0.0))
        b[:, 1, 1] = noise_scale * np.sqrt(np.maximum(act_v, 0.0))
        return b

    return euler_maruyama(
        batch_drift, batch_diffusion, [x0.S, x0.V], grid, seed, n_paths,
        labels=("S", "V"), project=lambda x: np.maximum(x, 0.0),
    )


# --------------------------------------------------------------------------- equilibria


def equilibria(k, variant: str = "bilinear") -> list[MarketState]:
    k = RateConstants.of(k)
    points = [MarketState(0.0, 0.0)]
    if _check_variant(variant) == 0:
        if k.k1 > 0 and k.k2 > 0:
            points.append(MarketState(k.k4 / k.k2, k.k3 / k.k1))
        else:
            warnings.warn("k1 or k2 is zero: no interior equilibrium, returning the origin only", RuntimeWarning)
    elif k.k3 * k.k4 == k.k1 * k.k2:
        warnings.warn("k3*k4 == k1*k2: the linear drift has a line of equilibria; returning the origin", RuntimeWarning)
    for p in points:
        res = max(abs(c) for c in drift(p, k, variant))
        if res >= 1e-12 * max(1.0, p.S, p.V):
            raise NumericalError(f"equilibrium {p} has drift residual {res:.3e}")
    return points


def jacobian(x: MarketState, k, variant: str = "bilinear") -> np.ndarray:
    k = RateConstants.of(k)
    if _check_variant(variant) == 0:
        return np.array([[k.k1 * x.V - k.k3, k.k1 * x.S], [k.k2 * x.V, k.k2 * x.S - k.k4]])
    return np.array([[-k.k3, k.k2], [k.k1, -k.k4]])


def eigenvalues_2x2(j: np.ndarray) -> tuple[complex, complex]:
    """Closed-form eigenvalues from trace and determinant."""
    tr = j[0, 0] + j[1, 1]
    det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
    disc = 0.25 * tr * tr - det
    if disc >= 0:
        r = math.sqrt(disc)
        return complex(0.5 * tr + r), complex(0.5 * tr - r)
    r = math.sqrt(-disc)
    return complex(0.5 * tr, r), complex(0.5 * tr, -r)


def classify_matrix(j: np.ndarray) -> str:
    scale = float(np.max(np.abs(j)))
    if scale == 0.0:
        return "degenerate"
    tr = j[0, 0] + j[1, 1]
    det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
    if abs(det) <= 1e-12 * scale * scale:
        return "degenerate"
    if det < 0:
        return "saddle"
    if abs(tr) <= 1e-12 * scale:
        return "center"
    kind = "node" if tr * tr >= 4.0 * det else "spiral"
    return f"{'stable' if tr < 0 else 'unstable'} {kind}"


@dataclass(frozen=True)
class EquilibriumReport:
    k: RateConstants
    variant: str
    points: list[MarketState]
    jacobians: list[np.ndarray]
    eigenvalues: list[tuple[complex, complex]]
    classifications: list[str]
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": [self.k.k1, self.k.k2, self.k.k3, self.k.k4],
            "variant": self.variant,
            "points": [
                {
                    "S": p.S,
                    "V": p.V,
                    "jacobian": j.tolist(),
                    "eigenvalues": [{"re": e.real, "im": e.imag} for e in ev],
                    "classification": c,
                }
                for p, j, ev, c in zip(self.points, self.jacobians, self.eigenvalues, self.classifications)
            ],
            "notes": list(self.notes),
        }


def classify(k, variant: str = "bilinear") -> EquilibriumReport:
    k = RateConstants.of(k)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        points = equilibria(k, variant)
    jacs = [jacobian(p, k, variant) for p in points]
    return EquilibriumReport(
        k=k,
        variant=variant,
        points=points,
        jacobians=jacs,
        eigenvalues=[eigenvalues_2x2(j) for j in jacs],
        classifications=[classify_matrix(j) for j in jacs],
        notes=[str(w.message) for w in caught],
    )
