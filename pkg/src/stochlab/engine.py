"""Random path generation: Wiener increments, Euler-Maruyama and model simulators.

Every simulator takes immutable parameters, a :class:`TimeGrid` and a seed, and
returns a :class:`SimPath` holding ``n_paths`` trajectories.  Draws are laid out
path-major, so path ``i`` is the same whatever the total number of paths
requested (as long as it is at least ``i + 1``).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from stochlab._accel import njit, select
from stochlab.errors import DataError, NumericalError

FBM_MAX_POINTS = 2048


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing time points (unit chosen by the caller)."""

    t: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
            raise ValueError("time points must be finite and strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, horizon: float, n_steps: int, start: float = 0.0) -> "TimeGrid":
        if n_steps < 1 or horizon <= 0:
            raise ValueError("uniform grid needs n_steps >= 1 and horizon > 0")
        return cls(start + horizon * np.arange(n_steps + 1) / n_steps)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    @property
    def is_uniform(self) -> bool:
        dt = self.dt
        return bool(np.allclose(dt, dt[0], rtol=1e-12, atol=0.0))

    def __len__(self) -> int:
        return self.t.size


@dataclass(frozen=True)
class RngSeed:
    """Seed plus stream id; each (seed, stream, component) triple is an independent generator."""

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if int(self.stream) < 0:
            raise ValueError("stream id must be nonnegative")

    def generator(self, component: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(component)))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream: int) -> "RngSeed":
        return RngSeed(self.seed, stream)


def as_seed(seed: int | RngSeed | None) -> RngSeed:
    if isinstance(seed, RngSeed):
        return seed
    return RngSeed(0 if seed is None else int(seed))


@dataclass(frozen=True)
class SimPath:
    """Simulated trajectories; ``states`` has shape ``(n_paths, len(grid), dim)``."""

    grid: TimeGrid
    states: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 2:
            states = states[None]
        if states.ndim != 3 or states.shape[1] != len(self.grid):
            raise ValueError(f"states shape {states.shape} does not match grid length {len(self.grid)}")
        if states.shape[2] != len(self.labels):
            raise ValueError("one label per state dimension required")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def __getitem__(self, label: str) -> np.ndarray:
        """All paths of one state dimension, shape ``(n_paths, len(grid))``."""
        return self.states[:, :, self.labels.index(label)]

    def path(self, i: int) -> "SimPath":
        return SimPath(self.grid, self.states[i : i + 1], self.labels)

    def to_csv(self, dest: str | Path | io.TextIOBase, index: int = 0) -> None:
        """Write one trajectory as CSV: column ``t`` then one column per label."""
        rows = self.states[index]
        own = isinstance(dest, (str, Path))
        fh = open(dest, "w", newline="") if own else dest
        try:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("t",) + self.labels)
            for t, row in zip(self.grid.t, rows):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        finally:
            if own:
                fh.close()

    @classmethod
    def from_csv(cls, src: str | Path) -> "SimPath":
        with open(src, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = np.array([[float(v) for v in row] for row in reader])
        if header[0] != "t" or data.ndim != 2:
            raise DataError(f"{src}: not a path CSV")
        return cls(TimeGrid(data[:, 0]), data[:, 1:], tuple(header[1:]))


# --------------------------------------------------------------------------- params


@dataclass(frozen=True)
class GbmParams:
    mu: float
    sigma: float
    s0: float = 100.0

    def __post_init__(self):
        if self.sigma < 0 or not self.s0 > 0:
            raise ValueError("GBM needs sigma >= 0 and s0 > 0")


@dataclass(frozen=True)
class HestonParams:
    mu: float
    kappa: float
    theta: float
    xi: float
    rho: float
    s0: float = 100.0
    v0: float = 0.04

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.theta < 0 or self.xi < 0 or self.v0 < 0:
            raise ValueError("theta, xi and v0 must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if not self.s0 > 0:
            raise ValueError("s0 must be positive")

    @property
    def feller_ratio(self) -> float:
        """2*kappa*theta/xi**2; values >= 1 keep the variance strictly positive."""
        if self.xi == 0:
            return math.inf
        return 2.0 * self.kappa * self.theta / self.xi**2


@dataclass(frozen=True)
class FbmParams:
    hurst: float
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.hurst < 1.0:
            raise ValueError("Hurst index must lie in (0, 1)")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


@dataclass(frozen=True)
class VgParams:
    theta: float
    sigma: float
    nu: float = 0.2

    def __post_init__(self):
        if self.sigma < 0 or not self.nu > 0:
            raise ValueError("VG needs sigma >= 0 and nu > 0")


# --------------------------------------------------------------------------- Wiener


def wiener_increments(n: int, dt: float, seed: int | RngSeed | None = None) -> np.ndarray:
    """``n`` independent Normal(0, dt) draws."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not dt > 0:
        raise ValueError("dt must be positive")
    return as_seed(seed).generator().standard_normal(n) * math.sqrt(dt)


def euler_maruyama(
    drift: Callable[[np.ndarray, float], np.ndarray],
    diffusion: Callable[[np.ndarray, float], np.ndarray],
    x0: Sequence[float],
    grid: TimeGrid,
    seed: int | RngSeed | None = None,
    n_paths: int = 1,
    labels: Sequence[str] | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> SimPath:
    """Euler-Maruyama for ``dX = a(X, t) dt + B(X, t) dW``.

    ``drift`` and ``diffusion`` are evaluated on a batch of states of shape
    ``(n_paths, d)`` and must return arrays of shape ``(n_paths, d)`` and
    ``(n_paths, d, m)`` respectively; ``m`` (the number of Wiener drivers) is
    read off the first diffusion evaluation.  ``project`` is applied to the
    batch after every step (e.g. clamping to a domain).
    """
    x = np.tile(np.asarray(x0, dtype=float), (n_paths, 1))
    d = x.shape[1]
    labels = tuple(labels) if labels is not None else tuple(f"x{i}" for i in range(d))
    dt = grid.dt
    b0 = np.asarray(diffusion(x, grid.t[0]), dtype=float)
    if b0.shape[:2] != (n_paths, d) or b0.ndim != 3:
        raise ValueError(f"diffusion must return shape (n_paths, {d}, m), got {b0.shape}")
    m = b0.shape[2]
    dw = as_seed(seed).generator().standard_normal((n_paths, grid.n_steps, m)) * np.sqrt(dt)[None, :, None]

    out = np.empty((n_paths, len(grid), d))
    out[:, 0] = x
    b = b0
    for k in range(grid.n_steps):
        t = grid.t[k]
        if k:
            b = np.asarray(diffusion(x, t), dtype=float)
        x = x + np.asarray(drift(x, t), dtype=float) * dt[k] + np.einsum("pdm,pm->pd", b, dw[:, k])
        if project is not None:
            x = project(x)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite state in Euler-Maruyama", step=k + 1)
        out[:, k + 1] = x
    return SimPath(grid, out, labels)


# --------------------------------------------------------------------------- GBM


def simulate_gbm(p: GbmParams, grid: TimeGrid, seed: int | RngSeed | None = None, n_paths: int = 1) -> SimPath:
    """Exact log-space scheme; paths are strictly positive."""
    z = as_seed(seed).generator().standard_normal((n_paths, grid.n_steps))
    w = np.zeros((n_paths, len(grid)))
    np.cumsum(z * np.sqrt(grid.dt), axis=1, out=w[:, 1:])
    elapsed = grid.t - grid.t[0]
    log_s = (p.mu - 0.5 * p.sigma**2) * elapsed + p.sigma * w
    return SimPath(grid, (p.s0 * np.exp(log_s))[:, :, None], ("S",))


# --------------------------------------------------------------------------- Heston


def _heston_loop(s0, v0, mu, kappa, theta, xi, rho, dt, z1, z2):
    n_paths, n_steps = z1.shape
    s = np.empty((n_paths, n_steps + 1))
    v = np.empty((n_paths, n_steps + 1))
    rho_c = math.sqrt(1.0 - rho * rho)
    for i in range(n_paths):
        log_s = math.log(s0)
        vt = v0
        s[i, 0] = s0
        v[i, 0] = v0
        for k in range(n_steps):
            vp = vt if vt > 0.0 else 0.0
            sq = math.sqrt(vp * dt[k])
            dw_v = sq * z1[i, k]
            dw_s = sq * (rho * z1[i, k] + rho_c * z2[i, k])
            log_s += (mu - 0.5 * vp) * dt[k] + dw_s
            vt = vt + kappa * (theta - vp) * dt[k] + xi * dw_v
            s[i, k + 1] = math.exp(log_s)
            v[i, k + 1] = vt if vt > 0.0 else 0.0
    return s, v


def _heston_numpy(s0, v0, mu, kappa, theta, xi, rho, dt, z1, z2):
    n_paths, n_steps = z1.shape
    log_s = np.zeros((n_paths, n_steps + 1))
    log_s[:, 0] = math.log(s0)
    v = np.empty((n_paths, n_steps + 1))
    v[:, 0] = v0
    vt = np.full(n_paths, float(v0))
    rho_c = math.sqrt(1.0 - rho * rho)
    for k in range(n_steps):
        vp = np.maximum(vt, 0.0)
        sq = np.sqrt(vp * dt[k])
        dw_v = sq * z1[:, k]
        dw_s = sq * (rho * z1[:, k] + rho_c * z2[:, k])
        log_s[:, k + 1] = log_s[:, k] + (mu - 0.5 * vp) * dt[k] + dw_s
        vt = vt + kappa * (theta - vp) * dt[k] + xi * dw_v
        v[:, k + 1] = np.maximum(vt, 0.0)
    return np.exp(log_s), v


heston_kernel_numba = njit(_heston_loop)
heston_kernel_numpy = _heston_numpy
heston_kernel = select(heston_kernel_numba, heston_kernel_numpy)


def simulate_heston(p: HestonParams, grid: TimeGrid, seed: int | RngSeed | None = None, n_paths: int = 1) -> SimPath:
    """Full-truncation Euler for the variance, log-Euler for the price.

    The latent variance may go negative between steps; only ``max(v, 0)``
    enters drift and diffusion and the reported ``v`` is truncated at zero.
    """
    z = as_seed(seed).generator().standard_normal((n_paths, grid.n_steps, 2))
    s, v = heston_kernel(
        float(p.s0), float(p.v0), float(p.mu), float(p.kappa), float(p.theta), float(p.xi), float(p.rho),
        np.ascontiguousarray(grid.dt), np.ascontiguousarray(z[:, :, 0]), np.ascontiguousarray(z[:, :, 1]),
    )
    return SimPath(grid, np.stack([s, v], axis=-1), ("S", "v"))


# --------------------------------------------------------------------------- fBm


def fbm_covariance(s, t, hurst: float):
    """Cov(B_s, B_t) = (t^2H + s^2H - |t - s|^2H) / 2."""
    if not 0.0 < hurst < 1.0:
        raise ValueError("Hurst index must lie in (0, 1)")
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("fBm covariance is defined for nonnegative times")
    h2 = 2.0 * hurst
    out = 0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2)
    return float(out) if out.ndim == 0 else out


def sample_fbm(
    p: FbmParams,
    grid: TimeGrid,
    seed: int | RngSeed | None = None,
    n_paths: int = 1,
    max_points: int = FBM_MAX_POINTS,
) -> SimPath:
    """Exact Gaussian sampling through a Cholesky factor of the dense covariance."""
    if len(grid) > max_points:
        raise ValueError(f"grid has {len(grid)} points; dense fBm sampling is capped at {max_points}")
    if grid.t[0] < 0:
        raise ValueError("fBm grid must start at t >= 0")
    t = grid.t
    free = t > 0
    tf = t[free]
    cov = fbm_covariance(tf[:, None], tf[None, :], p.hurst)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(cov)[0])
        raise NumericalError(f"fBm covariance is not positive definite (smallest eigenvalue {smallest:.3e})") from None
    z = as_seed(seed).generator().standard_normal((n_paths, tf.size))
    b = np.zeros((n_paths, len(grid)))
    b[:, free] = p.scale * (z @ chol.T)
    return SimPath(grid, b[:, :, None], ("B",))


# --------------------------------------------------------------------------- gamma / VG


def _gamma_increments(nu: float, grid: TimeGrid, rng: np.random.Generator, n_paths: int) -> np.ndarray:
    dt = grid.dt
    return rng.gamma(shape=np.broadcast_to(dt / nu, (n_paths, dt.size)), scale=nu)


def gamma_subordinator(nu: float, grid: TimeGrid, seed: int | RngSeed | None = None, n_paths: int = 1) -> SimPath:
    """Gamma process with E[dG] = dt and Var[dG] = nu * dt, started at 0."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    dg = _gamma_increments(nu, grid, as_seed(seed).generator(), n_paths)
    g = np.zeros((n_paths, len(grid)))
    np.cumsum(dg, axis=1, out=g[:, 1:])
    return SimPath(grid, g[:, :, None], ("G",))


def simulate_vg(p: VgParams, grid: TimeGrid, seed: int | RngSeed | None = None, n_paths: int = 1) -> SimPath:
    """X = theta * G + sigma * W(G) with W sampled on the random clock G.

    States are ``("X", "G")``.  Gamma and Gaussian draws come from separate
    generator components so each stays path-major.
    """
    seed = as_seed(seed)
    dg = _gamma_increments(p.nu, grid, seed.generator(0), n_paths)
    z = seed.generator(1).standard_normal(dg.shape)
    g = np.zeros((n_paths, len(grid)))
    np.cumsum(dg, axis=1, out=g[:, 1:])
    wg = np.zeros_like(g)
    np.cumsum(np.sqrt(dg) * z, axis=1, out=wg[:, 1:])
    x = p.theta * g + p.sigma * wg
    return SimPath(grid, np.stack([x, g], axis=-1), ("X", "G"))
