"""Backtests, R² and plot output (CSV and a minimal SVG line chart)."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from stochlab.calibration import CalibrationResult, calibrate_reaction_model
from stochlab.engine import HestonParams, RngSeed, TimeGrid, VgParams, simulate_heston, simulate_vg
from stochlab.errors import DataError, StochLabError
from stochlab.estimators import fit_heston, fit_vg
from stochlab.garch import fit_garch, simulate_garch
from stochlab.marketdata import (
    DateRange,
    PriceSeries,
    ReturnSeries,
    VolatilitySeries,
    log_returns,
    rolling_volatility,
    split,
)
from stochlab.reaction import MarketState, RateConstants, simulate_deterministic
from stochlab.stable import fit_stable_mle, stable_sample

MODELS = ("reaction", "stable", "vg", "garch", "heston")
NEGATIVE_R2_NOTE = (
    "R² compares one seeded random path with the data; independent draws explain "
    "none of the realized variation, so values at or below zero are expected."
)


def r_squared(actual, predicted) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot (may be negative)."""
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if a.shape != p.shape or a.ndim != 1 or a.size == 0:
        raise ValueError("actual and predicted must be 1-D, nonempty and the same length")
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("actual series is constant; R² is undefined")
    return 1.0 - float(np.sum((a - p) ** 2)) / ss_tot


@dataclass(frozen=True)
class Track:
    """One aligned actual-vs-simulated series."""

    name: str
    timestamps: np.ndarray
    actual: np.ndarray
    simulated: np.ndarray
    band: dict = field(default_factory=dict)  # ensemble mean / lo / hi, when requested

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[D]")
        a = np.asarray(self.actual, dtype=float)
        s = np.asarray(self.simulated, dtype=float)
        if not (ts.shape == a.shape == s.shape) or a.ndim != 1:
            raise ValueError(f"track {self.name!r}: series must be 1-D and aligned")
        for k, v in self.band.items():
            if np.shape(v) != a.shape:
                raise ValueError(f"track {self.name!r}: band {k!r} is not aligned")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "actual", a)
        object.__setattr__(self, "simulated", s)
        object.__setattr__(self, "band", {k: np.asarray(v, dtype=float) for k, v in self.band.items()})

    @property
    def r_squared(self) -> float:
        return r_squared(self.actual, self.simulated)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "t": [str(t) for t in self.timestamps],
            "actual": self.actual.tolist(),
            "simulated": self.simulated.tolist(),
            "r_squared": self.r_squared,
        }
        if self.band:
            d["band"] = {k: v.tolist() for k, v in self.band.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Track":
        return cls(d["name"], d["t"], d["actual"], d["simulated"], d.get("band", {}))


@dataclass(frozen=True)
class BacktestReport:
    ticker: str
    model: str
    params: dict
    train_range: DateRange
    test_range: DateRange
    seed: int
    tracks: tuple[Track, ...]
    primary: str
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.tracks:
            raise ValueError("a report needs at least one track")
        if self.primary not in {t.name for t in self.tracks}:
            raise ValueError(f"primary track {self.primary!r} not among the tracks")

    def track(self, name: str | None = None) -> Track:
        name = name or self.primary
        for t in self.tracks:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def r_squared(self) -> float:
        return self.track().r_squared

    @property
    def series(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.track()
        return t.actual, t.simulated

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "model": self.model,
            "params": self.params,
            "train_range": str(self.train_range),
            "test_range": str(self.test_range),
            "seed": self.seed,
            "primary": self.primary,
            "r_squared": self.r_squared,
            "tracks": [t.to_dict() for t in self.tracks],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "BacktestReport":
        return cls(
            d["ticker"], d["model"], d["params"],
            DateRange.parse(d["train_range"]), DateRange.parse(d["test_range"]),
            int(d["seed"]), tuple(Track.from_dict(t) for t in d["tracks"]),
            d["primary"], tuple(d.get("notes", ())),
        )


# --------------------------------------------------------------------------- backtest


def _returns_in(r: ReturnSeries, rng: DateRange) -> ReturnSeries:
    mask = (r.timestamps >= rng.start) & (r.timestamps <= rng.end)
    return ReturnSeries(r.timestamps[mask], r.values[mask])


def _band(paths: np.ndarray) -> dict:
    return {
        "mean": paths.mean(axis=0),
        "lo": np.quantile(paths, 0.05, axis=0),
        "hi": np.quantile(paths, 0.95, axis=0),
    }


def _params_dict(fit: CalibrationResult) -> dict:
    return {**fit.params, **{k: v for k, v in fit.extra.items() if isinstance(v, (int, float)) and k != "dt"}}


def _return_tracks(test_r, draw, seed, ensemble) -> Track:
    """Track of actual vs generated returns; ``draw(n, rng_seed)`` makes one series."""
    n = len(test_r)
    sim = draw(n, RngSeed(seed, 0))
    band = _band(np.stack([draw(n, RngSeed(seed, i)) for i in range(1, ensemble + 1)])) if ensemble else {}
    return Track("returns", test_r.timestamps, test_r.values, sim, band)


def backtest(
    prices: PriceSeries,
    model: str,
    train: DateRange,
    test: DateRange,
    seed: int = 0,
    *,
    alpha: float = 1.5,
    window: int = 30,
    annualization: float = 252.0,
    euler: bool = False,
    optimizer: str = "descent",
    likelihood: str = "paper",
    ensemble: int = 0,
    vol: VolatilitySeries | None = None,
) -> BacktestReport:
    """Fit ``model`` on the train slice and compare one seeded path with the test slice.

    Returns and rolling volatility are computed on the full series before
    slicing, so the test slice starts with a defined volatility.  Return
    models (stable, vg, garch) are scored on returns; the reaction model on
    price and volatility tracks; Heston on price.  ``vol`` replaces the
    rolling volatility of the reaction model's V track.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {', '.join(MODELS)}")
    if ensemble < 0:
        raise ValueError("ensemble must be nonnegative")
    train_p, test_p = split(prices, train, test)
    r = log_returns(prices)
    train_r, test_r = _returns_in(r, train), _returns_in(r, test)
    if len(test_r) < 2:
        raise DataError(f"test range {test} has fewer than 2 returns")
    notes: list[str] = []
    try:
        if model == "stable":
            fit = fit_stable_mle(train_r.values, alpha=alpha)
            params = {"theta": fit.theta, "sigma": fit.sigma, "alpha": fit.alpha}
            track = _return_tracks(
                test_r, lambda n, s: stable_sample(n, fit.params, s), seed, ensemble
            )
            tracks, primary = (track,), "returns"
        elif model == "vg":
            fit = fit_vg(train_r.values)
            p = VgParams(*fit.values)
            params = fit.params

            def draw(n, s):
                return np.diff(simulate_vg(p, TimeGrid.uniform(float(n), n), s)["X"][0])

            tracks, primary = (_return_tracks(test_r, draw, seed, ensemble),), "returns"
        elif model == "garch":
            gfit = fit_garch(train_r.values)
            params = gfit.params.to_dict()
            params.pop("model")
            track = _return_tracks(
                test_r, lambda n, s: simulate_garch(gfit.params, n, s)[0], seed, ensemble
            )
            tracks, primary = (track,), "returns"
        elif model == "heston":
            dt = 1.0 / annualization
            fit = fit_heston(train_p, dt=dt, window=window)
            vals = fit.params
            hp = HestonParams(vals["mu"], vals["kappa"], vals["theta"], vals["xi"], vals["rho"],
                              float(test_p.prices[0]), vals["theta"])
            params = {**fit.params, "v0": hp.v0}
            n = len(test_p) - 1
            grid = TimeGrid.uniform(n * dt, n)
            sim = simulate_heston(hp, grid, RngSeed(seed, 0))["S"][0]
            band = _band(simulate_heston(hp, grid, RngSeed(seed, 1), n_paths=ensemble)["S"]) if ensemble else {}
            tracks, primary = (Track("price", test_p.timestamps, test_p.prices, sim, band),), "price"
        else:
            if vol is None:
                vol = rolling_volatility(r, window, annualization)
            fit = calibrate_reaction_model(
                train_p, vol, likelihood=likelihood, optimizer=optimizer
            )
            params = _params_dict(fit)
            tracks = _reaction_tracks(fit, test_p, vol, euler)
            primary = "price"
            if not fit.converged:
                notes.append(f"calibration stopped before convergence: {fit.extra.get('message', '')}")
    except StochLabError as exc:
        raise type(exc)(f"{model} backtest on {prices.ticker or 'series'}: {exc}") from exc
    report = BacktestReport(prices.ticker, model, params, train, test, int(seed), tracks, primary, ())
    if any(t.r_squared <= 0 for t in report.tracks):
        notes.append(NEGATIVE_R2_NOTE)
    return BacktestReport(prices.ticker, model, params, train, test, int(seed), tracks, primary, tuple(notes))


def _reaction_tracks(fit: CalibrationResult, test_p: PriceSeries, vol, euler: bool) -> tuple[Track, ...]:
    common, ip, iv = np.intersect1d(test_p.timestamps, vol.timestamps, return_indices=True)
    if common.size < 2:
        raise DataError("test range has fewer than 2 rows with a defined volatility")
    S, V = test_p.prices[ip], vol.values[iv]
    k = RateConstants.of(fit.values)
    grid = TimeGrid(np.arange(common.size, dtype=float))
    path = simulate_deterministic(MarketState(S[0], V[0]), k, grid, method="euler" if euler else "rk4")
    return (Track("price", common, S, path["S"][0]), Track("volatility", common, V, path["V"][0]))


# --------------------------------------------------------------------------- plots


def emit_plot(report: BacktestReport, fmt: str, path, track: str | None = None) -> Path:
    """Write one track as plot-ready CSV (t, actual, simulated) or an SVG line chart."""
    tr = report.track(track)
    if tr.actual.size == 0:
        raise ValueError("report series is empty")
    path = Path(path)
    if fmt == "csv":
        text = _plot_csv(tr)
    elif fmt == "svg":
        text = _plot_svg(tr, f"{report.ticker} {report.model}")
    else:
        raise ValueError("format must be 'csv' or 'svg'")
    try:
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def _plot_csv(tr: Track) -> str:
    rows = [["t", "actual", "simulated", *[f"ensemble_{k}" for k in tr.band]]]
    for i, t in enumerate(tr.timestamps):
        rows.append([str(t), repr(float(tr.actual[i])), repr(float(tr.simulated[i])),
                     *[repr(float(v[i])) for v in tr.band.values()]])
    return "".join(",".join(r) + "\n" for r in rows)


def read_plot_csv(path) -> dict[str, np.ndarray]:
    """Parse a plot CSV back into arrays (dates as datetime64)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {h: [r[i] for r in body] for i, h in enumerate(header)}
    return {h: np.array(v, dtype="datetime64[D]" if h == "t" else float) for h, v in cols.items()}


_W, _H, _M = 800, 400, 60


def _plot_svg(tr: Track, title: str) -> str:
    n = tr.actual.size
    ys = np.concatenate((tr.actual, tr.simulated))
    lo, hi = float(ys.min()), float(ys.max())
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0

    def px(i):
        return _M + (_W - 2 * _M) * (i / (n - 1) if n > 1 else 0.5)

    def py(y):
        return _H - _M - (_H - 2 * _M) * (y - lo) / (hi - lo)

    def points(y):
        return " ".join(f"{px(i):.2f},{py(v):.2f}" for i, v in enumerate(y))

    x0, x1, y0, y1 = _M, _W - _M, _H - _M, _M
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<title>{escape(title)}</title>',
        f'<text x="{_W / 2}" y="30" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{x0}" y="{y0 + 20}" font-size="11">{tr.timestamps[0]}</text>',
        f'<text x="{x1}" y="{y0 + 20}" font-size="11" text-anchor="end">{tr.timestamps[-1]}</text>',
        f'<text x="{x0 - 5}" y="{y0}" font-size="11" text-anchor="end">{lo:.4g}</text>',
        f'<text x="{x0 - 5}" y="{y1 + 4}" font-size="11" text-anchor="end">{hi:.4g}</text>',
        f'<text x="15" y="{_H / 2}" font-size="12" transform="rotate(-90 15 {_H / 2})">{escape(tr.name)}</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{points(tr.actual)}"/>',
        f'<polyline fill="none" stroke="#d62728" stroke-width="1.5" points="{points(tr.simulated)}"/>',
        f'<line x1="{x1 - 140}" y1="{y1}" x2="{x1 - 115}" y2="{y1}" stroke="#1f77b4" stroke-width="2"/>',
        f'<text x="{x1 - 110}" y="{y1 + 4}" font-size="12">Actual</text>',
        f'<line x1="{x1 - 140}" y1="{y1 + 18}" x2="{x1 - 115}" y2="{y1 + 18}" stroke="#d62728" stroke-width="2"/>',
        f'<text x="{x1 - 110}" y="{y1 + 22}" font-size="12">Simulated</text>',
        "</svg>",
    ]
    return "\n".join(lines) + "\n"


def parameter_table(results: list[CalibrationResult]) -> str:
    """Markdown table with one row per calibration result."""
    names: list[str] = []
    for r in results:
        names += [n for n in r.names if n not in names]
    head = "| model | " + " | ".join(names) + " | objective |"
    sep = "|" + "---|" * (len(names) + 2)
    rows = [head, sep]
    for r in results:
        p = r.params
        cells = [f"{p[n]:.6g}" if n in p else "" for n in names]
        obj = "" if r.objective is None else f"{r.objective:.6g}"
        rows.append(f"| {r.model} | " + " | ".join(cells) + f" | {obj} |")
    return "\n".join(rows) + "\n"


def r2_table(reports: list[BacktestReport]) -> str:
    rows = ["| ticker | model | track | R² |", "|---|---|---|---|"]
    for rep in reports:
        for t in rep.tracks:
            rows.append(f"| {rep.ticker} | {rep.model} | {t.name} | {t.r_squared:.4f} |")
    return "\n".join(rows) + "\n"
