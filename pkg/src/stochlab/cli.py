"""Command-line interface: ``stochlab <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from stochlab import report as rpt
from stochlab.calibration import CalibrationResult, calibrate_reaction_model
from stochlab.engine import (
    FbmParams,
    GbmParams,
    HestonParams,
    RngSeed,
    SimPath,
    TimeGrid,
    VgParams,
    sample_fbm,
    simulate_gbm,
    simulate_heston,
    simulate_vg,
)
from stochlab.errors import DataError, NumericalError
from stochlab.estimators import fit_heston, fit_vg
from stochlab.garch import GarchParams, fit_garch, simulate_garch
from stochlab.marketdata import (
    DateRange,
    PriceSeries,
    load_csv,
    log_returns,
    read_csv_text,
    rolling_volatility,
    write_csv,
)
from stochlab.reaction import MarketState, RateConstants, classify, simulate_deterministic, simulate_stochastic
from stochlab.stable import StableParams, fit_stable_mle, stable_sample

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
CAL_MODELS = ("reaction", "stable", "garch", "heston", "vg")
SIM_MODELS = ("gbm", "heston", "fbm", "vg", "stable", "garch", "reaction")

# Defaults live here rather than in argparse so a config file can sit between them and the flags.
DEFAULTS = {
    "seed": 0,
    "out_dir": None,
    "date_col": "date",
    "price_col": "adj_close",
    "ticker": None,
    "data": None,
    "alpha": 1.5,
    "window": 30,
    "annualization": 252.0,
    "likelihood": "paper",
    "optimizer": "descent",
    "euler": False,
    "ensemble": 0,
    "format": "both",
    "steps": 252,
    "horizon": None,
    "n_paths": 1,
    "s0": None,
    "v0": None,
    "noise": 0.0,
    "output": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _date_range(text: str) -> DateRange:
    try:
        return DateRange.parse(text)
    except (ValueError, DataError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _rates(text: str) -> RateConstants:
    try:
        vals = [float(v) for v in text.split(",")]
        return RateConstants.of(vals)
    except (ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(f"expected k1,k2,k3,k4: {exc}") from None


def _flag(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = _Parser(add_help=False, argument_default=S)
    common.add_argument("--seed", type=int, help="RNG seed (default 0)")
    common.add_argument("--config", help="flat key=value file; flags override it")
    common.add_argument("--out-dir", dest="out_dir", help="result store (default $STOCHLAB_OUT_DIR or .)")

    data = _Parser(add_help=False, argument_default=S)
    data.add_argument("--data", help="price CSV (otherwise <out-dir>/<TICKER>.csv)")
    data.add_argument("--ticker", help="ticker label / stored series name")
    data.add_argument("--date-col", dest="date_col")
    data.add_argument("--price-col", dest="price_col")

    fit = _Parser(add_help=False, argument_default=S)
    fit.add_argument("--alpha", type=float, help="stable index for the stable model (default 1.5)")
    fit.add_argument("--window", type=int, help="rolling-volatility window (default 30)")
    fit.add_argument("--likelihood", choices=("paper", "corrected"))
    fit.add_argument("--optimizer", choices=("descent", "simplex"))

    p = _Parser(prog="stochlab", description="Stochastic market-dynamics laboratory.", parents=[common],
                argument_default=S)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common, data], argument_default=S, help="validate a CSV into the store")
    s.add_argument("source", help="input CSV path")

    s = sub.add_parser("fetch", parents=[common, data], argument_default=S, help="download a CSV from a URL")
    s.add_argument("url")

    s = sub.add_parser("calibrate", parents=[common, data, fit], argument_default=S, help="fit a model")
    s.add_argument("--model", choices=CAL_MODELS)
    s.add_argument("--train", type=_date_range, help="START..END (default: whole series)")

    s = sub.add_parser("simulate", parents=[common], argument_default=S, help="simulate paths")
    s.add_argument("--model", choices=SIM_MODELS)
    s.add_argument("--params", help="JSON parameter file (a calibration result works)")
    s.add_argument("--steps", type=int)
    s.add_argument("--horizon", type=float, help="time span (default steps * dt from the params file, else 1)")
    s.add_argument("--n-paths", dest="n_paths", type=int)
    s.add_argument("--s0", type=float)
    s.add_argument("--v0", type=float)
    s.add_argument("--noise", type=float, help="reaction-model noise scale (0 = deterministic)")
    s.add_argument("--euler", action="store_const", const=True)
    s.add_argument("--output", help="CSV path (default <out-dir>/<model>_path.csv)")

    s = sub.add_parser("equilibrium", parents=[common], argument_default=S, help="equilibria and stability")
    s.add_argument("--k", type=_rates, help="k1,k2,k3,k4")
    s.add_argument("--variant", choices=("bilinear", "linear"))

    s = sub.add_parser("backtest", parents=[common, data, fit], argument_default=S, help="train/test backtest")
    s.add_argument("--model", choices=rpt.MODELS)
    s.add_argument("--train", type=_date_range)
    s.add_argument("--test", type=_date_range)
    s.add_argument("--euler", action="store_const", const=True)
    s.add_argument("--ensemble", type=int, help="extra paths for a mean and 5-95%% band")
    s.add_argument("--format", choices=("csv", "svg", "both", "none"))

    s = sub.add_parser("report", parents=[common], argument_default=S, help="render stored results")
    s.add_argument("--format", choices=("csv", "svg", "both", "none"))
    return p


# --------------------------------------------------------------------------- options


def read_config(path) -> dict:
    opts = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (t.strip() for t in line.split("=", 1))
        opts[key.lstrip("-").replace("-", "_")] = value
    return opts


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        return action.choices[command]


def _convert(parser, key, value):
    for action in parser._actions:
        if action.dest == key:
            if action.const is True:
                return _flag(value)
            conv = action.type or str
            try:
                out = conv(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config {key}: {exc}") from None
            if action.choices is not None and out not in action.choices:
                raise UsageError(f"config {key}: {out!r} is not one of {list(action.choices)}")
            return out
    raise UsageError(f"config: unknown option {key!r} for this command")


def resolve(argv) -> tuple[str, dict]:
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    command = ns.pop("command", None)
    if command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("stochlab: error: a command is required")
    opts = dict(DEFAULTS)
    opts["out_dir"] = os.environ.get("STOCHLAB_OUT_DIR") or "."
    if "config" in ns:
        sp = _subparser(parser, command)
        for key, value in read_config(ns.pop("config")).items():
            opts[key] = _convert(sp, key, value)
    opts.update(ns)
    return command, opts


def _require(opts, *names):
    missing = [n for n in names if opts.get(n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


# --------------------------------------------------------------------------- helpers


def _out_dir(opts) -> Path:
    d = Path(opts["out_dir"])
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {d}: {exc.strerror or exc}") from None
    return d


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path


def _load_prices(opts) -> PriceSeries:
    if opts.get("data"):
        return load_csv(opts["data"], opts["date_col"], opts["price_col"], opts.get("ticker"))
    if opts.get("ticker"):
        return load_csv(_out_dir(opts) / f"{opts['ticker']}.csv", "date", "adj_close", opts["ticker"])
    raise UsageError("give --data FILE or --ticker NAME (stored by ingest/fetch)")


def _slice(p: PriceSeries, rng: DateRange | None) -> PriceSeries:
    if rng is None:
        return p
    out = p.between(rng.start, rng.end)
    if len(out) < 2:
        raise DataError(f"range {rng} holds fewer than 2 prices")
    return out


def _label(p: PriceSeries) -> str:
    return p.ticker or "series"


# --------------------------------------------------------------------------- commands


def cmd_ingest(opts) -> int:
    p = load_csv(opts["source"], opts["date_col"], opts["price_col"], opts.get("ticker"))
    return _store(p, opts)


def _store(p: PriceSeries, opts) -> int:
    if not p.ticker:
        raise UsageError("a --ticker is needed to name the stored series")
    dest = _out_dir(opts) / f"{p.ticker}.csv"
    try:
        write_csv(p, dest)
    except OSError as exc:
        raise DataError(f"cannot write {dest}: {exc.strerror or exc}") from None
    print(json.dumps({"ticker": p.ticker, "rows": len(p), "dropped": p.dropped,
                      "start": str(p.timestamps[0]), "end": str(p.timestamps[-1]), "path": str(dest)},
                     sort_keys=True))
    return EXIT_OK


def cmd_fetch(opts) -> int:
    _require(opts, "ticker")
    try:
        with urllib.request.urlopen(opts["url"], timeout=30) as resp:
            text = resp.read().decode("utf-8")
    except (urllib.error.URLError, OSError, UnicodeDecodeError, ValueError) as exc:
        raise DataError(f"fetch {opts['url']}: {exc}") from None
    p = read_csv_text(text, opts["date_col"], opts["price_col"], opts["ticker"], opts["url"])
    return _store(p, opts)


def calibrate(prices: PriceSeries, model: str, opts) -> CalibrationResult:
    """Fit ``model`` to a price series; all models return a ``CalibrationResult``."""
    if model == "reaction":
        vol = rolling_volatility(log_returns(prices), opts["window"], opts["annualization"])
        return calibrate_reaction_model(prices, vol, likelihood=opts["likelihood"], optimizer=opts["optimizer"])
    if model == "heston":
        return fit_heston(prices, 1.0 / opts["annualization"], opts["window"])
    r = log_returns(prices).values
    if model == "vg":
        return fit_vg(r)
    if model == "stable":
        f = fit_stable_mle(r, alpha=opts["alpha"])
        return CalibrationResult("stable", ("theta", "sigma"), (f.theta, f.sigma), -f.loglik,
                                 f.result.iterations, f.converged, -f.start_loglik, {"alpha": f.alpha, "dt": 1.0})
    if model == "garch":
        g = fit_garch(r)
        names = ("omega", *[f"alpha{i + 1}" for i in range(g.params.q)],
                 *[f"beta{i + 1}" for i in range(g.params.p)], "mean")
        values = (g.params.omega, *g.params.alphas, *g.params.betas, g.params.mean)
        return CalibrationResult("garch", names, values, -g.loglik, g.result.iterations, g.converged,
                                 -g.start_loglik, {"p": g.params.p, "q": g.params.q})
    raise UsageError(f"unknown model {model!r}")


def cmd_calibrate(opts) -> int:
    _require(opts, "model")
    prices = _slice(_load_prices(opts), opts.get("train"))
    try:
        res = calibrate(prices, opts["model"], opts)
    except (DataError, NumericalError) as exc:
        raise type(exc)(f"{opts['model']} calibration on {_label(prices)}: {exc}") from exc
    extra = dict(res.extra, ticker=_label(prices), start=str(prices.timestamps[0]), end=str(prices.timestamps[-1]))
    res = CalibrationResult(res.model, res.names, res.values, res.objective, res.iterations, res.converged,
                            res.start_objective, extra)
    text = res.to_json() + "\n"
    _write(_out_dir(opts) / f"{_label(prices)}_{res.model}_calibration.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def _read_params(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise DataError(f"{path}: expected a JSON object")
    flat = dict(d.get("extra", {}))
    flat.update(d.get("params", d))
    return flat


def simulate(model: str, prm: dict, opts) -> SimPath:
    steps, n_paths = opts["steps"], opts["n_paths"]
    # calibrated parameters carry their time step; otherwise the horizon defaults to 1
    horizon = opts["horizon"] if opts["horizon"] is not None else steps * float(prm.get("dt", 1.0 / steps))
    seed = RngSeed(opts["seed"])
    grid = TimeGrid.uniform(horizon, steps)

    def get(name, default=None):
        v = opts.get(name) if opts.get(name) is not None else prm.get(name, default)
        if v is None:
            raise DataError(f"parameter {name!r} missing from the params file")
        return v

    if model == "gbm":
        return simulate_gbm(GbmParams(get("mu"), get("sigma"), get("s0", 100.0)), grid, seed, n_paths)
    if model == "heston":
        hp = HestonParams(get("mu"), get("kappa"), get("theta"), get("xi"), get("rho"),
                          get("s0", 100.0), get("v0", prm.get("theta")))
        return simulate_heston(hp, grid, seed, n_paths)
    if model == "fbm":
        return sample_fbm(FbmParams(get("hurst"), prm.get("scale", 1.0)), grid, seed, n_paths)
    if model == "vg":
        return simulate_vg(VgParams(get("theta"), get("sigma"), get("nu")), grid, seed, n_paths)
    if model == "stable":
        p = StableParams(get("alpha", 1.5), 0.0, 0.0, 1.0)
        dt = grid.dt
        draws = np.stack([stable_sample(steps, p, seed.child(i)) for i in range(n_paths)])
        x = np.cumsum(get("theta") * dt + get("sigma") * dt ** (1.0 / p.alpha) * draws, axis=1)
        x = np.concatenate((np.zeros((n_paths, 1)), x), axis=1)
        return SimPath(grid, x[:, :, None], ("X",))
    if model == "garch":
        gp = GarchParams(
            get("omega"),
            tuple(prm.get("alphas", [prm[k] for k in sorted(prm) if k.startswith("alpha") and k[5:].isdigit()])),
            tuple(prm.get("betas", [prm[k] for k in sorted(prm) if k.startswith("beta") and k[4:].isdigit()])),
            prm.get("mean", 0.0),
        )
        paths = [simulate_garch(gp, steps, seed.child(i)) for i in range(n_paths)]
        states = np.stack([np.column_stack((np.concatenate(([0.0], r)), np.concatenate(([gp.long_run_variance], s2))))
                           for r, s2 in paths])
        return SimPath(TimeGrid(np.arange(steps + 1, dtype=float)), states, ("r", "sigma2"))
    if model == "reaction":
        k = RateConstants(get("k1"), get("k2"), get("k3"), get("k4"))
        x0 = MarketState(get("s0"), get("v0"))
        if opts["noise"] > 0:
            return simulate_stochastic(x0, k, grid, opts["noise"], seed, n_paths)
        return simulate_deterministic(x0, k, grid, "euler" if opts["euler"] else "rk4")
    raise UsageError(f"unknown model {model!r}")


def cmd_simulate(opts) -> int:
    _require(opts, "model", "params")
    if opts["steps"] < 1 or opts["n_paths"] < 1 or (opts["horizon"] is not None and not opts["horizon"] > 0):
        raise UsageError("--steps, --n-paths and --horizon must be positive")
    try:
        path = simulate(opts["model"], _read_params(opts["params"]), opts)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{opts['model']} parameters: {exc}") from exc
    dest = Path(opts["output"]) if opts.get("output") else _out_dir(opts) / f"{opts['model']}_path.csv"
    # one file per path; extra paths get a numeric suffix
    files = [dest] + [dest.with_name(f"{dest.stem}_{i}{dest.suffix}") for i in range(1, path.n_paths)]
    try:
        for i, f in enumerate(files):
            path.to_csv(f, i)
    except OSError as exc:
        raise DataError(f"cannot write {dest}: {exc.strerror or exc}") from None
    print(json.dumps({"model": opts["model"], "paths": path.n_paths, "points": len(path.grid),
                      "labels": list(path.labels), "files": [str(f) for f in files]}, sort_keys=True))
    return EXIT_OK


def cmd_equilibrium(opts) -> int:
    _require(opts, "k")
    rep = classify(opts["k"], opts.get("variant", "bilinear"))
    text = json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n"
    _write(_out_dir(opts) / "equilibrium.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def _emit(report: rpt.BacktestReport, out: Path, fmt: str) -> list[Path]:
    formats = {"both": ("csv", "svg"), "none": ()}.get(fmt, (fmt,))
    base = f"{report.ticker or 'series'}_{report.model}"
    return [rpt.emit_plot(report, f, out / f"{base}_{t.name}.{f}", t.name) for t in report.tracks for f in formats]


def cmd_backtest(opts) -> int:
    _require(opts, "model", "train", "test")
    prices = _load_prices(opts)
    report = rpt.backtest(
        prices, opts["model"], opts["train"], opts["test"], opts["seed"],
        alpha=opts["alpha"], window=opts["window"], annualization=opts["annualization"],
        euler=bool(opts["euler"]), optimizer=opts["optimizer"], likelihood=opts["likelihood"],
        ensemble=opts["ensemble"],
    )
    out = _out_dir(opts)
    _write(out / f"{report.ticker or 'series'}_{report.model}_backtest.json", report.to_json())
    files = _emit(report, out, opts["format"])
    summary = {"ticker": report.ticker, "model": report.model, "primary": report.primary,
               "r_squared": {t.name: t.r_squared for t in report.tracks}, "files": [str(f) for f in files]}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_report(opts) -> int:
    out = _out_dir(opts)
    cals, reps = [], []
    try:
        for f in sorted(out.glob("*_calibration.json")):
            cals.append(CalibrationResult.from_dict(json.loads(f.read_text())))
        for f in sorted(out.glob("*_backtest.json")):
            reps.append(rpt.BacktestReport.from_dict(json.loads(f.read_text())))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed stored result: {exc}") from None
    if not cals and not reps:
        raise DataError(f"no stored results in {out}")
    parts = ["# Results\n"]
    if cals:
        parts += ["\n## Calibrated parameters\n\n", rpt.parameter_table(cals)]
    if reps:
        parts += ["\n## Backtest R²\n\n", rpt.r2_table(reps)]
        notes = sorted({n for r in reps for n in r.notes})
        parts += [f"\n* {n}\n" for n in notes]
        for r in reps:
            _emit(r, out, opts.get("format", "both"))
    text = "".join(parts)
    _write(out / "report.md", text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "fetch": cmd_fetch,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "equilibrium": cmd_equilibrium,
    "backtest": cmd_backtest,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        command, opts = resolve(sys.argv[1:] if argv is None else list(argv))
        return COMMANDS[command](opts)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"stochlab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"stochlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"stochlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
