"""Regenerate the bundled synthetic price fixtures.

Run from the repository root:  python3 scripts/make_fixtures.py
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from stochlab.engine import RngSeed
from stochlab.stable import StableParams, stable_sample

ROOT = Path(__file__).resolve().parents[1]

# Daily log-return law of the "AAPL-like" series; the seed is fixed once and never tuned.
AAPL_LIKE = StableParams(alpha=1.5, beta=0.0, loc=0.001179, scale=0.009527)
AAPL_SEED = 2012
START, END = "2012-01-03", "2024-01-01"
S0 = 14.69


def business_days(start: str, end: str) -> np.ndarray:
    days = np.arange(np.datetime64(start), np.datetime64(end))
    return days[np.is_busday(days)]


def aapl_like() -> tuple[np.ndarray, np.ndarray]:
    dates = business_days(START, END)
    r = stable_sample(dates.size - 1, AAPL_LIKE, RngSeed(AAPL_SEED))
    prices = S0 * np.exp(np.concatenate(([0.0], np.cumsum(r))))
    return dates, prices


def write(path: Path, dates, prices) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "adj_close"))
        for d, p in zip(dates, prices):
            w.writerow((str(d), repr(float(p))))


def main() -> None:
    out = ROOT / "src" / "stochlab" / "data" / "aapl_like.csv"
    write(out, *aapl_like())
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
