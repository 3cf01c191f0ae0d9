"""Price ingestion, log-returns, rolling volatility and date-range splits."""
from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stochlab.errors import DataError

DATE_COL = "date"
PRICE_COL = "adj_close"
_MISSING = {"", "na", "nan", "null", "none"}


def _as_dates(values) -> np.ndarray:
    out = np.asarray(values, dtype="datetime64[D]")
    out.setflags(write=False)
    return out


def _frozen(values) -> np.ndarray:
    out = np.array(values, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PriceSeries:
    ticker: str
    timestamps: np.ndarray
    prices: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        ts = _as_dates(self.timestamps)
        px = _frozen(self.prices)
        if ts.shape != px.shape or ts.ndim != 1:
            raise DataError("timestamps and prices must be 1-D and the same length")
        if ts.size > 1 and np.any(np.diff(ts) <= np.timedelta64(0, "D")):
            raise DataError("timestamps must be strictly increasing without duplicates")
        if np.any(~np.isfinite(px)) or np.any(px <= 0):
            raise DataError("prices must be finite and positive")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "prices", px)

    def __len__(self) -> int:
        return self.prices.size

    def between(self, start, end) -> "PriceSeries":
        """Rows with ``start <= date <= end``."""
        mask = (self.timestamps >= np.datetime64(start, "D")) & (self.timestamps <= np.datetime64(end, "D"))
        return PriceSeries(self.ticker, self.timestamps[mask], self.prices[mask])


@dataclass(frozen=True)
class ReturnSeries:
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _as_dates(self.timestamps))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.timestamps.shape != self.values.shape:
            raise DataError("timestamps and values must be the same length")
        if not np.all(np.isfinite(self.values)):
            raise DataError("returns must be finite")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class VolatilitySeries:
    timestamps: np.ndarray
    values: np.ndarray
    window: int
    annualization_factor: float

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _as_dates(self.timestamps))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.timestamps.shape != self.values.shape:
            raise DataError("timestamps and values must be the same length")

    def __len__(self) -> int:
        return self.values.size


# --------------------------------------------------------------------------- CSV


def parse_date(text: str) -> np.datetime64:
    try:
        return np.datetime64(dt.date.fromisoformat(text.strip()[:10]), "D")
    except ValueError:
        raise DataError(f"unparseable date {text!r}") from None


def read_csv_text(
    text: str,
    date_col: str = DATE_COL,
    price_col: str = PRICE_COL,
    ticker: str = "",
    source: str = "<text>",
) -> PriceSeries:
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    for col in (date_col, price_col):
        if col not in header:
            raise DataError(f"{source}: required column {col!r} not found (have {header})")
    dates, prices = [], []
    dropped = 0
    for lineno, row in enumerate(reader, start=2):
        raw = (row.get(price_col) or "").strip()
        if raw.lower() in _MISSING:
            dropped += 1
            continue
        try:
            value = float(raw)
        except ValueError:
            raise DataError(f"{source}:{lineno}: price {raw!r} is not a number") from None
        if not (math.isfinite(value) and value > 0):
            dropped += 1
            continue
        dates.append(parse_date(row[date_col] or ""))
        prices.append(value)
    if len(prices) < 2:
        raise DataError(f"{source}: fewer than 2 valid price rows")
    order = np.argsort(np.array(dates, dtype="datetime64[D]"), kind="stable")
    dates = np.array(dates, dtype="datetime64[D]")[order]
    if np.any(np.diff(dates) == np.timedelta64(0, "D")):
        raise DataError(f"{source}: duplicate dates")
    return PriceSeries(ticker, dates, np.array(prices)[order], dropped)


def load_csv(
    path: str | Path,
    date_col: str = DATE_COL,
    price_col: str = PRICE_COL,
    ticker: str | None = None,
) -> PriceSeries:
    """Read a price CSV; rows with missing or nonpositive prices are dropped and counted."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    return read_csv_text(text, date_col, price_col, ticker if ticker is not None else path.stem, str(path))


def write_csv(p: PriceSeries, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((DATE_COL, PRICE_COL))
        for d, v in zip(p.timestamps, p.prices):
            w.writerow((str(d), repr(float(v))))


# --------------------------------------------------------------------------- transforms


def log_returns(p: PriceSeries) -> ReturnSeries:
    if len(p) < 2:
        raise DataError("need at least 2 prices for returns")
    return ReturnSeries(p.timestamps[1:], np.log(p.prices[1:] / p.prices[:-1]))


def rolling_volatility(r: ReturnSeries, window: int = 30, annualization: float = 252.0) -> VolatilitySeries:
    """Sample standard deviation (ddof=1) over trailing windows, times sqrt(annualization).

    Entry ``i`` covers returns ``i .. i+window-1`` and is stamped with the
    date of the last of them.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    if not annualization > 0:
        raise ValueError("annualization factor must be positive")
    if len(r) < window:
        raise DataError(f"window {window} is longer than the return series ({len(r)})")
    win = np.lib.stride_tricks.sliding_window_view(r.values, window)
    sd = win.std(axis=1, ddof=1)
    return VolatilitySeries(r.timestamps[window - 1 :], sd * math.sqrt(annualization), window, float(annualization))


@dataclass(frozen=True)
class DateRange:
    start: np.datetime64
    end: np.datetime64

    def __post_init__(self):
        object.__setattr__(self, "start", np.datetime64(self.start, "D"))
        object.__setattr__(self, "end", np.datetime64(self.end, "D"))
        if self.end < self.start:
            raise ValueError(f"range end {self.end} precedes start {self.start}")

    @classmethod
    def parse(cls, text: str) -> "DateRange":
        """Parse ``YYYY-MM-DD..YYYY-MM-DD`` (both ends inclusive)."""
        if ".." not in text:
            raise ValueError(f"date range {text!r} must look like START..END")
        a, b = text.split("..", 1)
        return cls(parse_date(a), parse_date(b))

    def __str__(self) -> str:
        return f"{self.start}..{self.end}"


def split(p: PriceSeries, train: DateRange, test: DateRange) -> tuple[PriceSeries, PriceSeries]:
    if not train.end < test.start:
        raise ValueError("train range must end before the test range starts")
    a = p.between(train.start, train.end)
    b = p.between(test.start, test.end)
    if len(a) == 0:
        raise DataError(f"no rows in train range {train}")
    if len(b) == 0:
        raise DataError(f"no rows in test range {test}")
    return a, b
