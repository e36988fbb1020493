"""Trade-file parsing, session filtering, resampling, jump truncation.

Raw per-symbol-per-day CSVs (`timestamp,price,venue`) become uniform
1-second log-price grids over the 09:30-16:00 session. Returns larger
than the threshold beta*(T/n)^alpha in absolute value are censored to
zero and the level path is rebuilt by cumulative summation.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, FormatError, NoDataError
from .timegrids import DAY_T, SESSION_CLOSE_NS, SESSION_NS, SESSION_OPEN_NS

DEFAULT_N = 23400
DEFAULT_BETA = 0.5
DEFAULT_ALPHA = 0.5

_EXPECTED_HEADER = ["timestamp", "price", "venue"]

# HH:MM:SS with optional fractional seconds, optionally preceded by a date.
_TIME_RE = re.compile(
    r"^(?:\d{4}-\d{2}-\d{2}[T ])?(\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?$"
)


@dataclass
class TickSeries:
    """Ordered trade records for one symbol on one day.

    Timestamps are integer nanoseconds since midnight exchange time;
    prices are strictly positive.
    """

    symbol: str
    timestamps: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    prices: np.ndarray = field(default_factory=lambda: np.empty(0, np.float64))
    venues: np.ndarray = field(default_factory=lambda: np.empty(0, "U1"))
    n_skipped: int = 0

    def __len__(self) -> int:
        return len(self.timestamps)


@dataclass
class LogPriceGrid:
    """n+1 log-prices on the uniform partition of the 6.5-hour session."""

    symbol: str
    day: dt.date
    values: np.ndarray
    n: int = DEFAULT_N
    T: float = DAY_T

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.values) != self.n + 1:
            raise ValueError(
                f"grid for {self.symbol} {self.day} has {len(self.values)} "
                f"values, expected n+1 = {self.n + 1}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"non-finite log-price in grid {self.symbol} {self.day}")

    def returns(self) -> np.ndarray:
        return np.diff(self.values)


def _parse_timestamp(raw: str) -> int:
    """Nanoseconds since midnight from integer-ns or ISO-8601 text."""
    s = raw.strip()
    if not s:
        raise ValueError("empty timestamp")
    try:
        return int(s)
    except ValueError:
        pass
    m = _TIME_RE.match(s)
    if m is None:
        raise ValueError(f"unparseable timestamp {raw!r}")
    hh, mm, ss = int(m.group(1)), int(m.group(2)), int(m.group(3))
    if hh > 23 or mm > 59 or ss > 60:
        raise ValueError(f"out-of-range time {raw!r}")
    frac = m.group(4) or ""
    frac_ns = int(frac.ljust(9, "0")) if frac else 0
    return ((hh * 3600 + mm * 60 + ss) * 10**9) + frac_ns


def parse_ticks(raw_bytes: bytes | str, symbol: str) -> TickSeries:
    """Parse a `timestamp,price,venue` CSV into a sorted TickSeries.

    Malformed rows are skipped and counted. A file with a valid header
    and no data rows yields an empty series; data rows that are all
    malformed raise EmptyInputError.
    """
    text = raw_bytes.decode("utf-8", errors="replace") if isinstance(raw_bytes, bytes) else raw_bytes
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{symbol}: no header line") from None
    if [h.strip().lower() for h in header] != _EXPECTED_HEADER:
        raise FormatError(
            f"{symbol}: expected header {','.join(_EXPECTED_HEADER)!r}, got {header!r}"
        )

    ts: list[int] = []
    px: list[float] = []
    vn: list[str] = []
    skipped = 0
    rows_seen = 0
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        rows_seen += 1
        if len(row) != 3:
            skipped += 1
            continue
        try:
            t = _parse_timestamp(row[0])
            p = float(row[1])
            v = row[2].strip()
        except ValueError:
            skipped += 1
            continue
        if not math.isfinite(p) or p <= 0 or len(v) != 1:
            skipped += 1
            continue
        ts.append(t)
        px.append(p)
        vn.append(v)

    if rows_seen > 0 and not ts:
        raise EmptyInputError(f"{symbol}: {rows_seen} rows, none valid")

    t_arr = np.asarray(ts, dtype=np.int64)
    order = np.argsort(t_arr, kind="stable")
    return TickSeries(
        symbol=symbol,
        timestamps=t_arr[order],
        prices=np.asarray(px, dtype=np.float64)[order],
        venues=np.asarray(vn, dtype="U1")[order] if vn else np.empty(0, "U1"),
        n_skipped=skipped,
    )


def filter_session(ticks: TickSeries, venue_code: str,
                   session: tuple[int, int] = (SESSION_OPEN_NS, SESSION_CLOSE_NS),
                   ) -> TickSeries:
    """Keep records with matching venue inside the half-open session window."""
    lo, hi = session
    keep = (
        (ticks.venues == venue_code)
        & (ticks.timestamps >= lo)
        & (ticks.timestamps < hi)
    )
    return TickSeries(
        symbol=ticks.symbol,
        timestamps=ticks.timestamps[keep],
        prices=ticks.prices[keep],
        venues=ticks.venues[keep],
        n_skipped=ticks.n_skipped,
    )


def grid_times_ns(n: int) -> np.ndarray:
    """The n+1 grid timestamps t_{0..n} in ns since midnight."""
    s = np.arange(n + 1, dtype=np.int64)
    return SESSION_OPEN_NS + (s * SESSION_NS) // n


def resample_last_tick(ticks: TickSeries, n: int = DEFAULT_N,
                       day: dt.date = dt.date(1970, 1, 1)) -> LogPriceGrid:
    """Last-tick-at-or-before resampling onto the uniform session grid.

    Grid point s takes the log price of the latest trade with timestamp
    <= t_{s,n}; grid points before the first tick are back-filled from it.
    """
    if len(ticks) == 0:
        raise NoDataError(f"{ticks.symbol} {day}: no ticks to resample")
    t_grid = grid_times_ns(n)
    idx = np.searchsorted(ticks.timestamps, t_grid, side="right") - 1
    idx = np.maximum(idx, 0)  # pre-session back-fill from the first tick
    values = np.log(ticks.prices[idx])
    return LogPriceGrid(symbol=ticks.symbol, day=day, values=values, n=n)


def jump_threshold(n: int, T: float = DAY_T, beta: float = DEFAULT_BETA,
                   alpha: float = DEFAULT_ALPHA) -> float:
    """Censoring threshold theta_n = beta * (T/n)^alpha."""
    return beta * (T / n) ** alpha


def truncate_jumps(grid: LogPriceGrid, beta: float = DEFAULT_BETA,
                   alpha: float = DEFAULT_ALPHA) -> LogPriceGrid:
    """Zero out returns with |r| > theta_n and rebuild the level path."""
    theta = jump_threshold(grid.n, grid.T, beta, alpha)
    r = grid.returns()
    r = np.where(np.abs(r) > theta, 0.0, r)
    values = np.empty(grid.n + 1, dtype=np.float64)
    values[0] = grid.values[0]
    values[1:] = grid.values[0] + np.cumsum(r)
    return LogPriceGrid(symbol=grid.symbol, day=grid.day, values=values,
                        n=grid.n, T=grid.T)


def count_jump_returns(grid: LogPriceGrid, beta: float = DEFAULT_BETA,
                       alpha: float = DEFAULT_ALPHA) -> int:
    """Number of returns the truncation rule would censor."""
    theta = jump_threshold(grid.n, grid.T, beta, alpha)
    return int(np.sum(np.abs(grid.returns()) > theta))


def distinct_trade_timestamps(ticks: TickSeries) -> int:
    return len(np.unique(ticks.timestamps))
