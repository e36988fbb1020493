"""SpotPanel: the global grid of estimated (co)volatility series.

One row of estimates per (date, intraday tau). Univariate series are
stored as (N, T) arrays, pair series as (P, T) with pairs ordered
lexicographically i < j; covol/covov are symmetric in the pair.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from . import artifacts
from .errors import FormatError

KINDS = ("vol", "vov", "covol", "covov")


def pair_list(n_assets: int) -> list[tuple[int, int]]:
    """Unordered pairs (i, j), i < j, lexicographic."""
    return [(i, j) for i in range(n_assets) for j in range(i + 1, n_assets)]


@dataclass
class SpotPanel:
    assets: list[str]
    dates: list[dt.date]
    taus: list[float]
    vol: np.ndarray    # (N, T)
    vov: np.ndarray    # (N, T)
    covol: np.ndarray  # (P, T)
    covov: np.ndarray  # (P, T)

    def __post_init__(self) -> None:
        n = len(self.assets)
        p = n * (n - 1) // 2
        t = len(self.dates) * len(self.taus)
        self.vol = np.asarray(self.vol, dtype=np.float64)
        self.vov = np.asarray(self.vov, dtype=np.float64)
        self.covol = np.asarray(self.covol, dtype=np.float64).reshape(p, t)
        self.covov = np.asarray(self.covov, dtype=np.float64).reshape(p, t)
        if self.vol.shape != (n, t) or self.vov.shape != (n, t):
            raise ValueError(
                f"univariate series must be ({n}, {t}), got {self.vol.shape}"
            )
        self._pair_index = {pair: k for k, pair in enumerate(pair_list(n))}

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def length(self) -> int:
        return self.vol.shape[1]

    @property
    def per_day(self) -> int:
        return len(self.taus)

    def pair_index(self, i: int, j: int) -> int:
        if i == j:
            raise KeyError("no pair series for i == j")
        return self._pair_index[(i, j) if i < j else (j, i)]

    def date_of(self, b: int) -> dt.date:
        return self.dates[b // self.per_day]

    def day_slice(self, d: int) -> slice:
        return slice(d * self.per_day, (d + 1) * self.per_day)

    def covol_entry(self, i: int, j: int) -> np.ndarray:
        """Covol series of (i, j); vol of i when i == j."""
        if i == j:
            return self.vol[i]
        return self.covol[self.pair_index(i, j)]

    def covov_entry(self, i: int, j: int) -> np.ndarray:
        """Covov series of (i, j); vov of i when i == j."""
        if i == j:
            return self.vov[i]
        return self.covov[self.pair_index(i, j)]

    # -- serialization ------------------------------------------------

    def to_csv(self, path, meta: dict[str, str] | None = None) -> None:
        rows = []
        n = self.n_assets
        pairs = pair_list(n)
        for b in range(self.length):
            date = self.date_of(b).isoformat()
            tau_idx = b % self.per_day
            for i in range(n):
                rows.append((date, tau_idx, "vol", self.assets[i], "", self.vol[i, b]))
            for i in range(n):
                rows.append((date, tau_idx, "vov", self.assets[i], "", self.vov[i, b]))
            for p, (i, j) in enumerate(pairs):
                rows.append((date, tau_idx, "covol", self.assets[i],
                             self.assets[j], self.covol[p, b]))
            for p, (i, j) in enumerate(pairs):
                rows.append((date, tau_idx, "covov", self.assets[i],
                             self.assets[j], self.covov[p, b]))
        artifacts.write_csv(
            path,
            ["date", "tau_index", "kind", "asset_i", "asset_j", "value"],
            rows,
            meta={**(meta or {}), "taus": ";".join(repr(t) for t in self.taus)},
        )

    @classmethod
    def from_csv(cls, path) -> "SpotPanel":
        meta, columns, rows = artifacts.read_csv(path)
        if columns != ["date", "tau_index", "kind", "asset_i", "asset_j", "value"]:
            raise FormatError(f"unexpected panel columns {columns!r} in {path}")
        if not rows:
            raise FormatError(f"empty panel file {path}")

        dates: list[dt.date] = []
        assets: list[str] = []
        seen_dates = set()
        seen_assets = set()
        for r in rows:
            if r[0] not in seen_dates:
                seen_dates.add(r[0])
                dates.append(dt.date.fromisoformat(r[0]))
            if r[2] == "vol" and r[3] not in seen_assets:
                seen_assets.add(r[3])
                assets.append(r[3])
        if "taus" in meta:
            taus = [float(s) for s in meta["taus"].split(";")]
        else:
            tau_count = max(int(r[1]) for r in rows) + 1
            taus = [b / tau_count for b in range(tau_count)]

        n = len(assets)
        per_day = len(taus)
        t_len = len(dates) * per_day
        asset_idx = {a: k for k, a in enumerate(assets)}
        date_idx = {d.isoformat(): k for k, d in enumerate(dates)}
        pair_idx = {p: k for k, p in enumerate(pair_list(n))}

        vol = np.full((n, t_len), np.nan)
        vov = np.full((n, t_len), np.nan)
        covol = np.full((len(pair_idx), t_len), np.nan)
        covov = np.full((len(pair_idx), t_len), np.nan)
        for r in rows:
            b = date_idx[r[0]] * per_day + int(r[1])
            kind, ai, aj, val = r[2], r[3], r[4], float(r[5])
            if kind == "vol":
                vol[asset_idx[ai], b] = val
            elif kind == "vov":
                vov[asset_idx[ai], b] = val
            elif kind in ("covol", "covov"):
                i, j = asset_idx[ai], asset_idx[aj]
                p = pair_idx[(i, j) if i < j else (j, i)]
                (covol if kind == "covol" else covov)[p, b] = val
            else:
                raise FormatError(f"unknown series kind {kind!r} in {path}")
        arrays = {"vol": vol, "vov": vov, "covol": covol, "covov": covov}
        for name, arr in arrays.items():
            if np.isnan(arr).any():
                raise FormatError(f"panel {path} missing {name} entries")
        return cls(assets=assets, dates=dates, taus=taus, vol=vol, vov=vov,
                   covol=covol, covov=covov)
