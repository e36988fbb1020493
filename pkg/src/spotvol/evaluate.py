"""Forecast evaluation: MSE/QLIKE aggregates, pairwise Diebold-Mariano
tests with a HAC variance, and the Model Confidence Set under the range
statistic with a moving-block bootstrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

MODES = ("single", "multi")


def _check_mode_shapes(preds: np.ndarray, actuals: np.ndarray, mode: str,
                       ) -> tuple[np.ndarray, np.ndarray]:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    p = np.asarray(preds, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape:
        raise ShapeError(f"prediction shape {p.shape} != actual shape {a.shape}")
    want = 2 if mode == "single" else 3
    if p.ndim != want:
        raise ShapeError(f"{mode} mode expects {want}-d (instants, assets"
                         f"{', horizons' if want == 3 else ''}), got {p.ndim}-d")
    return p, a


def aggregate_mse(preds, actuals, mode: str = "single") -> float:
    """Mean over instants of the cross-sectional (and horizon) mean SE."""
    p, a = _check_mode_shapes(preds, actuals, mode)
    return float(np.mean((p - a) ** 2))


def qlike_values(preds, actuals) -> np.ndarray:
    """Elementwise actual/forecast - log(actual/forecast) - 1."""
    ratio = actuals / preds
    return ratio - np.log(ratio) - 1.0


def aggregate_qlike(preds, actuals, mode: str = "single") -> float:
    """Mean QLIKE; requires strictly positive forecasts and actuals."""
    p, a = _check_mode_shapes(preds, actuals, mode)
    bad = np.argwhere((p <= 0) | (a <= 0))
    if bad.size:
        sample = [tuple(int(v) for v in row) for row in bad[:5]]
        raise DomainError(f"QLIKE requires positive values; offending "
                          f"(instant, asset, ...) indices: {sample}"
                          + ("..." if len(bad) > 5 else ""))
    return float(np.mean(qlike_values(p, a)))


def loss_series(preds, actuals, mode: str = "single",
                metric: str = "mse") -> np.ndarray:
    """Per-instant losses, averaged over assets (and horizons)."""
    p, a = _check_mode_shapes(preds, actuals, mode)
    axes = tuple(range(1, p.ndim))
    if metric == "mse":
        return np.mean((p - a) ** 2, axis=axes)
    if metric == "qlike":
        bad = np.argwhere((p <= 0) | (a <= 0))
        if bad.size:
            sample = [tuple(int(v) for v in row) for row in bad[:5]]
            raise DomainError(f"QLIKE requires positive values; offending "
                              f"indices: {sample}")
        return np.mean(qlike_values(p, a), axis=axes)
    raise ConfigError(f"unknown metric {metric!r}")


def _hac_variance(d: np.ndarray, lag: int) -> float:
    """Bartlett-kernel long-run variance of the mean of d."""
    t = len(d)
    centered = d - d.mean()
    gamma0 = float(centered @ centered) / t
    total = gamma0
    for ell in range(1, lag + 1):
        cov = float(centered[ell:] @ centered[:-ell]) / t
        total += 2.0 * (1.0 - ell / (lag + 1.0)) * cov
    return total


def dm_test(loss_a: np.ndarray, loss_b: np.ndarray, h: int = 1,
            ) -> tuple[float, float]:
    """Diebold-Mariano statistic and two-sided normal p-value.

    Losses are per-instant series; the HAC variance uses a Bartlett
    kernel with h-1 lags (0 lags for single-step).
    """
    a = np.asarray(loss_a, dtype=np.float64)
    b = np.asarray(loss_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"loss series must be equal-length 1-d, got "
                         f"{a.shape} and {b.shape}")
    if len(a) < 30:
        raise ValueError(f"need at least 30 observations, got {len(a)}")
    if h < 1:
        raise ConfigError("horizon must be >= 1")
    d = a - b
    var = _hac_variance(d, h - 1)
    if var <= 0:
        raise DomainError("degenerate loss differential (zero HAC variance)")
    stat = float(d.mean() / math.sqrt(var / len(d)))
    p = math.erfc(abs(stat) / math.sqrt(2.0))
    return stat, p


@dataclass
class McsResult:
    survivors: list[int]
    p_values: np.ndarray           # per model, order of the input rows
    eliminated: list[int] = field(default_factory=list)


def _block_bootstrap_indices(rng: np.random.Generator, t: int, block: int,
                             b_boot: int) -> np.ndarray:
    n_blocks = -(-t // block)
    starts = rng.integers(0, t - block + 1, size=(b_boot, n_blocks))
    offsets = np.arange(block)
    idx = (starts[:, :, None] + offsets).reshape(b_boot, n_blocks * block)
    return idx[:, :t]


def mcs(losses: np.ndarray, alpha: float = 0.05, b_boot: int = 5000,
        block_len: int | None = None, seed: int = 0) -> McsResult:
    """Model Confidence Set via iterated elimination, range statistic.

    losses: (models, instants). At each round the worst model is removed
    while the bootstrapped equal-predictive-ability test rejects at
    `alpha`. Survivors are never empty. Identical loss rows all survive.
    """
    lm = np.asarray(losses, dtype=np.float64)
    if lm.ndim != 2 or lm.shape[0] < 2:
        raise ShapeError(f"losses must be (models >= 2, instants), got {lm.shape}")
    m, t = lm.shape
    if b_boot < 100:
        raise ConfigError("b_boot must be >= 100")
    if block_len is None:
        block_len = max(1, int(t ** (1.0 / 3.0)))
    if block_len >= t:
        raise ValueError(f"block length {block_len} must be < {t} instants")
    rng = np.random.default_rng(seed)
    boot_idx = _block_bootstrap_indices(rng, t, block_len, b_boot)

    alive = list(range(m))
    p_values = np.ones(m)
    eliminated: list[int] = []
    prev_p = 0.0
    while len(alive) > 1:
        sub = lm[alive]                       # (k, t)
        means = sub.mean(axis=1)              # (k,)
        diff = means[:, None] - means[None, :]
        boot_means = sub[:, boot_idx].mean(axis=2)   # (k, B)
        boot_diff = (boot_means[:, None, :] - boot_means[None, :, :]
                     - diff[:, :, None])
        var = np.mean(boot_diff ** 2, axis=2)        # (k, k)
        k = len(alive)
        eye = np.eye(k, dtype=bool)
        safe = np.where(var > 0, np.sqrt(var), np.inf)
        tstat = np.where(eye, 0.0, diff / safe)
        zero_var = (~eye) & (var == 0) & (diff != 0)
        tstat[zero_var] = np.sign(diff[zero_var]) * np.inf
        stat = float(np.abs(tstat).max())
        boot_stat = np.abs(boot_diff / safe[:, :, None]).max(axis=(0, 1))
        p_round = float(np.mean(boot_stat >= stat))
        p_round = max(p_round, prev_p)        # enforce MCS p-value monotonicity
        if p_round >= alpha:
            for i in alive:
                p_values[i] = p_round
            break
        worst_pos = int(np.argmax(tstat.max(axis=1)))
        worst = alive[worst_pos]
        p_values[worst] = p_round
        eliminated.append(worst)
        alive.remove(worst)
        prev_p = p_round
    else:
        p_values[alive[0]] = 1.0
    return McsResult(survivors=alive, p_values=p_values, eliminated=eliminated)


def build_report(model_losses: dict[str, dict[str, np.ndarray]],
                 horizon: int = 1, alpha: float = 0.05, b_boot: int = 5000,
                 block_len: int | None = None, seed: int = 0) -> dict:
    """Aggregate report over models: per-metric means, DM matrix, MCS.

    model_losses: name -> {"mse": per-instant series, "qlike": series};
    a metric may be absent (e.g. QLIKE undefined for a model).
    """
    if not model_losses:
        raise ConfigError("no models to evaluate")
    names = sorted(model_losses)
    report: dict = {"models": names, "aggregates": {}, "dm": {}, "mcs": {},
                    "meta": {"alpha": alpha, "b_boot": b_boot,
                             "block_len": block_len, "seed": seed,
                             "horizon": horizon,
                             "dm_sides": "two-sided normal",
                             "hac_lags": horizon - 1}}
    for name in names:
        report["aggregates"][name] = {
            metric: float(np.mean(series))
            for metric, series in sorted(model_losses[name].items())
        }
    for metric in ("mse", "qlike"):
        have = [n for n in names if metric in model_losses[n]]
        dm_block: dict[str, dict] = {}
        for i, na in enumerate(have):
            for nb in have[i + 1:]:
                key = f"{na}|{nb}"
                try:
                    stat, p = dm_test(model_losses[na][metric],
                                      model_losses[nb][metric], h=horizon)
                    dm_block[key] = {"stat": stat, "p": p}
                except DomainError:
                    dm_block[key] = {"error": "degenerate loss differential"}
        report["dm"][metric] = dm_block
        if len(have) >= 2:
            lm = np.stack([model_losses[n][metric] for n in have])
            res = mcs(lm, alpha=alpha, b_boot=b_boot, block_len=block_len,
                      seed=seed)
            report["mcs"][metric] = {
                "survivors": [have[i] for i in res.survivors],
                "p_values": {have[i]: float(res.p_values[i])
                             for i in range(len(have))},
            }
    return report
