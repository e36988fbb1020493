"""Pipeline command line: simulate, ingest, estimate, build-graphs, train,
baseline, forecast, evaluate, explain, and an end-to-end `pipeline` run.

Every stage writes its artifacts atomically with `# key=value` header
metadata carrying a config hash and input content hashes; `evaluate`
refuses predictions whose recorded panel hash does not match the actuals
file. The env var SPOTV2_SEED overrides any configured seed. Reruns with
unchanged config and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import artifacts, baselines, fourier, gat, graphs, ingest
from . import evaluate as evaluate_mod
from . import explain as explain_mod
from . import simulate as simulate_mod
from .errors import (ConfigError, EmptyInputError, FormatError, LineageError,
                     SpotvolError)
from .panel import SpotPanel, pair_list

logger = logging.getLogger(__name__)

QLIKE_FLOOR = 1e-12
PRED_COLUMNS = ["b", "asset", "h", "pred"]


def _seed(value: int) -> int:
    env = os.environ.get("SPOTV2_SEED")
    if env not in (None, ""):
        return int(env)
    return int(value)


def _need_dir(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"input directory not found: {p}")
    return p


def _need_file(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {p}")
    return p


# ------------------------------------------------------------------ simulate

def _spec_from_config(cfg: dict) -> simulate_mod.SvModelSpec:
    n = int(cfg["N"])

    def vec(key, default):
        v = cfg.get(key, default)
        if isinstance(v, (int, float)):
            return np.full(n, float(v))
        return np.asarray(v, dtype=np.float64)

    def corr(key, default_rho):
        v = cfg.get(key, default_rho)
        if isinstance(v, (int, float)):
            eye = np.eye(n)
            return eye + float(v) * (1 - eye)
        return np.asarray(v, dtype=np.float64)

    mode = cfg.get("vov_mode", "cir")
    modes = [mode] * n if isinstance(mode, str) else list(mode)
    theta = vec("theta", 1e-4)
    return simulate_mod.SvModelSpec(
        N=n,
        mu1=vec("mu1", 0.0),
        kappa=vec("kappa", 5.0),
        theta=theta,
        xi=vec("xi", 0.025),
        vov_mode=modes,
        price_corr=corr("price_corr", 0.3),
        vol_corr=corr("vol_corr", 0.4),
        leverage=vec("leverage", -0.5),
        v0=vec("v0", None) if "v0" in cfg else theta.copy(),
        symbols=cfg.get("symbols") or [],
    )


def _demo_spec_config(n_assets: int) -> dict:
    return {
        "N": n_assets,
        "mu1": 0.0,
        "kappa": 5.0,
        "theta": [1e-4 * (1.0 + 0.2 * i / max(n_assets - 1, 1))
                  for i in range(n_assets)],
        "xi": 0.025,
        "vov_mode": "cir",
        "price_corr": 0.3,
        "vol_corr": 0.4,
        "leverage": -0.5,
    }


def run_simulate(spec_cfg: dict, days: int, n: int, seed: int,
                 out_dir: Path) -> tuple[Path, Path]:
    """Write ingest-layout tick CSVs plus the true panel; returns paths."""
    spec = _spec_from_config(spec_cfg)
    config_sha = artifacts.sha256_config(
        {"spec": spec_cfg, "days": days, "n": n, "seed": seed})
    sim_days = simulate_mod.simulate_paths(spec, days, n=n, seed=seed)
    ticks_dir = out_dir / "ticks"
    grid_ts = ingest.grid_times_ns(n)
    tick_ts = grid_ts.copy()
    tick_ts[-1] = grid_ts[-1] - 1  # keep the closing print inside the session
    for day in sim_days:
        for grid in day.grids:
            prices = np.exp(grid.values) * 100.0
            lines = ["timestamp,price,venue"]
            lines.extend(f"{t},{artifacts.fmt(float(p))},N"
                         for t, p in zip(tick_ts.tolist(), prices))
            artifacts.atomic_write_text(
                ticks_dir / f"{grid.symbol}_{grid.day.isoformat()}.csv",
                "\n".join(lines) + "\n")
    truth = simulate_mod.truth_panel(spec, sim_days)
    truth_path = out_dir / "truth_spot_panel.csv"
    truth.to_csv(truth_path, meta={"config_sha": config_sha,
                                   "role": "true_processes"})
    return ticks_dir, truth_path


def cmd_simulate(args) -> int:
    spec_cfg = (artifacts.read_json(_need_file(args.spec)) if args.spec
                else _demo_spec_config(args.assets))
    run_simulate(spec_cfg, args.days, args.n, _seed(args.seed),
                 Path(args.out))
    return 0


# -------------------------------------------------------------------- ingest

def _tick_file_identity(path: Path) -> tuple[str, dt.date]:
    stem = path.stem
    sym, _, day = stem.rpartition("_")
    if not sym:
        raise FormatError(f"tick file name {path.name} is not SYMBOL_DATE.csv")
    return sym, dt.date.fromisoformat(day)


def run_ingest(in_dir: Path, out_dir: Path, venue: str, n: int, beta: float,
               alpha: float, min_distinct: int | None = None,
               workers: int = 1) -> Path:
    files = sorted(in_dir.glob("*.csv"))
    if not files:
        raise EmptyInputError(f"no tick CSVs in {in_dir}")
    if min_distinct is None:
        min_distinct = n // 2
    config_sha = artifacts.sha256_config(
        {"venue": venue, "n": n, "beta": beta, "alpha": alpha,
         "min_distinct": min_distinct})

    def one(path: Path) -> bool:
        symbol, day = _tick_file_identity(path)
        ticks = ingest.parse_ticks(path.read_bytes(), symbol)
        ticks = ingest.filter_session(ticks, venue)
        distinct = ingest.distinct_trade_timestamps(ticks)
        if distinct < min_distinct:
            logger.warning("rejecting %s %s: %d distinct trade timestamps "
                           "(minimum %d)", symbol, day, distinct, min_distinct)
            return False
        grid = ingest.resample_last_tick(ticks, n=n, day=day)
        jumps = ingest.count_jump_returns(grid, beta=beta, alpha=alpha)
        clean = ingest.truncate_jumps(grid, beta=beta, alpha=alpha)
        artifacts.write_csv(
            out_dir / path.name, ["grid_index", "log_price"],
            zip(range(n + 1), (float(v) for v in clean.values)),
            meta={"symbol": symbol, "day": day.isoformat(), "n": n,
                  "beta": beta, "alpha": alpha, "jumps_censored": jumps,
                  "distinct_timestamps": distinct,
                  "config_sha": config_sha,
                  "input_sha": artifacts.sha256_file(path)})
        return True

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, files))
    else:
        results = [one(f) for f in files]
    if not any(results):
        raise EmptyInputError(f"all {len(files)} tick files were rejected")
    return out_dir


def cmd_ingest(args) -> int:
    run_ingest(_need_dir(args.in_dir), Path(args.out), args.venue, args.n,
               args.beta, args.alpha, args.min_distinct, args.workers)
    return 0


# ------------------------------------------------------------------ estimate

def _read_grid_file(path: Path) -> ingest.LogPriceGrid:
    meta, columns, rows = artifacts.read_csv(path)
    if columns != ["grid_index", "log_price"]:
        raise FormatError(f"unexpected grid columns {columns!r} in {path}")
    n = int(meta["n"])
    values = np.empty(n + 1)
    for r in rows:
        values[int(r[0])] = float(r[1])
    return ingest.LogPriceGrid(symbol=meta["symbol"],
                               day=dt.date.fromisoformat(meta["day"]),
                               values=values, n=n)


def run_estimate(in_dir: Path, out_path: Path,
                 freqs: fourier.CuttingFreqs | None) -> Path:
    files = sorted(in_dir.glob("*.csv"))
    if not files:
        raise EmptyInputError(f"no grid CSVs in {in_dir}")
    by_day: dict[dt.date, list[ingest.LogPriceGrid]] = {}
    for path in files:
        grid = _read_grid_file(path)
        by_day.setdefault(grid.day, []).append(grid)
    days = []
    for day in sorted(by_day):
        days.append(sorted(by_day[day], key=lambda g: g.symbol))
    use_freqs = freqs or fourier.default_cutting_freqs(days[0][0].n)
    panel = fourier.estimate_panel(days, use_freqs)
    config_sha = artifacts.sha256_config(
        {"N": use_freqs.N, "M": use_freqs.M, "S": use_freqs.S,
         "L_inv": use_freqs.L_inv})
    panel.to_csv(out_path, meta={
        "config_sha": config_sha,
        "input_sha": artifacts.sha256_tree(in_dir),
        "freqs": f"N={use_freqs.N};M={use_freqs.M};S={use_freqs.S};"
                 f"L_inv={use_freqs.L_inv}",
    })
    return out_path


def _freqs_from_file(path: str | None) -> fourier.CuttingFreqs | None:
    if not path:
        return None
    d = artifacts.read_json(_need_file(path))
    return fourier.CuttingFreqs(N=int(d["N"]), M=int(d["M"]), S=int(d["S"]),
                                L_inv=int(d["L_inv"]))


def cmd_estimate(args) -> int:
    run_estimate(_need_dir(args.in_dir), Path(args.out),
                 _freqs_from_file(args.freqs))
    return 0


# -------------------------------------------------------------- build-graphs

def run_build_graphs(panel_path: Path, lags: int, horizon: str,
                     boundaries: tuple[dt.date, dt.date, dt.date],
                     out_dir: Path) -> Path:
    panel = SpotPanel.from_csv(panel_path)
    snaps = graphs.build_snapshots(panel, lags, horizon)
    split = graphs.split_chronological(snaps, boundaries)
    std_snaps, stats = graphs.standardize(split, snaps)
    untrimmed = graphs.split_chronological(
        graphs.target_calendar(panel, horizon), boundaries)
    split_b = {
        "train": [int(snaps[i].b) for i in split.train],
        "val": [int(snaps[i].b) for i in split.val],
        "test": [int(snaps[i].b) for i in split.test],
    }
    for name in ("train", "val", "test"):
        idx = getattr(split, name)
        for i in idx:
            graphs.write_snapshot_csv(
                out_dir / "snapshots" / name / f"{snaps[i].b}.csv",
                std_snaps[i])
    artifacts.write_json(out_dir / "stats.json", stats.to_dict())
    meta = {
        "assets": panel.assets,
        "per_day": panel.per_day,
        "panel_length": panel.length,
        "lags": lags,
        "horizon": horizon,
        "boundaries": [d.isoformat() for d in boundaries],
        "counts": {"train": len(split.train), "val": len(split.val),
                   "test": len(split.test), "beyond": split.n_beyond},
        "untrimmed_counts": {"train": len(untrimmed.train),
                             "val": len(untrimmed.val),
                             "test": len(untrimmed.test)},
        "split_b": split_b,
        "panel_sha": artifacts.sha256_file(panel_path),
        "config_sha": artifacts.sha256_config(
            {"lags": lags, "horizon": horizon,
             "boundaries": [d.isoformat() for d in boundaries]}),
    }
    artifacts.write_json(out_dir / "meta.json", meta)
    return out_dir


def _boundaries_from_file(path: Path) -> tuple[dt.date, dt.date, dt.date]:
    d = artifacts.read_json(path)
    try:
        return (dt.date.fromisoformat(d["train_end"]),
                dt.date.fromisoformat(d["val_end"]),
                dt.date.fromisoformat(d["test_end"]))
    except KeyError as e:
        raise ConfigError(f"splits file {path} missing key {e}")


def cmd_build_graphs(args) -> int:
    run_build_graphs(_need_file(args.panel), args.lags, args.horizon,
                     _boundaries_from_file(_need_file(args.splits)),
                     Path(args.out))
    return 0


# --------------------------------------------------------------------- train

def _load_split_snapshots(data_dir: Path, split: str) -> list[graphs.GraphSnapshot]:
    d = data_dir / "snapshots" / split
    if not d.is_dir():
        raise FileNotFoundError(f"input directory not found: {d}")
    files = sorted(d.glob("*.csv"), key=lambda p: int(p.stem))
    return [graphs.read_snapshot_csv(p) for p in files]


def _graphs_meta(data_dir: Path) -> dict:
    return artifacts.read_json(_need_file(data_dir / "meta.json"))


def _train_config_from_dict(cfg: dict, horizon: str) -> gat.TrainConfig:
    known = {f for f in gat.TrainConfig.__dataclass_fields__}
    kw = {k: v for k, v in cfg.items() if k in known}
    if "hidden" in kw:
        kw["hidden"] = tuple(int(h) for h in kw["hidden"])
    kw["out_dim"] = 14 if horizon == "multi" else 1
    kw["seed"] = _seed(kw.get("seed", 0))
    return gat.TrainConfig(**kw)


def run_train(cfg_dict: dict, data_dir: Path, out_path: Path,
              history_path: Path | None) -> gat.GatModel:
    meta = _graphs_meta(data_dir)
    cfg = _train_config_from_dict(cfg_dict, meta["horizon"])
    train_snaps = _load_split_snapshots(data_dir, "train")
    val_snaps = _load_split_snapshots(data_dir, "val")
    if not train_snaps:
        raise EmptyInputError(f"no training snapshots under {data_dir}")
    node_dim = train_snaps[0].node_features.shape[1]
    edge_dim = train_snaps[0].edge_features.shape[1]
    model = gat.init_model(cfg, node_dim, edge_dim)
    history = gat.train(model, gat.TrainData(train=train_snaps, val=val_snaps),
                        cfg)
    gat.save_gat(out_path, model, extra_meta={
        "panel_sha": meta["panel_sha"],
        "graphs_sha": artifacts.sha256_file(data_dir / "meta.json"),
        "horizon": meta["horizon"],
        "train_config": {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in vars(cfg).items()},
    })
    if history_path is not None:
        artifacts.write_csv(
            history_path, ["epoch", "train_mse", "val_mse"],
            [(int(h["epoch"]), h["train_mse"], h["val_mse"]) for h in history],
            meta={"panel_sha": meta["panel_sha"]})
    return model


def cmd_train(args) -> int:
    cfg = artifacts.read_json(_need_file(args.config))
    run_train(cfg, _need_dir(args.data), Path(args.out),
              Path(args.history) if args.history else None)
    return 0


# ------------------------------------------------------------------ forecast

def _write_preds(out_path: Path, rows, meta: dict) -> None:
    artifacts.write_csv(out_path, PRED_COLUMNS, rows, meta=meta)


def _clamp_preds(values: np.ndarray) -> tuple[np.ndarray, int]:
    clamped = int(np.sum(values < QLIKE_FLOOR))
    return np.maximum(values, QLIKE_FLOOR), clamped


def run_forecast(model_path: Path, data_dir: Path, out_path: Path,
                 split: str, name: str | None = None) -> Path:
    meta = _graphs_meta(data_dir)
    model = gat.load_gat(model_path)
    snaps = _load_split_snapshots(data_dir, split)
    if not snaps:
        raise EmptyInputError(f"no {split} snapshots under {data_dir}")
    assets = meta["assets"]
    preds = []
    chunk = 256
    for lo in range(0, len(snaps), chunk):
        preds.append(gat.forward(model, snaps[lo:lo + chunk]))
    pred = np.concatenate(preds, axis=0)      # (S, N, H)
    pred, n_clamped = _clamp_preds(pred)
    rows = []
    for s, snap in enumerate(snaps):
        for i, asset in enumerate(assets):
            for h in range(pred.shape[2]):
                rows.append((snap.b, asset, h + 1, float(pred[s, i, h])))
    _write_preds(out_path, rows, meta={
        "model": name or Path(model_path).stem,
        "panel_sha": meta["panel_sha"],
        "model_sha": artifacts.sha256_file(model_path),
        "horizon": meta["horizon"],
        "split": split,
        "clamped": n_clamped,
        "clamp_floor": QLIKE_FLOOR,
    })
    return out_path


def cmd_forecast(args) -> int:
    run_forecast(_need_file(args.model), _need_dir(args.data),
                 Path(args.out), args.split, args.name)
    return 0


# ------------------------------------------------------------------ baseline

def _train_target_instants(panel: SpotPanel, train_end: dt.date) -> set[int]:
    return {t for t in range(baselines.HAR_LAGS + 1, panel.length)
            if panel.date_of(t) <= train_end}


def run_baseline(kind: str, panel_path: Path, data_dir: Path, out_path: Path,
                 cfg: dict | None = None, split: str = "test") -> Path:
    cfg = cfg or {}
    meta = _graphs_meta(data_dir)
    panel = SpotPanel.from_csv(panel_path)
    panel_sha = artifacts.sha256_file(panel_path)
    if meta["panel_sha"] != panel_sha:
        raise LineageError(
            f"graphs at {data_dir} were built from panel {meta['panel_sha']}, "
            f"but {panel_path} hashes to {panel_sha}")
    horizon = meta["horizon"]
    steps = 14 if horizon == "multi" else 1
    test_b = meta["split_b"][split]
    assets = meta["assets"]
    train_end = dt.date.fromisoformat(meta["boundaries"][0])
    extra_meta = {"model": kind, "panel_sha": panel_sha, "horizon": horizon,
                  "split": split}

    if kind == "har":
        targets = _train_target_instants(panel, train_end)
        coeffs = baselines.harspot_fit(panel.vol, targets)
        pred = np.stack([
            baselines.harspot_forecast(coeffs, panel.vol[:, :b + 1], steps)
            for b in test_b])                 # (S, N, steps)
        extra_meta["coefficients"] = ";".join(
            artifacts.fmt(float(c)) for c in coeffs.as_array())
    elif kind == "gbt":
        targets = sorted(_train_target_instants(panel, train_end))
        x_rows, y_rows = [], []
        for t in targets:
            x_rows.append(baselines.har_design(panel.vol, t - 1)[:, 1:])
            y_rows.append(panel.vol[:, t])
        params = baselines.GbtParams(**{k: v for k, v in cfg.items()
                                        if k in baselines.GbtParams.__dataclass_fields__})
        ens = baselines.gbt_fit(np.concatenate(x_rows), np.concatenate(y_rows),
                                params)
        pred = np.stack([
            baselines.gbt_forecast(ens, panel.vol[:, :b + 1], steps)
            for b in test_b])
    elif kind == "lstm":
        train_snaps = _load_split_snapshots(data_dir, "train")
        val_snaps = _load_split_snapshots(data_dir, "val")
        test_snaps = _load_split_snapshots(data_dir, split)
        n = panel.n_assets
        known = {f for f in baselines.LstmConfig.__dataclass_fields__}
        kw = {k: v for k, v in cfg.items() if k in known}
        if "hidden" in kw:
            kw["hidden"] = tuple(int(h) for h in kw["hidden"])
        kw["out_dim"] = steps
        kw["seed"] = _seed(kw.get("seed", 0))
        lcfg = baselines.LstmConfig(**kw)
        seq_train = baselines.lstm_sequences(train_snaps)
        y_train = np.stack([s.targets.reshape(-1) for s in train_snaps])
        val = None
        if val_snaps:
            val = (baselines.lstm_sequences(val_snaps),
                   np.stack([s.targets.reshape(-1) for s in val_snaps]))
        model = baselines.init_lstm(lcfg, seq_train.shape[2], n * steps)
        baselines.lstm_train(model, seq_train, y_train, lcfg, val=val)
        seq_test = baselines.lstm_sequences(test_snaps)
        out = baselines.lstm_forward(model, seq_test).data
        pred = out.reshape(len(test_snaps), n, steps)
        test_b = [s.b for s in test_snaps]
    else:
        raise ConfigError(f"unknown baseline {kind!r}; choose har, gbt, lstm")

    pred, n_clamped = _clamp_preds(pred)
    rows = []
    for s, b in enumerate(test_b):
        for i, asset in enumerate(assets):
            for h in range(steps):
                rows.append((int(b), asset, h + 1, float(pred[s, i, h])))
    extra_meta["clamped"] = n_clamped
    extra_meta["clamp_floor"] = QLIKE_FLOOR
    _write_preds(out_path, rows, extra_meta)
    return out_path


def cmd_baseline(args) -> int:
    cfg = artifacts.read_json(_need_file(args.config)) if args.config else {}
    run_baseline(args.model, _need_file(args.panel), _need_dir(args.data),
                 Path(args.out), cfg, args.split)
    return 0


# ------------------------------------------------------------------ evaluate

def _load_preds(path: Path) -> tuple[dict, dict[tuple[int, str, int], float]]:
    meta, columns, rows = artifacts.read_csv(path)
    if columns != PRED_COLUMNS:
        raise FormatError(f"unexpected prediction columns {columns!r} in {path}")
    table = {}
    for r in rows:
        table[(int(r[0]), r[1], int(r[2]))] = float(r[3])
    return meta, table


def run_evaluate(pred_paths: list[Path], actuals_path: Path, out_path: Path,
                 alpha: float = 0.05, b_boot: int = 5000,
                 block_len: int | None = None, seed: int = 0) -> dict:
    panel = SpotPanel.from_csv(actuals_path)
    actuals_sha = artifacts.sha256_file(actuals_path)
    asset_idx = {a: i for i, a in enumerate(panel.assets)}

    models: dict[str, dict] = {}
    key_sets = []
    horizons = set()
    lineage = {}
    for path in pred_paths:
        meta, table = _load_preds(path)
        name = meta.get("model", path.stem)
        if meta.get("panel_sha") != actuals_sha:
            raise LineageError(
                f"{path} was produced from panel {meta.get('panel_sha')!r} "
                f"but {actuals_path} hashes to {actuals_sha}")
        if name in models:
            raise ConfigError(f"duplicate model name {name!r} in predictions")
        models[name] = table
        lineage[name] = artifacts.sha256_file(path)
        key_sets.append(set(table))
        horizons.add(max(k[2] for k in table))
    common = key_sets[0]
    for ks in key_sets[1:]:
        if ks != common:
            raise ConfigError("prediction files cover different (b, asset, h) "
                              "keys; refusing to compare")
    if len(horizons) != 1:
        raise ConfigError(f"mixed horizons in prediction files: {horizons}")
    h_max = horizons.pop()
    bs = sorted({k[0] for k in common})
    assets = [a for a in panel.assets if (bs[0], a, 1) in common]
    if len(assets) != panel.n_assets:
        raise ConfigError("predictions do not cover every panel asset")
    if bs[-1] + h_max >= panel.length:
        raise ConfigError(f"prediction target {bs[-1]}+{h_max} beyond panel "
                          f"length {panel.length}")

    actual = np.empty((len(bs), len(assets), h_max))
    for bi, b in enumerate(bs):
        for ai, a in enumerate(assets):
            actual[bi, ai] = panel.vol[asset_idx[a], b + 1: b + 1 + h_max]
    mode = "multi" if h_max > 1 else "single"

    model_losses: dict[str, dict[str, np.ndarray]] = {}
    notes = {}
    for name, table in sorted(models.items()):
        pred = np.empty_like(actual)
        for bi, b in enumerate(bs):
            for ai, a in enumerate(assets):
                for h in range(1, h_max + 1):
                    pred[bi, ai, h - 1] = table[(b, a, h)]
        p_use = pred if mode == "multi" else pred[:, :, 0]
        a_use = actual if mode == "multi" else actual[:, :, 0]
        losses = {"mse": evaluate_mod.loss_series(p_use, a_use, mode, "mse")}
        try:
            losses["qlike"] = evaluate_mod.loss_series(p_use, a_use, mode,
                                                       "qlike")
        except SpotvolError as e:
            notes[name] = f"qlike omitted: {e}"
        model_losses[name] = losses

    report = evaluate_mod.build_report(model_losses, horizon=h_max,
                                       alpha=alpha, b_boot=b_boot,
                                       block_len=block_len, seed=seed)
    report["meta"]["lineage"] = {"actuals_sha": actuals_sha, "preds": lineage}
    report["meta"]["notes"] = notes
    report["meta"]["n_instants"] = len(bs)
    artifacts.write_json(out_path, report)
    return report


def cmd_evaluate(args) -> int:
    paths = [_need_file(p) for p in args.preds.split(",") if p]
    run_evaluate(paths, _need_file(args.actuals), Path(args.out),
                 alpha=args.alpha, b_boot=args.b_boot,
                 block_len=args.block_len, seed=_seed(args.seed))
    return 0


# ------------------------------------------------------------------- explain

def run_explain(model_path: Path, data_dir: Path, out_path: Path,
                n_star: int, split: str = "test", limit: int | None = None,
                cfg: explain_mod.ExplainConfig | None = None,
                workers: int = 1) -> explain_mod.FrequencyHeatmap:
    meta = _graphs_meta(data_dir)
    model = gat.load_gat(model_path)
    snaps = _load_split_snapshots(data_dir, split)
    if limit is not None:
        snaps = snaps[:limit]
    if not snaps:
        raise EmptyInputError(f"no {split} snapshots under {data_dir}")
    assets = meta["assets"]
    n = len(assets)
    cfg = cfg or explain_mod.ExplainConfig()
    jobs = [(snap, i) for snap in snaps for i in range(n)]

    def one(job):
        snap, i = job
        return explain_mod.explain_node(model, snap, i, n_star, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    heat = explain_mod.frequency_heatmap(results, n, n_star, assets)
    if not heat.column_identity_holds():
        raise ConfigError("explanation subgraphs violate the per-timestamp "
                          "inclusion count identity")
    pct = heat.matrix
    rows = []
    for src in range(n):
        for tgt in range(n):
            rows.append((assets[src], assets[tgt], int(heat.counts[src, tgt]),
                         int(heat.denom[tgt]), float(pct[src, tgt])))
    artifacts.write_csv(out_path,
                        ["source_asset", "target_asset", "count",
                         "timestamps", "percent"],
                        rows, meta={
                            "n_star": n_star,
                            "split": split,
                            "model_sha": artifacts.sha256_file(model_path),
                            "panel_sha": meta["panel_sha"],
                            "iters": cfg.iters, "lr": cfg.lr,
                            "lam1": cfg.lam1, "lam2": cfg.lam2,
                            "seed": cfg.seed,
                        })
    traces_path = out_path.parent / (out_path.stem + "_traces.json")
    traces = {}
    for res in results:
        traces[f"b{res.b}_node{res.node}"] = {
            "mask": [float(v) for v in res.mask],
            "selected": res.selected,
            "flagged": res.flagged,
            "objective": res.trace,
        }
    artifacts.write_json(traces_path, traces)
    return heat


def cmd_explain(args) -> int:
    cfg = explain_mod.ExplainConfig(seed=_seed(args.seed), iters=args.iters,
                                    lr=args.lr)
    run_explain(_need_file(args.model), _need_dir(args.data), Path(args.out),
                args.nstar, args.split, args.limit, cfg, args.workers)
    return 0


# ------------------------------------------------------------------ pipeline

DEFAULT_PIPELINE = {
    "seed": 0,
    "days": 60,
    "assets": 5,
    "n": 23400,
    "venue": "N",
    "beta": 0.5,
    "alpha": 0.5,
    "lags": 4,
    "horizon": "single",
    "split_fractions": [0.6, 0.15, 0.25],
    "gat": {"lr": 1e-3, "epochs": 25, "batch_size": 32, "hidden": [16],
            "heads": 2, "dropout_arch": 0.0, "dropout_attn": 0.0},
    "lstm": {"lr": 1e-3, "epochs": 25, "batch_size": 32, "hidden": [16],
             "dropout": 0.0},
    "gbt": {"n_trees": 100, "max_depth": 3, "learning_rate": 0.1,
            "reg_lambda": 1.0, "subsample": 1.0, "min_child_weight": 2.0},
    "evaluate": {"alpha": 0.05, "b_boot": 1000, "block_len": None},
    "explain": {"n_star": 3, "limit": 25, "iters": 100, "lr": 0.05,
                "lam1": 0.005, "lam2": 0.1},
    "workers": 1,
}


def _merged_pipeline_config(path: Path) -> dict:
    cfg = dict(DEFAULT_PIPELINE)
    user = artifacts.read_json(path)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    if "out_dir" not in cfg:
        raise ConfigError("pipeline config needs an out_dir")
    return cfg


def run_pipeline(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    seed = _seed(cfg["seed"])
    workers = int(cfg.get("workers", 1))
    spec_cfg = cfg.get("sim_spec") or _demo_spec_config(int(cfg["assets"]))
    days, n = int(cfg["days"]), int(cfg["n"])

    logger.info("pipeline: simulate %d days x %d assets", days, cfg["assets"])
    ticks_dir, _ = run_simulate(spec_cfg, days, n, seed, out)

    logger.info("pipeline: ingest")
    grids_dir = run_ingest(ticks_dir, out / "grids", cfg["venue"], n,
                           float(cfg["beta"]), float(cfg["alpha"]),
                           workers=workers)

    logger.info("pipeline: estimate")
    panel_path = run_estimate(grids_dir, out / "spot_panel.csv", None)

    logger.info("pipeline: build graphs")
    panel = SpotPanel.from_csv(panel_path)
    f1, f2, _ = cfg["split_fractions"]
    k1 = max(1, int(round(f1 * len(panel.dates))))
    k2 = max(1, int(round(f2 * len(panel.dates))))
    if k1 + k2 >= len(panel.dates):
        raise ConfigError("split fractions leave no test days")
    boundaries = (panel.dates[k1 - 1], panel.dates[k1 + k2 - 1],
                  panel.dates[-1])
    artifacts.write_json(out / "splits.json", {
        "train_end": boundaries[0].isoformat(),
        "val_end": boundaries[1].isoformat(),
        "test_end": boundaries[2].isoformat()})
    graphs_dir = run_build_graphs(panel_path, int(cfg["lags"]),
                                  cfg["horizon"], boundaries, out / "graphs")

    logger.info("pipeline: train attention models")
    models_dir = out / "models"
    preds_dir = out / "preds"
    gat_cfg = {**cfg["gat"], "seed": seed}
    run_train({**gat_cfg, "use_edges": True}, graphs_dir,
              models_dir / "spotv2net.ckpt",
              models_dir / "spotv2net_history.csv")
    run_train({**gat_cfg, "use_edges": False}, graphs_dir,
              models_dir / "spotv2net_ne.ckpt",
              models_dir / "spotv2net_ne_history.csv")
    run_forecast(models_dir / "spotv2net.ckpt", graphs_dir,
                 preds_dir / "spotv2net.csv", "test", "spotv2net")
    run_forecast(models_dir / "spotv2net_ne.ckpt", graphs_dir,
                 preds_dir / "spotv2net_ne.csv", "test", "spotv2net_ne")

    logger.info("pipeline: baselines")
    run_baseline("har", panel_path, graphs_dir, preds_dir / "har.csv")
    run_baseline("gbt", panel_path, graphs_dir, preds_dir / "gbt.csv",
                 {**cfg["gbt"], "seed": seed})
    run_baseline("lstm", panel_path, graphs_dir, preds_dir / "lstm.csv",
                 {**cfg["lstm"], "seed": seed})

    logger.info("pipeline: evaluate")
    ev = cfg["evaluate"]
    run_evaluate([preds_dir / f"{m}.csv" for m in
                  ("spotv2net", "spotv2net_ne", "har", "gbt", "lstm")],
                 panel_path, out / "report.json", alpha=float(ev["alpha"]),
                 b_boot=int(ev["b_boot"]), block_len=ev["block_len"],
                 seed=seed)

    logger.info("pipeline: explain")
    ex = cfg["explain"]
    run_explain(models_dir / "spotv2net.ckpt", graphs_dir, out / "heatmap.csv",
                int(ex["n_star"]), "test", ex.get("limit"),
                explain_mod.ExplainConfig(iters=int(ex["iters"]),
                                          lr=float(ex["lr"]),
                                          lam1=float(ex["lam1"]),
                                          lam2=float(ex["lam2"]),
                                          seed=seed),
                workers=workers)
    return out / "report.json"


def cmd_pipeline(args) -> int:
    run_pipeline(_merged_pipeline_config(_need_file(args.config)))
    return 0


# ---------------------------------------------------------------- arg parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="spotvol",
        description="Intraday volatility estimation and spillover "
                    "forecasting pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="simulate tick data plus true panel",
                        description="Writes ticks/SYMBOL_DATE.csv files "
                                    "(columns timestamp,price,venue) and "
                                    "truth_spot_panel.csv on the 30-minute "
                                    "grid.")
    ps.add_argument("--spec", help="JSON model spec (defaults to a demo universe)")
    ps.add_argument("--assets", type=int, default=5)
    ps.add_argument("--days", type=int, default=60)
    ps.add_argument("--n", type=int, default=23400)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_simulate)

    pi = sub.add_parser("ingest", help="ticks to uniform log-price grids",
                        description="Reads SYMBOL_DATE.csv tick files "
                                    "(timestamp,price,venue), writes "
                                    "grid_index,log_price files.")
    pi.add_argument("--in", dest="in_dir", required=True)
    pi.add_argument("--out", required=True)
    pi.add_argument("--venue", default="N")
    pi.add_argument("--n", type=int, default=ingest.DEFAULT_N)
    pi.add_argument("--beta", type=float, default=ingest.DEFAULT_BETA)
    pi.add_argument("--alpha", type=float, default=ingest.DEFAULT_ALPHA)
    pi.add_argument("--min-distinct", dest="min_distinct", type=int,
                    default=None, help="reject days with fewer distinct "
                                       "trade timestamps (default n/2)")
    pi.add_argument("--workers", type=int, default=1)
    pi.set_defaults(func=cmd_ingest)

    pe = sub.add_parser("estimate", help="grids to spot panel CSV",
                        description="Writes spot_panel.csv with columns "
                                    "date,tau_index,kind,asset_i,asset_j,"
                                    "value.")
    pe.add_argument("--in", dest="in_dir", required=True)
    pe.add_argument("--freqs", help="JSON with N, M, S, L_inv")
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=cmd_estimate)

    pg = sub.add_parser("build-graphs", help="panel to graph snapshots",
                        description="Writes snapshots/{train,val,test}/b.csv, "
                                    "stats.json, meta.json.")
    pg.add_argument("--panel", required=True)
    pg.add_argument("--lags", type=int, required=True)
    pg.add_argument("--horizon", choices=graphs.HORIZONS, default="single")
    pg.add_argument("--splits", required=True,
                    help="JSON with train_end, val_end, test_end dates")
    pg.add_argument("--out", required=True)
    pg.set_defaults(func=cmd_build_graphs)

    pt = sub.add_parser("train", help="train the attention forecaster",
                        description="Config JSON holds TrainConfig fields "
                                    "(lr, epochs, hidden, heads, ...).")
    pt.add_argument("--config", required=True)
    pt.add_argument("--data", required=True, help="build-graphs output dir")
    pt.add_argument("--out", required=True, help="checkpoint path")
    pt.add_argument("--history", help="per-epoch loss CSV")
    pt.set_defaults(func=cmd_train)

    pb = sub.add_parser("baseline", help="fit and forecast a baseline model",
                        description="Writes predictions with columns "
                                    "b,asset,h,pred.")
    pb.add_argument("--model", required=True, choices=["har", "gbt", "lstm"])
    pb.add_argument("--panel", required=True)
    pb.add_argument("--data", required=True, help="build-graphs output dir")
    pb.add_argument("--config", help="hyperparameter JSON")
    pb.add_argument("--split", default="test")
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=cmd_baseline)

    pf = sub.add_parser("forecast", help="predictions from a checkpoint",
                        description="Writes predictions with columns "
                                    "b,asset,h,pred in raw variance units.")
    pf.add_argument("--model", required=True)
    pf.add_argument("--data", required=True)
    pf.add_argument("--split", default="test")
    pf.add_argument("--name", help="model name recorded in the output")
    pf.add_argument("--out", required=True)
    pf.set_defaults(func=cmd_forecast)

    pv = sub.add_parser("evaluate", help="losses, DM tests, confidence set",
                        description="Compares prediction CSVs against the "
                                    "panel; refuses mismatched lineage.")
    pv.add_argument("--preds", required=True, help="comma-separated CSVs")
    pv.add_argument("--actuals", required=True, help="spot panel CSV")
    pv.add_argument("--alpha", type=float, default=0.05)
    pv.add_argument("--b-boot", dest="b_boot", type=int, default=5000)
    pv.add_argument("--block-len", dest="block_len", type=int, default=None)
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--out", required=True)
    pv.set_defaults(func=cmd_evaluate)

    px = sub.add_parser("explain", help="node-mask explanation heatmap",
                        description="Writes heatmap.csv (source_asset,"
                                    "target_asset,count,timestamps,percent) "
                                    "and a *_traces.json file.")
    px.add_argument("--model", required=True)
    px.add_argument("--data", required=True)
    px.add_argument("--nstar", type=int, default=5)
    px.add_argument("--split", default="test")
    px.add_argument("--limit", type=int, default=None)
    px.add_argument("--iters", type=int, default=200)
    px.add_argument("--lr", type=float, default=0.01)
    px.add_argument("--seed", type=int, default=0)
    px.add_argument("--workers", type=int, default=1)
    px.add_argument("--out", required=True)
    px.set_defaults(func=cmd_explain)

    pp = sub.add_parser("pipeline", help="simulate-to-report end-to-end run",
                        description="Config JSON: out_dir plus optional "
                                    "overrides of the built-in demo settings.")
    pp.add_argument("--config", required=True)
    pp.set_defaults(func=cmd_pipeline)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        json.dump({"error": "MissingInput", "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except SpotvolError as e:
        json.dump({"error": type(e).__name__, "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
