"""Reference forecasters: pooled HAR regression, boosted trees, LSTM.

All three consume the same volatility panel as the attention model but
see only what their functional form allows: the HAR regression and the
trees use own/cross heterogeneous-lag aggregates, the LSTM uses raw
vol and co-vol sequences. Multi-step forecasts are recursive for HAR
and the trees (one-step forecasts fed back as inputs) and a direct
14-output head for the LSTM.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nncore as nn
from .errors import ConfigError, ShapeError, TrainingError
from .graphs import GraphSnapshot
from .nncore import Tensor
from .panel import pair_list

logger = logging.getLogger(__name__)

HAR_LAGS = 13  # regressors reach back 13 instants past the current one

REGRESSOR_NAMES = [
    "intercept",
    "own_current",
    "own_mean_1_7",
    "own_mean_8_13",
    "cross_sum_current",
    "cross_sum_mean_1_7",
    "cross_sum_mean_8_13",
]


@dataclass
class HarSpotCoeffs:
    """Pooled coefficients: own terms phi, cross-sum terms theta."""

    mu: float
    phi1: float
    phi2: float
    phi3: float
    theta1: float
    theta2: float
    theta3: float

    def as_array(self) -> np.ndarray:
        return np.asarray([self.mu, self.phi1, self.phi2, self.phi3,
                           self.theta1, self.theta2, self.theta3])

    @classmethod
    def from_array(cls, arr) -> "HarSpotCoeffs":
        return cls(*(float(v) for v in arr))


def _har_blocks(vol: np.ndarray, b: int) -> np.ndarray:
    """Per-asset regressor blocks at instant b: (N, 3) raw aggregates."""
    cur = vol[:, b]
    week = vol[:, b - 7:b].mean(axis=1)
    biweek = vol[:, b - 13:b - 6].mean(axis=1)
    return np.stack([cur, week, biweek], axis=1)


def har_design(vol: np.ndarray, b: int) -> np.ndarray:
    """Design rows (N, 7) for forecasting instant b+1 from history <= b.

    Columns follow REGRESSOR_NAMES; the mean of lags 1..7 and 8..13 uses
    1/7 weights and the cross terms are sums over the other assets.
    """
    if b < HAR_LAGS:
        raise ValueError(f"need at least {HAR_LAGS} lags, got b={b}")
    own = _har_blocks(vol, b)
    totals = own.sum(axis=0, keepdims=True)
    cross = totals - own
    n = vol.shape[0]
    return np.concatenate([np.ones((n, 1)), own, cross], axis=1)


def _pooled_rows(vol: np.ndarray, target_instants=None,
                 ) -> tuple[np.ndarray, np.ndarray]:
    n, total = vol.shape
    xs, ys = [], []
    for b in range(HAR_LAGS, total - 1):
        if target_instants is not None and (b + 1) not in target_instants:
            continue
        xs.append(har_design(vol, b))
        ys.append(vol[:, b + 1])
    if not xs:
        raise ConfigError("no usable regression rows in panel")
    return np.concatenate(xs, axis=0), np.concatenate(ys)


def _collinear_columns(x: np.ndarray) -> list[str]:
    """Names of columns representable as combinations of the others."""
    bad = []
    for j in range(x.shape[1]):
        others = np.delete(x, j, axis=1)
        fit, *_ = np.linalg.lstsq(others, x[:, j], rcond=None)
        resid = x[:, j] - others @ fit
        scale = max(float(np.abs(x[:, j]).max()), 1e-300)
        if float(np.abs(resid).max()) < 1e-8 * scale:
            bad.append(REGRESSOR_NAMES[j])
    return bad


def harspot_fit(vol: np.ndarray, target_instants=None) -> HarSpotCoeffs:
    """Pooled OLS across all assets and usable instants.

    vol: (N, T) spot variance panel; target_instants optionally restricts
    which forecast targets b+1 enter the regression (split-faithful fits).
    """
    vol = np.asarray(vol, dtype=np.float64)
    x, y = _pooled_rows(vol, target_instants)
    rank = np.linalg.matrix_rank(x)
    if rank < x.shape[1]:
        bad = _collinear_columns(x)
        raise ConfigError(f"singular HAR design matrix; collinear columns: {bad}")
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    return HarSpotCoeffs.from_array(beta)


def harspot_residual_orthogonality(vol: np.ndarray,
                                   coeffs: HarSpotCoeffs) -> float:
    """Max relative |X'e| over columns (OLS normal-equation check)."""
    x, y = _pooled_rows(vol)
    resid = y - x @ coeffs.as_array()
    dots = np.abs(x.T @ resid)
    scale = np.abs(x).sum(axis=0) * max(float(np.abs(resid).max()), 1e-300)
    return float((dots / np.maximum(scale, 1e-300)).max())


def harspot_forecast(coeffs: HarSpotCoeffs, history: np.ndarray,
                     steps: int = 1) -> np.ndarray:
    """Forecast (N, steps); steps > 1 feeds forecasts back recursively."""
    hist = np.asarray(history, dtype=np.float64)
    if hist.ndim != 2 or hist.shape[1] < HAR_LAGS + 1:
        raise ValueError(f"history needs at least {HAR_LAGS + 1} instants, "
                         f"got shape {hist.shape}")
    beta = coeffs.as_array()
    out = np.empty((hist.shape[0], steps))
    work = hist
    for s in range(steps):
        x = har_design(work, work.shape[1] - 1)
        pred = x @ beta
        out[:, s] = pred
        work = np.concatenate([work, pred[:, None]], axis=1)
    return out


# ------------------------------------------------------------ boosted trees

@dataclass
class GbtParams:
    """Exact-greedy boosted-tree settings (squared-error objective)."""

    n_trees: int = 400
    max_depth: int = 5
    learning_rate: float = 0.2
    reg_lambda: float = 1.5
    subsample: float = 0.7
    min_child_weight: float = 5.0
    gamma: float = 0.0
    colsample: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample <= 1:
            raise ConfigError("subsample and colsample must lie in (0, 1]")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class GbtEnsemble:
    trees: list[dict]
    params: GbtParams
    base_score: float = 0.0


def _leaf_value(gsum: float, count: float, lam: float) -> float:
    return -gsum / (count + lam)


def _best_split(x: np.ndarray, g: np.ndarray, idx: np.ndarray,
                features: np.ndarray, params: GbtParams,
                ) -> tuple[float, int, float] | None:
    """(gain, feature, threshold) of the best split at this node, or None."""
    if len(idx) < 2:
        return None
    lam, mcw = params.reg_lambda, params.min_child_weight
    gnode = g[idx]
    gtot = float(gnode.sum())
    htot = float(len(idx))
    parent = gtot * gtot / (htot + lam)
    best = None
    for f in features:
        vals = x[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        cg = np.cumsum(gnode[order])[:-1]
        hl = np.arange(1, len(idx), dtype=np.float64)
        hr = htot - hl
        valid = (sv[:-1] != sv[1:]) & (hl >= mcw) & (hr >= mcw)
        if not valid.any():
            continue
        gr = gtot - cg
        gain = 0.5 * (cg * cg / (hl + lam) + gr * gr / (hr + lam)
                      - parent) - params.gamma
        gain[~valid] = -np.inf
        pos = int(np.argmax(gain))
        if gain[pos] > 0 and (best is None or gain[pos] > best[0]):
            best = (float(gain[pos]), int(f),
                    float(0.5 * (sv[pos] + sv[pos + 1])))
    return best


def _grow_tree(x: np.ndarray, g: np.ndarray, idx: np.ndarray,
               depth: int, features: np.ndarray, params: GbtParams) -> dict:
    if depth >= params.max_depth or len(idx) < 2 * params.min_child_weight:
        return {"value": _leaf_value(float(g[idx].sum()), float(len(idx)),
                                     params.reg_lambda)}
    found = _best_split(x, g, idx, features, params)
    if found is None:
        return {"value": _leaf_value(float(g[idx].sum()), float(len(idx)),
                                     params.reg_lambda)}
    _, f, thresh = found
    mask = x[idx, f] < thresh
    return {
        "feature": f,
        "threshold": thresh,
        "left": _grow_tree(x, g, idx[mask], depth + 1, features, params),
        "right": _grow_tree(x, g, idx[~mask], depth + 1, features, params),
    }


def _tree_predict(tree: dict, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])

    def walk(node: dict, rows: np.ndarray) -> None:
        if "value" in node:
            out[rows] = node["value"]
            return
        mask = x[rows, node["feature"]] < node["threshold"]
        walk(node["left"], rows[mask])
        walk(node["right"], rows[~mask])

    walk(tree, np.arange(x.shape[0]))
    return out


def gbt_fit(x: np.ndarray, y: np.ndarray, params: GbtParams) -> GbtEnsemble:
    """Stagewise squared-error boosting with shrinkage, from zero base."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"features {x.shape} do not match targets {y.shape}")
    if x.shape[0] == 0:
        raise ConfigError("empty training set")
    rng = np.random.default_rng(params.seed)
    n_rows, n_feat = x.shape
    pred = np.full(n_rows, 0.0)
    trees: list[dict] = []
    for _ in range(params.n_trees):
        rows = (np.sort(rng.choice(n_rows, size=max(1, round(params.subsample * n_rows)),
                                   replace=False))
                if params.subsample < 1 else np.arange(n_rows))
        feats = (np.sort(rng.choice(n_feat, size=max(1, round(params.colsample * n_feat)),
                                    replace=False))
                 if params.colsample < 1 else np.arange(n_feat))
        g = pred - y
        tree = _grow_tree(x, g, rows, 0, feats, params)
        scale_leaves(tree, params.learning_rate)
        trees.append(tree)
        pred += _tree_predict(tree, x)
    return GbtEnsemble(trees=trees, params=params)


def scale_leaves(node: dict, factor: float) -> None:
    if "value" in node:
        node["value"] *= factor
    else:
        scale_leaves(node["left"], factor)
        scale_leaves(node["right"], factor)


def gbt_predict(ensemble: GbtEnsemble, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.full(x.shape[0], ensemble.base_score)
    for tree in ensemble.trees:
        out += _tree_predict(tree, x)
    return out


def gbt_forecast(ensemble: GbtEnsemble, history: np.ndarray,
                 steps: int = 1) -> np.ndarray:
    """HAR-feature recursive forecast (N, steps) from a variance history."""
    hist = np.asarray(history, dtype=np.float64)
    out = np.empty((hist.shape[0], steps))
    work = hist
    for s in range(steps):
        feats = har_design(work, work.shape[1] - 1)[:, 1:]
        pred = gbt_predict(ensemble, feats)
        out[:, s] = pred
        work = np.concatenate([work, pred[:, None]], axis=1)
    return out


# -------------------------------------------------------------------- LSTM

@dataclass
class LstmConfig:
    """Recurrent baseline settings."""

    lr: float = 5e-4
    optimizer: str = "adamw"
    batch_size: int = 64
    epochs: int = 120
    seed: int = 0
    hidden: tuple[int, ...] = (400, 200)
    dropout: float = 0.4
    weight_decay: float = 0.0
    out_dim: int = 1

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("lr, batch_size must be positive and epochs nonnegative")
        if not self.hidden:
            raise ConfigError("need at least one recurrent layer")


_GATES = ("f", "i", "o", "c")


@dataclass
class LstmModel:
    """Stacked recurrent layers plus a dense head over the last state."""

    layers: list[dict[str, Tensor]]   # per layer: W_f..., U_f..., b_f...
    head_w: Tensor
    head_b: Tensor
    input_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    dropout: float = 0.0

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for li, layer in enumerate(self.layers):
            for key in sorted(layer):
                out[f"layer{li}.{key}"] = layer[key]
        out["head_w"] = self.head_w
        out["head_b"] = self.head_b
        return out

    def param_list(self) -> list[Tensor]:
        return list(self.parameters().values())


def init_lstm(cfg: LstmConfig, input_dim: int, total_out: int) -> LstmModel:
    rng = np.random.default_rng(cfg.seed)
    layers = []
    d_in = input_dim
    for h in cfg.hidden:
        layer: dict[str, Tensor] = {}
        for gate in _GATES:
            bound_w = math.sqrt(6.0 / (d_in + h))
            bound_u = math.sqrt(6.0 / (h + h))
            layer[f"W_{gate}"] = Tensor(rng.uniform(-bound_w, bound_w, (d_in, h)),
                                        requires_grad=True)
            layer[f"U_{gate}"] = Tensor(rng.uniform(-bound_u, bound_u, (h, h)),
                                        requires_grad=True)
            layer[f"b_{gate}"] = Tensor(np.zeros(h), requires_grad=True)
        layers.append(layer)
        d_in = h
    bound = math.sqrt(6.0 / (d_in + total_out))
    head_w = Tensor(rng.uniform(-bound, bound, (d_in, total_out)),
                    requires_grad=True)
    head_b = Tensor(np.zeros(total_out), requires_grad=True)
    return LstmModel(layers=layers, head_w=head_w, head_b=head_b,
                     input_dim=input_dim, hidden=cfg.hidden,
                     out_dim=cfg.out_dim, dropout=cfg.dropout)


def _gate(x: Tensor, h: Tensor, layer: dict[str, Tensor], g: str,
          squash) -> Tensor:
    return squash(nn.add(nn.add(nn.matmul(x, layer[f"W_{g}"]),
                                nn.matmul(h, layer[f"U_{g}"])),
                         layer[f"b_{g}"]))


def lstm_forward(model: LstmModel, seq: np.ndarray, train_flag: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
    """Run sequences (S, steps, D) through the gate chain; returns (S, out)."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 2:
        seq = seq[None]
    if seq.shape[2] != model.input_dim:
        raise ShapeError(f"sequence feature dim {seq.shape[2]} != model input "
                         f"dim {model.input_dim}")
    batch, steps, _ = seq.shape
    inputs: list[Tensor] = [Tensor(seq[:, t, :]) for t in range(steps)]
    for li, layer in enumerate(model.layers):
        width = model.hidden[li]
        h = Tensor(np.zeros((batch, width)))
        c = Tensor(np.zeros((batch, width)))
        outs: list[Tensor] = []
        for t in range(steps):
            x = inputs[t]
            f = _gate(x, h, layer, "f", nn.sigmoid)
            i = _gate(x, h, layer, "i", nn.sigmoid)
            o = _gate(x, h, layer, "o", nn.sigmoid)
            ctil = _gate(x, h, layer, "c", nn.tanh)
            c = nn.add(nn.mul(f, c), nn.mul(i, ctil))
            h = nn.mul(o, nn.tanh(c))
            outs.append(h)
        if train_flag and model.dropout > 0 and li < len(model.layers) - 1:
            outs = [nn.dropout(o_t, model.dropout, True, rng) for o_t in outs]
        inputs = outs
    return nn.add(nn.matmul(inputs[-1], model.head_w), model.head_b)


def lstm_sequences(snapshots: list[GraphSnapshot]) -> np.ndarray:
    """(S, L+1, N+P) sequences of vol and covol levels, oldest step first.

    Recovers the per-lag values from the node-feature blocks; covol for
    pair (i, j) is read from node i's block for j.
    """
    if not snapshots:
        raise ConfigError("no snapshots")
    first = snapshots[0]
    n = first.n_assets
    lags = first.lags
    pairs = pair_list(n)
    block = lags + 1
    out = np.empty((len(snapshots), block, n + len(pairs)))
    pair_cols = []
    for i, j in pairs:
        others = [k for k in range(n) if k != i]
        slot = others.index(j)
        pair_cols.append((i, (1 + slot) * block))
    for s, snap in enumerate(snapshots):
        nf = snap.node_features
        for step in range(block):
            lag = lags - step
            out[s, step, :n] = nf[:, lag]
            for p, (node, base) in enumerate(pair_cols):
                out[s, step, n + p] = nf[node, base + lag]
    return out


def lstm_train(model: LstmModel, sequences: np.ndarray, targets: np.ndarray,
               cfg: LstmConfig, val: tuple[np.ndarray, np.ndarray] | None = None,
               ) -> list[dict[str, float]]:
    """Minibatch training; targets (S, total_out). Returns loss history."""
    sequences = np.asarray(sequences, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if sequences.shape[0] != targets.shape[0]:
        raise ShapeError(f"{sequences.shape[0]} sequences vs "
                         f"{targets.shape[0]} target rows")
    rng = np.random.default_rng(cfg.seed)
    params = model.param_list()
    opt = nn.make_optimizer(cfg.optimizer, params, cfg.lr,
                            weight_decay=cfg.weight_decay)
    n_train = sequences.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            pred = lstm_forward(model, sequences[idx], train_flag=True, rng=rng)
            loss = nn.mse(pred, Tensor(targets[idx]))
            if not math.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss (lr={cfg.lr}, "
                                    f"epoch={epoch}, batch_start={start})")
            opt.zero_grad()
            nn.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        row = {"epoch": float(epoch), "train_mse": total / n_train,
               "val_mse": math.nan}
        if val is not None:
            vp = lstm_forward(model, val[0], train_flag=False)
            row["val_mse"] = float(np.mean((vp.data - val[1]) ** 2))
        history.append(row)
    return history
