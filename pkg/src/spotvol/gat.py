"""Multi-head graph attention forecaster with edge features.

Attention logits for node pair (i, j) come from a shared linear map of
both node vectors plus a linear map of the pair's edge vector:

    e_ij = LeakyReLU(q_l . W x_i + q_r . W x_j + q_e . U x^e_ij)
    a_ij = softmax_j(e_ij),  x'_i = act(sum_j a_ij W x_j)

Hidden layers concatenate head outputs (activation inside the concat);
the last hidden layer averages heads and applies the activation outside.
A final affine map per node produces the forecasts. The edge-free
variant drops the U/q_e term entirely, which is bitwise identical to
running the full model with zeroed edge weights.

Batching stacks snapshots along a leading axis, which is equivalent to
one block-diagonal graph: attention never crosses snapshots.
"""

from __future__ import annotations

import copy
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

_ACTIVATIONS = {
    "relu": nn.relu,
    "identity": lambda t: t,
    "tanh": nn.tanh,
    "sigmoid": nn.sigmoid,
}


@dataclass
class TrainConfig:
    """Hyperparameters for the attention forecaster."""

    lr: float = 1e-4
    optimizer: str = "adamw"
    batch_size: int = 128
    epochs: int = 120
    seed: int = 0
    hidden: tuple[int, ...] = (400, 200)
    heads: int = 4
    dropout_arch: float = 0.1
    dropout_attn: float = 0.1
    slope: float = 0.1
    weight_decay: float = 0.0
    activation: str = "relu"
    use_edges: bool = True
    out_dim: int = 1
    checkpoint_best: bool = False

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("lr, batch_size must be positive and epochs nonnegative")
        if self.heads < 1 or not self.hidden:
            raise ConfigError("need at least one head and one hidden layer")
        if self.slope <= 0:
            raise ConfigError("leaky slope must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.out_dim not in (1, 14):
            raise ConfigError(f"out_dim must be 1 or 14, got {self.out_dim}")

    @classmethod
    def multi_step_default(cls, **overrides) -> "TrainConfig":
        base = dict(lr=5e-5, hidden=(400, 400), heads=5,
                    dropout_arch=0.2, dropout_attn=0.0, out_dim=14)
        base.update(overrides)
        return cls(**base)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class GatLayerParams:
    """One attention layer: per-head node map, edge map, and score vector."""

    W: list[Tensor]                 # K x (M_in, Mp)
    q_l: list[Tensor]               # K x (Mp, 1)
    q_r: list[Tensor]               # K x (Mp, 1)
    U: list[Tensor] | None          # K x (E_in, Ep), None when edge-free
    q_e: list[Tensor] | None        # K x (Ep, 1)
    slope: float
    concat: bool

    @property
    def heads(self) -> int:
        return len(self.W)

    @property
    def in_dim(self) -> int:
        return self.W[0].data.shape[0]

    @property
    def head_dim(self) -> int:
        return self.W[0].data.shape[1]

    @property
    def out_dim(self) -> int:
        return self.head_dim * (self.heads if self.concat else 1)


def _init_layer(rng: np.random.Generator, heads: int, m_in: int, mp: int,
                e_in: int, ep: int, slope: float, concat: bool,
                use_edges: bool) -> GatLayerParams:
    W, q_l, q_r = [], [], []
    U: list[Tensor] | None = [] if use_edges else None
    q_e: list[Tensor] | None = [] if use_edges else None
    for _ in range(heads):
        W.append(Tensor(_glorot(rng, (m_in, mp), m_in, mp), requires_grad=True))
        if use_edges:
            U.append(Tensor(_glorot(rng, (e_in, ep), e_in, ep), requires_grad=True))
            qlen = 2 * mp + ep
        else:
            qlen = 2 * mp
        q = _glorot(rng, (qlen, 1), qlen, 1)
        q_l.append(Tensor(q[:mp], requires_grad=True))
        q_r.append(Tensor(q[mp:2 * mp], requires_grad=True))
        if use_edges:
            q_e.append(Tensor(q[2 * mp:], requires_grad=True))
    return GatLayerParams(W=W, q_l=q_l, q_r=q_r, U=U, q_e=q_e,
                          slope=slope, concat=concat)


@dataclass
class GatModel:
    """Stacked attention layers plus a per-node affine output head."""

    layers: list[GatLayerParams]
    O: Tensor                       # (M_last, out_dim)
    u: Tensor                       # (out_dim,)
    dropout_arch: float
    dropout_attn: float
    out_dim: int
    use_edges: bool
    activation: str = "relu"
    node_dim: int = 0
    edge_dim: int = 0

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for li, layer in enumerate(self.layers):
            for k in range(layer.heads):
                out[f"layer{li}.head{k}.W"] = layer.W[k]
                out[f"layer{li}.head{k}.q_l"] = layer.q_l[k]
                out[f"layer{li}.head{k}.q_r"] = layer.q_r[k]
                if layer.U is not None:
                    out[f"layer{li}.head{k}.U"] = layer.U[k]
                    out[f"layer{li}.head{k}.q_e"] = layer.q_e[k]
        out["O"] = self.O
        out["u"] = self.u
        return out

    def param_list(self) -> list[Tensor]:
        return list(self.parameters().values())

    def clone(self) -> "GatModel":
        return copy.deepcopy(self)


def init_model(cfg: TrainConfig, node_dim: int, edge_dim: int) -> GatModel:
    """Build a model with Glorot-uniform weights and zero output bias."""
    rng = np.random.default_rng(cfg.seed)
    layers: list[GatLayerParams] = []
    m_in = node_dim
    n_layers = len(cfg.hidden)
    for li, mp in enumerate(cfg.hidden):
        concat = li < n_layers - 1
        layers.append(_init_layer(rng, cfg.heads, m_in, mp, edge_dim, mp,
                                  cfg.slope, concat, cfg.use_edges))
        m_in = mp * (cfg.heads if concat else 1)
    O = Tensor(_glorot(rng, (m_in, cfg.out_dim), m_in, cfg.out_dim),
               requires_grad=True)
    u = Tensor(np.zeros(cfg.out_dim), requires_grad=True)
    return GatModel(layers=layers, O=O, u=u, dropout_arch=cfg.dropout_arch,
                    dropout_attn=cfg.dropout_attn, out_dim=cfg.out_dim,
                    use_edges=cfg.use_edges, activation=cfg.activation,
                    node_dim=node_dim, edge_dim=edge_dim)


def _head_attention(layer: GatLayerParams, k: int, h: Tensor,
                    ep: Tensor | None, es: Tensor | None,
                    pairs: list[tuple[int, int]], n: int,
                    use_edges: bool) -> Tensor:
    """Attention rows (S, N, N) for head k given transformed nodes h."""
    s = nn.matmul(h, layer.q_l[k])
    t = nn.matmul(h, layer.q_r[k])
    logits = nn.add(s, nn.transpose(t, (0, 2, 1)))
    if use_edges and layer.U is not None:
        uw = layer.U[k]
        batch = ep.data.shape[0]
        up = nn.reshape(nn.matmul(nn.matmul(ep, uw), layer.q_e[k]),
                        (batch, len(pairs)))
        us = nn.reshape(nn.matmul(nn.matmul(es, uw), layer.q_e[k]),
                        (batch, n))
        logits = nn.add(logits, nn.edge_scores_to_matrix(up, us, pairs, n))
    return nn.softmax_rows(nn.leaky_relu(logits, layer.slope))


def _layer_forward(layer: GatLayerParams, x: Tensor, ep: Tensor | None,
                   es: Tensor | None, use_edges: bool, activation,
                   train_flag: bool, dropout_attn: float,
                   rng: np.random.Generator | None) -> Tensor:
    n = x.data.shape[-2]
    pairs = pair_list(n)
    heads = []
    for k in range(layer.heads):
        h = nn.matmul(x, layer.W[k])
        alpha = _head_attention(layer, k, h, ep, es, pairs, n, use_edges)
        if train_flag and dropout_attn > 0:
            alpha = nn.dropout(alpha, dropout_attn, True, rng)
        heads.append(nn.matmul(alpha, h))
    if layer.concat:
        return nn.concat([activation(hd) for hd in heads], axis=-1)
    acc = heads[0]
    for hd in heads[1:]:
        acc = nn.add(acc, hd)
    return activation(nn.mul(acc, 1.0 / layer.heads))


def forward_features(model: GatModel, x: Tensor, ep: Tensor | None,
                     es: Tensor | None, train_flag: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Batched forward pass on (S, N, M) nodes and (S, P/N, E) edges."""
    if x.data.ndim != 3:
        raise ShapeError(f"node features must be (S, N, M), got {x.shape}")
    use_edges = model.use_edges and ep is not None
    act = _ACTIVATIONS[model.activation]
    cur = x
    for layer in model.layers:
        cur_e, cur_s = ep, es
        if train_flag and model.dropout_arch > 0:
            cur = nn.dropout(cur, model.dropout_arch, True, rng)
            if use_edges:
                cur_e = nn.dropout(ep, model.dropout_arch, True, rng)
                cur_s = nn.dropout(es, model.dropout_arch, True, rng)
        cur = _layer_forward(layer, cur, cur_e, cur_s, use_edges, act,
                             train_flag, model.dropout_attn, rng)
    return nn.add(nn.matmul(cur, model.O), model.u)


def _stack(snapshots: list[GraphSnapshot]) -> tuple[np.ndarray, np.ndarray,
                                                    np.ndarray, np.ndarray]:
    x = np.stack([s.node_features for s in snapshots])
    ep = np.stack([s.edge_features for s in snapshots])
    es = np.stack([s.self_edge_features for s in snapshots])
    y = np.stack([s.targets[:, None] if s.targets.ndim == 1 else s.targets
                  for s in snapshots])
    return x, ep, es, y


def attention_matrix(layer: GatLayerParams, node_feats: np.ndarray,
                     edge_feats: tuple[np.ndarray, np.ndarray] | None = None,
                     train_flag: bool = False,
                     rng: np.random.Generator | None = None,
                     dropout_attn: float = 0.0) -> np.ndarray:
    """Per-head attention matrices (K, N, N) for one snapshot's features."""
    n = node_feats.shape[0]
    if node_feats.shape[1] != layer.in_dim:
        raise ShapeError(f"node features dim {node_feats.shape[1]} != layer "
                         f"input dim {layer.in_dim}")
    pairs = pair_list(n)
    x = Tensor(node_feats[None])
    use_edges = edge_feats is not None and layer.U is not None
    ep = Tensor(edge_feats[0][None]) if use_edges else None
    es = Tensor(edge_feats[1][None]) if use_edges else None
    rows = []
    for k in range(layer.heads):
        h = nn.matmul(x, layer.W[k])
        alpha = _head_attention(layer, k, h, ep, es, pairs, n, use_edges)
        if train_flag and dropout_attn > 0:
            alpha = nn.dropout(alpha, dropout_attn, True, rng)
        rows.append(alpha.data[0])
    return np.stack(rows)


def forward(model: GatModel, snapshots: GraphSnapshot | list[GraphSnapshot],
            train_flag: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Predictions: (N, out_dim) for one snapshot, (S, N, out_dim) for a list."""
    single = isinstance(snapshots, GraphSnapshot)
    snaps = [snapshots] if single else list(snapshots)
    x, ep, es, _ = _stack(snaps)
    if x.shape[2] != model.layers[0].in_dim:
        raise ShapeError(f"node feature dim {x.shape[2]} != model input dim "
                         f"{model.layers[0].in_dim}")
    out = forward_features(model, Tensor(x), Tensor(ep), Tensor(es),
                           train_flag=train_flag, rng=rng)
    return out.data[0] if single else out.data


@dataclass
class TrainData:
    """Standardized snapshots for fitting plus raw-target validation."""

    train: list[GraphSnapshot]
    val: list[GraphSnapshot] = field(default_factory=list)


def train(model: GatModel, data: TrainData, cfg: TrainConfig,
          ) -> list[dict[str, float]]:
    """Minibatch training; returns per-epoch train/val loss history."""
    if not data.train:
        raise ConfigError("empty training set")
    x, ep, es, y = _stack(data.train)
    if y.shape[-1] != model.out_dim:
        raise ConfigError(f"targets have horizon {y.shape[-1]} but model "
                          f"out_dim is {model.out_dim}")
    val_arrays = _stack(data.val) if data.val else None
    rng = np.random.default_rng(cfg.seed)
    params = model.param_list()
    opt = nn.make_optimizer(cfg.optimizer, params, cfg.lr,
                            weight_decay=cfg.weight_decay)
    n_train = x.shape[0]
    history: list[dict[str, float]] = []
    best_val = math.inf
    best_state: list[np.ndarray] | None = None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            pred = forward_features(model, Tensor(x[idx]), Tensor(ep[idx]),
                                    Tensor(es[idx]), train_flag=True, rng=rng)
            loss = nn.mse(pred, Tensor(y[idx]))
            if not math.isfinite(loss.item()):
                raise TrainingError(
                    f"non-finite loss (lr={cfg.lr}, epoch={epoch}, "
                    f"batch_start={start})")
            opt.zero_grad()
            nn.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        train_mse = total / n_train
        if val_arrays is not None:
            vx, vep, ves, vy = val_arrays
            vpred = forward_features(model, Tensor(vx), Tensor(vep),
                                     Tensor(ves), train_flag=False)
            val_mse = float(np.mean((vpred.data - vy) ** 2))
        else:
            val_mse = math.nan
        history.append({"epoch": float(epoch), "train_mse": train_mse,
                        "val_mse": val_mse})
        if cfg.checkpoint_best and val_arrays is not None and val_mse < best_val:
            best_val = val_mse
            best_state = [p.data.copy() for p in params]
    if best_state is not None:
        for p, saved in zip(params, best_state):
            p.data = saved
    return history


# ---------------------------------------------------------------- checkpoints

def save_gat(path, model: GatModel, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "gat",
        "hidden": [layer.head_dim for layer in model.layers],
        "heads": model.layers[0].heads,
        "slope": model.layers[0].slope,
        "out_dim": model.out_dim,
        "use_edges": model.use_edges,
        "activation": model.activation,
        "dropout_arch": model.dropout_arch,
        "dropout_attn": model.dropout_attn,
        "node_dim": model.node_dim,
        "edge_dim": model.edge_dim,
    }
    meta.update(extra_meta or {})
    nn.save_checkpoint(path, {k: v.data for k, v in model.parameters().items()},
                       meta)


def load_gat(path) -> GatModel:
    params, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "gat":
        raise ConfigError(f"checkpoint at {path} is not an attention model")
    cfg = TrainConfig(hidden=tuple(meta["hidden"]), heads=meta["heads"],
                      slope=meta["slope"], out_dim=meta["out_dim"],
                      use_edges=meta["use_edges"], activation=meta["activation"],
                      dropout_arch=meta["dropout_arch"],
                      dropout_attn=meta["dropout_attn"])
    model = init_model(cfg, meta["node_dim"], meta["edge_dim"])
    for name, tensor in model.parameters().items():
        tensor.data = params[name].reshape(tensor.data.shape)
    return model
