"""Node-mask explanations for the attention forecaster.

For a target node i at snapshot b, a soft mask m in [0,1]^N scales the
node features (and edges as m_j * m_k, self-edges as m_j^2) with the
target's own mask pinned at 1. The mask minimizes

    (yhat_masked_i - yhat_full_i)^2 + lam1 * sum(m) + lam2 * mean entropy(m)

by Adam on the mask logits. The top-n_star mask values (target always
included) form the explanation subgraph; inclusion counts across
timestamps aggregate to a percentage heatmap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nncore as nn
from .errors import ConfigError, EmptyInputError, TrainingError
from .gat import GatModel, forward_features
from .graphs import GraphSnapshot
from .nncore import Tensor
from .panel import pair_list


@dataclass
class ExplainConfig:
    iters: int = 200
    lr: float = 0.01
    lam1: float = 0.005
    lam2: float = 0.1
    optimizer: str = "adam"
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self) -> None:
        if self.iters < 1 or self.lr <= 0:
            raise ConfigError("iters must be >= 1 and lr positive")


@dataclass
class ExplainResult:
    node: int
    b: int
    mask: np.ndarray               # (N,) in [0,1], target entry as learned
    selected: list[int]            # top n_star nodes, target included
    trace: list[float]
    flagged: bool                  # smoothed objective increased late in the run


def _selection(mask: np.ndarray, target: int, n_star: int) -> list[int]:
    """Target plus the n_star-1 highest-mask other nodes, index-stable."""
    order = np.lexsort((np.arange(len(mask)), -mask))
    picks = [target]
    for idx in order:
        if len(picks) == n_star:
            break
        if int(idx) != target:
            picks.append(int(idx))
    return sorted(picks)


def _smoothed_increase(trace: list[float], window: int = 10) -> bool:
    """True if the moving-average objective rises after the first 10%."""
    if len(trace) < 2 * window:
        return False
    arr = np.asarray(trace)
    kernel = np.ones(window) / window
    smooth = np.convolve(arr, kernel, mode="valid")
    start = max(1, int(0.1 * len(smooth)))
    tail = smooth[start - 1:]
    tol = 1e-12 + 1e-6 * abs(float(smooth[0]))
    return bool(np.any(np.diff(tail) > tol))


def explain_node(model: GatModel, snapshot: GraphSnapshot, i: int,
                 n_star: int = 5, cfg: ExplainConfig | None = None,
                 ) -> ExplainResult:
    """Learn the soft node mask most faithful to node i's full prediction."""
    cfg = cfg or ExplainConfig()
    n = snapshot.n_assets
    if not 0 <= i < n:
        raise ConfigError(f"node {i} out of range for {n} assets")
    if not 1 <= n_star <= n:
        raise ConfigError(f"n_star must be in [1, {n}], got {n_star}")
    pairs = pair_list(n)
    x_const = Tensor(snapshot.node_features[None])
    ep_const = Tensor(snapshot.edge_features[None])
    es_const = Tensor(snapshot.self_edge_features[None])
    full = forward_features(model, x_const, ep_const, es_const,
                            train_flag=False)
    full_i = Tensor(full.data[0, i].copy())

    rng = np.random.default_rng(cfg.seed)
    rho = Tensor(rng.normal(0.0, cfg.init_scale, (n, 1)), requires_grad=True)
    onehot = np.zeros((n, 1))
    onehot[i, 0] = 1.0
    gi = np.zeros((len(pairs), n))
    gj = np.zeros((len(pairs), n))
    for p, (a, b) in enumerate(pairs):
        gi[p, a] = 1.0
        gj[p, b] = 1.0
    gi_t, gj_t = Tensor(gi), Tensor(gj)
    keep = Tensor(1.0 - onehot)
    pin = Tensor(onehot)

    opt = nn.make_optimizer(cfg.optimizer, [rho], cfg.lr)
    trace: list[float] = []
    for _ in range(cfg.iters):
        m = nn.sigmoid(rho)                      # (N, 1), unpinned
        m_pin = nn.add(nn.mul(m, keep), pin)     # target pinned to 1
        node_scale = nn.reshape(m_pin, (1, n, 1))
        pair_scale = nn.reshape(nn.mul(nn.matmul(gi_t, m_pin),
                                       nn.matmul(gj_t, m_pin)),
                                (1, len(pairs), 1))
        self_scale = nn.reshape(nn.mul(m_pin, m_pin), (1, n, 1))
        masked = forward_features(model,
                                  nn.mul(x_const, node_scale),
                                  nn.mul(ep_const, pair_scale),
                                  nn.mul(es_const, self_scale),
                                  train_flag=False)
        pred_i = nn.slice_tensor(masked, (0, i))
        fidelity = nn.tmean(nn.mul(nn.sub(pred_i, full_i),
                                   nn.sub(pred_i, full_i)))
        size_pen = nn.mul(nn.tsum(m), cfg.lam1)
        ent = nn.sub(Tensor(0.0),
                     nn.add(nn.mul(m, nn.log(m)),
                            nn.mul(nn.sub(1.0, m), nn.log(nn.sub(1.0, m)))))
        ent_pen = nn.mul(nn.tmean(ent), cfg.lam2)
        obj = nn.add(nn.add(fidelity, size_pen), ent_pen)
        val = obj.item()
        if not math.isfinite(val):
            raise TrainingError(f"explainer objective diverged at iteration "
                                f"{len(trace)}; trace={trace[-5:]}")
        trace.append(val)
        opt.zero_grad()
        nn.backward(obj)
        opt.step()
    mask = 1.0 / (1.0 + np.exp(-rho.data[:, 0]))
    return ExplainResult(node=i, b=snapshot.b, mask=mask,
                         selected=_selection(mask, i, n_star), trace=trace,
                         flagged=_smoothed_increase(trace))


@dataclass
class FrequencyHeatmap:
    """Inclusion counts of source nodes in targets' explanation subgraphs."""

    counts: np.ndarray             # (N, N) int, [source, target]
    denom: np.ndarray              # (N,) timestamps per target
    n_star: int
    assets: list[str] = field(default_factory=list)

    @property
    def matrix(self) -> np.ndarray:
        """Percentages: 100 * count / timestamps, (source, target)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            out = 100.0 * self.counts / self.denom[None, :]
        return np.where(self.denom[None, :] > 0, out, 0.0)

    def column_identity_holds(self) -> bool:
        """Each timestamp contributes exactly n_star inclusions (exact)."""
        active = self.denom > 0
        return bool(np.all(self.counts.sum(axis=0)[active]
                           == self.n_star * self.denom[active]))


def frequency_heatmap(results: list[ExplainResult], n_assets: int,
                      n_star: int, assets: list[str] | None = None,
                      ) -> FrequencyHeatmap:
    """Aggregate explanation subgraphs into per-target inclusion rates."""
    if not results:
        raise EmptyInputError("no explanation results to aggregate")
    counts = np.zeros((n_assets, n_assets), dtype=np.int64)
    denom = np.zeros(n_assets, dtype=np.int64)
    for res in results:
        if len(res.selected) != n_star:
            raise ConfigError(f"result for node {res.node} at b={res.b} has "
                              f"{len(res.selected)} selections, want {n_star}")
        denom[res.node] += 1
        for src in res.selected:
            counts[src, res.node] += 1
    return FrequencyHeatmap(counts=counts, denom=denom, n_star=n_star,
                            assets=assets or [])
