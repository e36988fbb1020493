"""Graph snapshot assembly, chronological splitting, standardization.

Each 30-minute timestamp b yields one fully connected graph. Node i's
feature vector stacks its own spot-vol lags 0..L and then, for every
other asset j in ascending order, the covol(i,j) lags; the unordered
edge (i,j) carries [vov_i lags, vov_j lags, covov_ij lags]. Lags cross
day boundaries by global grid-index adjacency. Self edges (used by the
attention softmax's k=i term) carry the vov of the node in all three
blocks, since the diagonal of the co-vol-of-vol matrix is the vol-of-vol.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np

from . import artifacts
from .errors import ConfigError, FormatError
from .panel import SpotPanel, pair_list

logger = logging.getLogger(__name__)

HORIZONS = ("single", "multi")
MULTI_STEPS = 14


@dataclass
class GraphSnapshot:
    """One fully connected graph with lagged features and raw targets."""

    b: int
    target_date: dt.date
    node_features: np.ndarray       # (N, M), M = N*(L+1)
    edge_features: np.ndarray       # (P, E), E = 3*(L+1), pairs i < j
    self_edge_features: np.ndarray  # (N, E)
    targets: np.ndarray             # (N,) single or (N, 14) multi
    horizon: str = "single"

    def __post_init__(self) -> None:
        n = self.node_features.shape[0]
        if self.node_features.shape[1] % n:
            raise ValueError("node feature length must be N*(L+1)")
        if self.edge_features.shape[0] != n * (n - 1) // 2:
            raise ValueError("need one edge vector per unordered pair")
        if self.edge_features.shape[1] != self.self_edge_features.shape[1]:
            raise ValueError("pair and self edge lengths differ")
        if self.horizon not in HORIZONS:
            raise ValueError(f"unknown horizon {self.horizon!r}")

    @property
    def n_assets(self) -> int:
        return self.node_features.shape[0]

    @property
    def lags(self) -> int:
        return self.node_features.shape[1] // self.n_assets - 1


def _lag_block(series: np.ndarray, b: int, L: int) -> np.ndarray:
    """[x_b, x_{b-1}, ..., x_{b-L}] (lag 0 first)."""
    return series[b - L: b + 1][::-1]


def snapshot_at(panel: SpotPanel, b: int, L: int, horizon: str = "single",
                ) -> GraphSnapshot:
    """Build the snapshot anchored at input instant b (features use <= b)."""
    n = panel.n_assets
    width = L + 1
    node = np.empty((n, n * width))
    for i in range(n):
        node[i, :width] = _lag_block(panel.vol[i], b, L)
        col = width
        for j in range(n):
            if j == i:
                continue
            node[i, col: col + width] = _lag_block(panel.covol_entry(i, j), b, L)
            col += width
    pairs = pair_list(n)
    edge = np.empty((len(pairs), 3 * width))
    for p, (i, j) in enumerate(pairs):
        edge[p, :width] = _lag_block(panel.vov[i], b, L)
        edge[p, width: 2 * width] = _lag_block(panel.vov[j], b, L)
        edge[p, 2 * width:] = _lag_block(panel.covov[p], b, L)
    self_edge = np.empty((n, 3 * width))
    for i in range(n):
        blk = _lag_block(panel.vov[i], b, L)
        self_edge[i, :width] = blk
        self_edge[i, width: 2 * width] = blk
        self_edge[i, 2 * width:] = blk

    if horizon == "single":
        targets = panel.vol[:, b + 1].copy()
        target_date = panel.date_of(b + 1)
    elif horizon == "multi":
        targets = panel.vol[:, b + 1: b + 1 + MULTI_STEPS].copy()
        target_date = panel.date_of(b + 1)
    else:
        raise ValueError(f"unknown horizon {horizon!r}")
    return GraphSnapshot(b=b, target_date=target_date, node_features=node,
                         edge_features=edge, self_edge_features=self_edge,
                         targets=targets, horizon=horizon)


def build_snapshots(panel: SpotPanel, L: int, horizon: str = "single",
                    ) -> list[GraphSnapshot]:
    """One snapshot per eligible instant.

    Single-step: every b with L lags behind it and a next instant ahead.
    Multi-step: end-of-day instants whose entire next day is in the panel.
    """
    if horizon not in HORIZONS:
        raise ValueError(f"unknown horizon {horizon!r}")
    T = panel.length
    if L < 0:
        raise ValueError("L must be nonnegative")
    if L >= T:
        raise ValueError(f"L={L} must be smaller than panel length {T}")
    need_ahead = 1 if horizon == "single" else MULTI_STEPS
    if T <= L + need_ahead:
        raise ValueError(
            f"panel length {T} too short for L={L} and horizon {horizon!r}"
        )
    out = []
    if horizon == "single":
        for b in range(L, T - 1):
            out.append(snapshot_at(panel, b, L, horizon))
    else:
        per_day = panel.per_day
        if per_day != MULTI_STEPS:
            raise ValueError(
                f"multi-step horizon expects {MULTI_STEPS} grid points per day, "
                f"panel has {per_day}"
            )
        n_days = len(panel.dates)
        for d in range(n_days - 1):
            b = (d + 1) * per_day - 1
            if b < L:
                continue
            out.append(snapshot_at(panel, b, L, horizon))
    return out


def target_calendar(panel: SpotPanel, horizon: str = "single") -> list[dt.date]:
    """Dates of every POTENTIAL forecast target, before lag trimming.

    Single-step: one per panel instant; multi-step: one per day. Split
    counts quoted 'before lag trimming' are computed on this calendar.
    """
    if horizon == "single":
        return [panel.date_of(b) for b in range(panel.length)]
    if horizon == "multi":
        return list(panel.dates)
    raise ValueError(f"unknown horizon {horizon!r}")


@dataclass
class DatasetSplit:
    """Chronological index partition over a snapshot sequence."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    n_beyond: int = 0  # items after the test boundary (excluded)

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def split_chronological(snapshots, boundaries) -> DatasetSplit:
    """Assign items to train/val/test by their target date.

    `snapshots` may hold GraphSnapshot objects or plain dates;
    `boundaries` is (train_end, val_end, test_end), inclusive ends,
    strictly increasing.
    """
    b = list(boundaries)
    if len(b) != 3:
        raise ConfigError(f"need 3 boundaries (train/val/test end), got {len(b)}")
    train_end, val_end, test_end = b
    if not (train_end < val_end < test_end):
        raise ConfigError(
            f"boundaries must be strictly increasing, got {train_end}, "
            f"{val_end}, {test_end}"
        )
    train, val, test = [], [], []
    beyond = 0
    for idx, snap in enumerate(snapshots):
        date = snap.target_date if isinstance(snap, GraphSnapshot) else snap
        if date <= train_end:
            train.append(idx)
        elif date <= val_end:
            val.append(idx)
        elif date <= test_end:
            test.append(idx)
        else:
            beyond += 1
    if not train or not val or not test:
        raise ConfigError(
            f"empty partition: counts {len(train)}/{len(val)}/{len(test)}"
        )
    return DatasetSplit(train=np.asarray(train), val=np.asarray(val),
                        test=np.asarray(test), n_beyond=beyond)


@dataclass
class FeatureStats:
    """Per-position train-split moments for the standardization map."""

    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    self_mean: np.ndarray
    self_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in (
            "node_mean", "node_std", "edge_mean", "edge_std",
            "self_mean", "self_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in (
            "node_mean", "node_std", "edge_mean", "edge_std",
            "self_mean", "self_std")})

    def apply(self, snap: GraphSnapshot) -> GraphSnapshot:
        return GraphSnapshot(
            b=snap.b, target_date=snap.target_date,
            node_features=(snap.node_features - self.node_mean) / self.node_std,
            edge_features=(snap.edge_features - self.edge_mean) / self.edge_std,
            self_edge_features=(snap.self_edge_features - self.self_mean) / self.self_std,
            targets=snap.targets.copy(), horizon=snap.horizon,
        )

    def inverse(self, snap: GraphSnapshot) -> GraphSnapshot:
        return GraphSnapshot(
            b=snap.b, target_date=snap.target_date,
            node_features=snap.node_features * self.node_std + self.node_mean,
            edge_features=snap.edge_features * self.edge_std + self.edge_mean,
            self_edge_features=snap.self_edge_features * self.self_std + self.self_mean,
            targets=snap.targets.copy(), horizon=snap.horizon,
        )


def _moments(stack: np.ndarray, label: str) -> tuple[np.ndarray, np.ndarray]:
    # moments per feature position, pooled over snapshots AND rows:
    # rows (nodes or pairs) are instances of one shared feature space, so
    # cross-row level differences survive standardization
    flat = stack.reshape(-1, stack.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    zero = std == 0.0
    if zero.any():
        logger.warning("%d zero-variance %s feature positions, std clamped to 1",
                       int(zero.sum()), label)
        std = np.where(zero, 1.0, std)
    return mean, std


def standardize(split: DatasetSplit, snapshots: list[GraphSnapshot],
                ) -> tuple[list[GraphSnapshot], FeatureStats]:
    """Standardize every feature position with train-only statistics.

    Targets stay in raw variance units. Returns new snapshots; inputs
    are not mutated.
    """
    if len(split.train) == 0:
        raise ConfigError("train partition is empty")
    train = [snapshots[i] for i in split.train]
    node_mean, node_std = _moments(
        np.stack([s.node_features for s in train]), "node")
    edge_mean, edge_std = _moments(
        np.stack([s.edge_features for s in train]), "edge")
    self_mean, self_std = _moments(
        np.stack([s.self_edge_features for s in train]), "self-edge")
    stats = FeatureStats(node_mean, node_std, edge_mean, edge_std,
                         self_mean, self_std)
    return [stats.apply(s) for s in snapshots], stats


# -- snapshot store -----------------------------------------------------


def write_snapshot_csv(path, snap: GraphSnapshot) -> None:
    lines = []
    lines.append(f"# b={snap.b}")
    lines.append(f"# target_date={snap.target_date.isoformat()}")
    lines.append(f"# horizon={snap.horizon}")
    for i, row in enumerate(snap.node_features):
        lines.append(",".join(["node", str(i)] + [artifacts.fmt(float(v)) for v in row]))
    for p, row in enumerate(snap.edge_features):
        lines.append(",".join(["edge", str(p)] + [artifacts.fmt(float(v)) for v in row]))
    for i, row in enumerate(snap.self_edge_features):
        lines.append(",".join(["self", str(i)] + [artifacts.fmt(float(v)) for v in row]))
    t = np.atleast_2d(snap.targets) if snap.targets.ndim == 1 else snap.targets
    if snap.targets.ndim == 1:
        for i in range(len(snap.targets)):
            lines.append(",".join(["target", str(i), artifacts.fmt(float(snap.targets[i]))]))
    else:
        for i, row in enumerate(t):
            lines.append(",".join(["target", str(i)] + [artifacts.fmt(float(v)) for v in row]))
    artifacts.atomic_write_text(path, "\n".join(lines) + "\n")


def read_snapshot_csv(path) -> GraphSnapshot:
    meta: dict[str, str] = {}
    rows: dict[str, list[tuple[int, list[float]]]] = {
        "node": [], "edge": [], "self": [], "target": []}
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                k, v = line.lstrip("#").strip().split("=", 1)
                meta[k.strip()] = v.strip()
                continue
            parts = line.split(",")
            rows[parts[0]].append((int(parts[1]), [float(x) for x in parts[2:]]))
    if not rows["node"]:
        raise FormatError(f"snapshot file {path} has no node rows")

    def stack(kind: str) -> np.ndarray:
        items = sorted(rows[kind])
        return np.asarray([v for _, v in items], dtype=np.float64)

    horizon = meta.get("horizon", "single")
    targets = stack("target")
    if horizon == "single":
        targets = targets[:, 0]
    return GraphSnapshot(
        b=int(meta["b"]),
        target_date=dt.date.fromisoformat(meta["target_date"]),
        node_features=stack("node"),
        edge_features=stack("edge"),
        self_edge_features=stack("self"),
        targets=targets,
        horizon=horizon,
    )
