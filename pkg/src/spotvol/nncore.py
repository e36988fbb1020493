"""Dense-tensor reverse-mode differentiation engine and optimizers.

Small by intent: double precision only, dense arrays only, and exactly
the primitive set the attention and recurrent models need. Gradients
flow through a per-result parent graph; `backward` topologically sorts
the graph once and accumulates leaf gradients.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A double-precision array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward",
                 "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    # convenience arithmetic (wraps the module-level primitives)
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Topologically ordered record of one backward traversal."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> Tape:
    """Populate .grad on every requires_grad leaf reachable from `loss`."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if loss._done:
        raise TrainingError("backward already ran on this graph; rebuild the forward pass")
    loss._done = True
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return Tape(order)


# ----------------------------------------------------------------- primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))
    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))
    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))
    return _make(data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        _accum(a, _unbroadcast(g @ bt, a.data.shape))
        _accum(b, _unbroadcast(at @ g, b.data.shape))
    return _make(data, (a, b), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))
    return _make(data, (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, np.transpose(g, inv))
    return _make(data, (a,), bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}")
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)
    return _make(data, tuple(ts), bwd)


def slice_tensor(a, key) -> Tensor:
    a = as_tensor(a)
    data = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        _accum(a, full)
    return _make(data, (a,), bwd)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.data.shape).copy())
    return _make(data, (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * data)
    return _make(data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)
    return _make(data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum(a, g * data * (1.0 - data))
    return _make(data, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - data * data))
    return _make(data, (a,), bwd)


def leaky_relu(a, slope: float) -> Tensor:
    a = as_tensor(a)
    data = np.where(a.data >= 0, a.data, slope * a.data)

    def bwd(g):
        _accum(a, g * np.where(a.data >= 0, 1.0, slope))
    return _make(data, (a,), bwd)


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, data * (g - dot))
    return _make(data, (a,), bwd)


def dropout(a, p: float, train_flag: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scales kept entries by 1/(1-p) at train time."""
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not train_flag or p == 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p) / (1.0 - p)
    data = a.data * mask

    def bwd(g):
        _accum(a, g * mask)
    return _make(data, (a,), bwd)


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse: shapes differ, {pred.shape} vs {target.shape}")
    diff = sub(pred, target)
    return tmean(mul(diff, diff))


def edge_scores_to_matrix(pair_scores, self_scores,
                          pairs: list[tuple[int, int]], n: int) -> Tensor:
    """Scatter per-pair and per-node scalars into symmetric (n, n) matrices.

    pair_scores (..., P) fills both (i, j) and (j, i); self_scores (..., n)
    fills the diagonal. Leading batch axes pass through.
    """
    ps, ss = as_tensor(pair_scores), as_tensor(self_scores)
    if ps.data.shape[-1] != len(pairs):
        raise ShapeError(f"pair_scores last dim {ps.data.shape[-1]} != {len(pairs)} pairs")
    if ss.data.shape[-1] != n:
        raise ShapeError(f"self_scores last dim {ss.data.shape[-1]} != {n} nodes")
    if ps.data.shape[:-1] != ss.data.shape[:-1]:
        raise ShapeError(f"batch dims differ: {ps.shape} vs {ss.shape}")
    ii = np.asarray([i for i, _ in pairs], dtype=np.intp)
    jj = np.asarray([j for _, j in pairs], dtype=np.intp)
    dd = np.arange(n)
    data = np.zeros(ps.data.shape[:-1] + (n, n))
    data[..., ii, jj] = ps.data
    data[..., jj, ii] = ps.data
    data[..., dd, dd] = ss.data

    def bwd(g):
        _accum(ps, g[..., ii, jj] + g[..., jj, ii])
        _accum(ss, g[..., dd, dd])
    return _make(data, (ps, ss), bwd)


# ----------------------------------------------------------------- optimizers

class Optimizer:
    def __init__(self, params: list[Tensor], lr: float):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: list[np.ndarray] | None = None) -> None:
        raise NotImplementedError


class AdamW(Optimizer):
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None) -> None:
        gs = grads if grads is not None else [p.grad for p in self.params]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, (p, g) in enumerate(zip(self.params, gs)):
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            update = (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


class Adam(AdamW):
    """Classic Adam: L2 term folded into the gradient before the moments."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        super().__init__(params, lr, betas, eps, weight_decay=0.0)
        self.l2 = weight_decay

    def step(self, grads=None) -> None:
        gs = grads if grads is not None else [p.grad for p in self.params]
        if self.l2 != 0.0:
            gs = [None if g is None else g + self.l2 * p.data
                  for p, g in zip(self.params, gs)]
        super().step(gs)


class RMSProp(Optimizer):
    def __init__(self, params, lr: float, alpha: float = 0.99, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        super().__init__(params, lr)
        self.alpha = alpha
        self.eps = eps
        self.weight_decay = weight_decay
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None) -> None:
        gs = grads if grads is not None else [p.grad for p in self.params]
        for k, (p, g) in enumerate(zip(self.params, gs)):
            if g is None:
                continue
            if self.weight_decay != 0.0:
                g = g + self.weight_decay * p.data
            self.v[k] = self.alpha * self.v[k] + (1.0 - self.alpha) * g * g
            p.data -= self.lr * g / (np.sqrt(self.v[k]) + self.eps)


def make_optimizer(name: str, params, lr: float, **kw) -> Optimizer:
    table = {"adamw": AdamW, "adam": Adam, "rmsprop": RMSProp}
    key = name.lower()
    if key not in table:
        raise ConfigError(f"unknown optimizer {name!r}; choose from {sorted(table)}")
    return table[key](params, lr, **kw)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path: str | Path, params: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    """Write `path` (little-endian float64 blob) and `path`.json (manifest)."""
    path = Path(path)
    names = list(params.keys())
    blob = bytearray()
    shapes = {}
    for name in names:
        arr = np.asarray(params[name], dtype=np.float64)
        shapes[name] = list(arr.shape)
        blob.extend(struct.pack(f"<{arr.size}d", *arr.ravel().tolist()))
    manifest = {
        "byte_order": "little",
        "dtype": "float64",
        "names": names,
        "shapes": shapes,
        "meta": meta or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(blob))
    Path(str(path) + ".json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    blob = path.read_bytes()
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name in manifest["names"]:
        shape = tuple(manifest["shapes"][name])
        size = int(np.prod(shape)) if shape else 1
        vals = struct.unpack_from(f"<{size}d", blob, offset)
        offset += 8 * size
        out[name] = np.asarray(vals, dtype=np.float64).reshape(shape)
    return out, manifest.get("meta", {})
