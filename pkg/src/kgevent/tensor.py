"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the extraction model needs are provided. Every op
records a closure mapping the output gradient to parent gradients.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DEBUG = False


class ShapeMismatch(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes " + " vs ".join(str(s) for s in shapes))


class NotScalar(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


class MissingGrad(ValueError):
    pass


def set_debug(flag: bool) -> None:
    """When on, every op checks its output for NaN/inf."""
    global DEBUG
    DEBUG = flag


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced")
    track = any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, True, tuple(parents), backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf with requires_grad."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# --- ops -------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape) from None

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatch("mul", a.shape, b.shape) from None

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), bw)


def batched_matvec(mats, vecs) -> Tensor:
    """Row-wise ``mats[k] @ vecs[k]`` for (E, m, n) matrices and (E, n) vectors."""
    mats, vecs = _as_tensor(mats), _as_tensor(vecs)
    if mats.data.ndim != 3 or vecs.data.ndim != 2 or mats.shape[0] != vecs.shape[0] \
            or mats.shape[2] != vecs.shape[1]:
        raise ShapeMismatch("batched_matvec", mats.shape, vecs.shape)
    out = np.einsum("kij,kj->ki", mats.data, vecs.data)

    def bw(g):
        return np.einsum("ki,kj->kij", g, vecs.data), np.einsum("kij,ki->kj", mats.data, g)

    return _result(out, (mats, vecs), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return _result(out, tuple(tensors), bw)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", x.shape, tuple(shape)) from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), bw)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def dropout(x, p: float, seed=None, training: bool = True) -> Tensor:
    """Inverted dropout; the mask comes from ``seed`` (an int or a numpy Generator)."""
    x = _as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def gather_rows(x, index) -> Tensor:
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeMismatch("gather_rows", x.shape, f"index range [{index.min()}, {index.max()}]")

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), bw)


def scatter_sum(x, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets; empty buckets are zero."""
    x = _as_tensor(x)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise ShapeMismatch("scatter_sum", x.shape, seg.shape)
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, seg, x.data)
    return _result(out, (x,), lambda g: (g[seg],))


def segment_softmax(logits, segment_ids, num_segments: int | None = None) -> Tensor:
    """Softmax of each contiguous segment of ``logits`` (shape (E,) or (E, 1))."""
    logits = _as_tensor(logits)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if logits.shape[0] != seg.shape[0] or (logits.data.ndim == 2 and logits.shape[1] != 1) \
            or logits.data.ndim > 2:
        raise ShapeMismatch("segment_softmax", logits.shape, seg.shape)
    if seg.size and np.any(np.diff(seg) < 0):
        raise ValueError("segment ids must be sorted nondecreasing")
    if num_segments is None:
        num_segments = int(seg.max()) + 1 if seg.size else 0
    flat = logits.data.reshape(-1)
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, flat)
    e = np.exp(flat - seg_max[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    y = e / denom[seg]

    def bw(g):
        g = g.reshape(-1)
        dot = np.zeros(num_segments)
        np.add.at(dot, seg, g * y)
        return ((y * (g - dot[seg])).reshape(logits.shape),)

    return _result(y.reshape(logits.shape), (logits,), bw)


def log_softmax(x) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _result(out, (x,), bw)


def cross_entropy(logits, labels, ignore_index: int = -100, class_weights=None) -> Tensor:
    """Mean negative log-likelihood over rows whose label is not ``ignore_index``.

    With ``class_weights`` the mean is weighted (normalised by the summed
    weights). Zero counted rows gives a constant 0.
    """
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeMismatch("cross_entropy", logits.shape, labels.shape)
    n_classes = logits.shape[1]
    keep = labels != ignore_index
    bad = keep & ((labels < 0) | (labels >= n_classes))
    if np.any(bad):
        raise LabelOutOfRange(f"label {labels[bad][0]} outside [0, {n_classes})")
    if not np.any(keep):
        return Tensor(0.0)
    rows = np.nonzero(keep)[0]
    y = labels[rows]
    w = np.ones(len(rows)) if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]
    denom = w.sum()
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -(w * logp[rows, y]).sum() / denom

    def bw(g):
        grad = np.zeros_like(logits.data)
        soft = np.exp(logp[rows])
        soft[np.arange(len(rows)), y] -= 1.0
        grad[rows] = soft * (w / denom)[:, None]
        return (grad * g,)

    return _result(np.asarray(loss), (logits,), bw)


# --- parameters and optimisation -------------------------------------------


class ParamStore:
    """Named trainable tensors plus Adam moment state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.state: dict[str, dict] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def n_values(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()

    def save(self, directory) -> None:
        """``manifest.json`` (name, shape, offset) plus ``params.bin`` (little-endian float64)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest, offset = [], 0
        with open(directory / "params.bin", "wb") as fh:
            for name in sorted(self.params):
                arr = np.ascontiguousarray(self.params[name].data, dtype="<f8")
                manifest.append({"name": name, "shape": list(self.params[name].shape), "offset": offset})
                fh.write(arr.tobytes())
                offset += arr.size
        (directory / "manifest.json").write_text(json.dumps({"params": manifest}, indent=1) + "\n")

    def load(self, directory) -> None:
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())["params"]
        flat = np.fromfile(directory / "params.bin", dtype="<f8").astype(np.float64)
        for entry in manifest:
            n = int(np.prod(entry["shape"])) if entry["shape"] else 1
            arr = flat[entry["offset"]:entry["offset"] + n].reshape(tuple(entry["shape"]))
            if entry["name"] not in self.params:
                raise KeyError(f"checkpoint has unknown parameter {entry['name']!r}")
            if self.params[entry["name"]].shape != arr.shape:
                raise ShapeMismatch("load " + entry["name"], self.params[entry["name"]].shape, arr.shape)
            self.params[entry["name"]].data = arr.copy()


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, frozen=()) -> None:
    """Bias-corrected Adam update of every parameter, then zero the gradients."""
    for name, p in store:
        if name in frozen:
            p.grad = np.zeros_like(p.data)
            continue
        if p.grad is None:
            raise MissingGrad(name)
        st = store.state.setdefault(name, {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0})
        st["t"] += 1
        st["m"] = beta1 * st["m"] + (1 - beta1) * p.grad
        st["v"] = beta2 * st["v"] + (1 - beta2) * p.grad * p.grad
        mhat = st["m"] / (1 - beta1 ** st["t"])
        vhat = st["v"] / (1 - beta2 ** st["t"])
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
        p.grad = np.zeros_like(p.data)
