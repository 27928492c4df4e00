"""Message-passing layers over sentence graphs: GEANet, ECC and single-head GAT.

All three share the update ``x_i' = MLP_theta(x_i) + sum_j msg(j -> i)`` and
differ only in how the neighbour messages are weighted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParamStore, ShapeMismatch, Tensor

VARIANTS = ("geanet", "ecc", "gat")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        self.w = store.add(f"{name}.w", glorot(rng, d_in, d_out))
        self.b = store.add(f"{name}.b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)


class MLP:
    """Linear -> ReLU -> Dropout -> Linear."""

    def __init__(self, store: ParamStore, name: str, d_in: int, hidden: int, d_out: int,
                 rng: np.random.Generator, dropout: float = 0.0):
        self.first = Linear(store, f"{name}.0", d_in, hidden, rng)
        self.second = Linear(store, f"{name}.1", hidden, d_out, rng)
        self.dropout = dropout
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeMismatch("mlp input", x.shape, (self.d_in,))
        h = T.relu(self.first(x))
        if training and self.dropout > 0:
            h = T.dropout(h, self.dropout, rng)
        return self.second(h)


@dataclass
class GraphBatch:
    """Directed message edges ``src -> dst`` sorted by (dst, src), one embedding row each."""

    x: Tensor
    src: np.ndarray
    dst: np.ndarray
    edge_embeddings: Tensor

    def __post_init__(self):
        n = self.x.shape[0]
        if len(self.src) != len(self.dst) or self.edge_embeddings.shape[0] != len(self.src):
            raise ShapeMismatch("graph batch", (len(self.src), len(self.dst)), self.edge_embeddings.shape)
        if len(self.src) and (min(self.src.min(), self.dst.min()) < 0 or max(self.src.max(), self.dst.max()) >= n):
            raise IndexError("edge endpoint out of range")
        if len(self.dst) and np.any(np.diff(self.dst) < 0):
            raise ValueError("edges must be grouped by destination")

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def num_edges(self) -> int:
        return len(self.src)

    def with_states(self, x: Tensor) -> "GraphBatch":
        return GraphBatch(x, self.src, self.dst, self.edge_embeddings)

    @classmethod
    def from_undirected(cls, x, edges, edge_embeddings) -> "GraphBatch":
        """Each undirected edge ``k = (u, v)`` sends messages both ways, sharing row k."""
        x = T._as_tensor(x)
        edge_embeddings = T._as_tensor(edge_embeddings)
        directed = []
        for k, (u, v) in enumerate(edges):
            directed.append((v, u, k))
            directed.append((u, v, k))
        directed.sort(key=lambda t: (t[1], t[0], t[2]))
        src = np.array([s for s, _, _ in directed], dtype=np.int64)
        dst = np.array([d for _, d, _ in directed], dtype=np.int64)
        rows = np.array([k for _, _, k in directed], dtype=np.int64)
        if len(edges) == 0:
            emb = Tensor(np.zeros((0, edge_embeddings.shape[-1] if edge_embeddings.data.ndim == 2 else 0)))
        else:
            emb = T.gather_rows(edge_embeddings, rows)
        return cls(x, src, dst, emb)


class GnnLayer:
    def __init__(self, variant: str, theta: MLP, psi: MLP | None = None,
                 gat_w: Tensor | None = None, gat_a: Tensor | None = None, d: int = 0):
        if variant not in VARIANTS:
            raise ValueError(f"unknown GNN variant {variant!r}")
        self.variant = variant
        self.theta = theta
        self.psi = psi
        self.gat_w = gat_w
        self.gat_a = gat_a
        self.d = d

    @classmethod
    def create(cls, store: ParamStore, name: str, variant: str, d: int, d_edge: int,
               rng: np.random.Generator, dropout: float = 0.0, theta_hidden: int | None = None,
               psi_hidden: int | None = None) -> "GnnLayer":
        theta = MLP(store, f"{name}.theta", d, theta_hidden or d, d, rng, dropout)
        if variant == "geanet":
            psi = MLP(store, f"{name}.psi", d_edge, psi_hidden or d_edge, 1, rng, dropout)
            return cls(variant, theta, psi, d=d)
        if variant == "ecc":
            psi = MLP(store, f"{name}.psi", d_edge, psi_hidden or d_edge, d * d, rng, dropout)
            # keep the initial per-edge matrices small so sums over neighbours stay bounded
            psi.second.w.data *= 1.0 / np.sqrt(d)
            return cls(variant, theta, psi, d=d)
        if variant == "gat":
            w = store.add(f"{name}.w", glorot(rng, d, d))
            a = store.add(f"{name}.a", glorot(rng, 2 * d, 1))
            return cls(variant, theta, gat_w=w, gat_a=a, d=d)
        raise ValueError(f"unknown GNN variant {variant!r}")

    def attention(self, batch: GraphBatch, training: bool = False, rng=None) -> Tensor:
        """Per-edge weights normalised over each destination's neighbourhood."""
        if self.variant == "geanet":
            logits = self.psi(batch.edge_embeddings, training, rng)
        elif self.variant == "gat":
            wx = T.matmul(batch.x, self.gat_w)
            pair = T.concat([T.gather_rows(wx, batch.dst), T.gather_rows(wx, batch.src)], axis=1)
            logits = T.leaky_relu(T.matmul(pair, self.gat_a), 0.2)
        else:
            raise ValueError("ECC has no attention weights")
        return T.segment_softmax(logits, batch.dst, batch.num_nodes)

    def __call__(self, batch: GraphBatch, training: bool = False, rng=None) -> Tensor:
        if batch.x.shape[1] != self.theta.d_in:
            raise ShapeMismatch(self.variant, batch.x.shape, (batch.num_nodes, self.theta.d_in))
        self_term = self.theta(batch.x, training, rng)
        if batch.num_edges == 0:
            return self_term
        n = batch.num_nodes
        if self.variant == "geanet":
            a = self.attention(batch, training, rng)
            msg = T.mul(T.gather_rows(batch.x, batch.src), a)
        elif self.variant == "ecc":
            d = self.d
            mats = T.reshape(self.psi(batch.edge_embeddings, training, rng), (batch.num_edges, d, d))
            msg = T.batched_matvec(mats, T.gather_rows(batch.x, batch.src))
        else:
            a = self.attention(batch, training, rng)
            wx = T.matmul(batch.x, self.gat_w)
            msg = T.mul(T.gather_rows(wx, batch.src), a)
        return T.add(self_term, T.scatter_sum(msg, batch.dst, n))


def geanet_forward(batch: GraphBatch, layer: GnnLayer, training: bool = False, rng=None) -> Tensor:
    assert layer.variant == "geanet"
    return layer(batch, training, rng)


def ecc_forward(batch: GraphBatch, layer: GnnLayer, training: bool = False, rng=None) -> Tensor:
    assert layer.variant == "ecc"
    return layer(batch, training, rng)


def gat_forward(batch: GraphBatch, layer: GnnLayer, training: bool = False, rng=None) -> Tensor:
    assert layer.variant == "gat"
    return layer(batch, training, rng)


def stack_forward(batch: GraphBatch, layers: list[GnnLayer], training: bool = False, rng=None) -> Tensor:
    """Apply layers in order; edge embeddings stay fixed."""
    x = batch.x
    for layer in layers:
        x = layer(batch.with_states(x), training, rng)
    return x
