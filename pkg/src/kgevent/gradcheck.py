"""Central finite-difference checks for the autodiff engine and the GNN layers."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a| + |n|, 1e-5)`` in the 2-norm over all entries.

    The floor keeps exactly-zero gradients (e.g. a bias feeding a softmax)
    from dividing finite-difference round-off by ~0.
    """
    diff = np.linalg.norm(analytic - numeric)
    return float(diff / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-5))


def numeric_grad(fn: Callable[[], T.Tensor], leaf: T.Tensor, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = fn().item()
        flat[i] = old - eps
        down = fn().item()
        flat[i] = old
        g[i] = (up - down) / (2 * eps)
    return grad


def check(fn: Callable[[], T.Tensor], leaves: list[T.Tensor], eps: float = 1e-5) -> float:
    """Largest relative error between backprop and finite differences over ``leaves``.

    ``fn`` must rebuild the scalar from the current leaf values on every call.
    """
    for leaf in leaves:
        leaf.grad = None
    T.backward(fn())
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        worst = max(worst, relative_error(analytic, numeric_grad(fn, leaf, eps)))
    return worst


def _leaf(rng, *shape, low=-1.0, high=1.0):
    return T.Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def op_cases(seed: int) -> dict[str, tuple[Callable[[], T.Tensor], list[T.Tensor]]]:
    """One scalar-valued probe per differentiable op, at random dims <= 8."""
    rng = np.random.default_rng(seed)
    n, m, k = (int(v) for v in rng.integers(2, 9, size=3))
    cases = {}

    a, b = _leaf(rng, n, m), _leaf(rng, m, k)
    w = rng.normal(size=(n, k))
    cases["matmul"] = (lambda: T.sum_all(T.mul(T.matmul(a, b), w)), [a, b])

    c, bias = _leaf(rng, n, m), _leaf(rng, m)
    w2 = rng.normal(size=(n, m))
    cases["add"] = (lambda: T.sum_all(T.mul(T.add(c, bias), w2)), [c, bias])

    d, e = _leaf(rng, n, m), _leaf(rng, n, 1)
    cases["mul"] = (lambda: T.sum_all(T.mul(T.mul(d, e), w2)), [d, e])

    f1, f2 = _leaf(rng, n, m), _leaf(rng, n, k)
    w3 = rng.normal(size=(n, m + k))
    cases["concat"] = (lambda: T.sum_all(T.mul(T.concat([f1, f2], axis=1), w3)), [f1, f2])

    r = _leaf(rng, n, m)
    cases["relu"] = (lambda: T.sum_all(T.mul(T.relu(r), w2)), [r])
    lr_ = _leaf(rng, n, m)
    cases["leaky_relu"] = (lambda: T.sum_all(T.mul(T.leaky_relu(lr_), w2)), [lr_])

    dr = _leaf(rng, n, m)
    mask_seed = int(rng.integers(1 << 30))
    cases["dropout"] = (lambda: T.sum_all(T.mul(T.dropout(dr, 0.3, mask_seed), w2)), [dr])

    src = _leaf(rng, n, m)
    idx = rng.integers(0, n, size=k)
    wk = rng.normal(size=(k, m))
    cases["gather_rows"] = (lambda: T.sum_all(T.mul(T.gather_rows(src, idx), wk)), [src])

    rows = _leaf(rng, k, m)
    seg = rng.integers(0, n, size=k)
    cases["scatter_sum"] = (lambda: T.sum_all(T.mul(T.scatter_sum(rows, seg, n), w2)), [rows])

    lg = _leaf(rng, k, 1, low=-2, high=2)
    sseg = np.sort(rng.integers(0, 3, size=k))
    wl = rng.normal(size=(k, 1))
    cases["segment_softmax"] = (lambda: T.sum_all(T.mul(T.segment_softmax(lg, sseg, 3), wl)), [lg])

    mats, vecs = _leaf(rng, k, n, m), _leaf(rng, k, m)
    wv = rng.normal(size=(k, n))
    cases["batched_matvec"] = (lambda: T.sum_all(T.mul(T.batched_matvec(mats, vecs), wv)), [mats, vecs])

    rs = _leaf(rng, n, m)
    wr = rng.normal(size=(m, n))
    cases["reshape"] = (lambda: T.sum_all(T.mul(T.reshape(rs, (m, n)), wr)), [rs])

    ls = _leaf(rng, n, m)
    cases["log_softmax"] = (lambda: T.sum_all(T.mul(T.log_softmax(ls), w2)), [ls])

    ce = _leaf(rng, n, m, low=-2, high=2)
    labels = rng.integers(0, m, size=n)
    labels[0] = -100
    cases["cross_entropy"] = (lambda: T.cross_entropy(ce, labels), [ce])
    cw = rng.uniform(0.2, 2.0, size=m)
    ce2 = _leaf(rng, n, m, low=-2, high=2)
    cases["cross_entropy_weighted"] = (lambda: T.cross_entropy(ce2, labels, class_weights=cw), [ce2])
    return cases


@dataclass
class GradcheckResult:
    name: str
    seed: int
    error: float

    @property
    def passed(self) -> bool:
        return self.error < 1e-4


def layer_cases(seed: int):
    """Probes for each GNN variant over all of its parameters and the node states."""
    from .gnn import GraphBatch, GnnLayer

    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 7))
    de = int(rng.integers(2, 7))
    n = int(rng.integers(3, 8))
    pairs = {(int(u), int(v)) for u, v in rng.integers(0, n, size=(n + 2, 2)) if u != v}
    undirected = sorted({(min(u, v), max(u, v)) for u, v in pairs})
    cases = {}
    for variant in ("geanet", "ecc", "gat"):
        x = _leaf(rng, n, d)
        e = _leaf(rng, len(undirected), de)
        batch_fn = lambda x=x, e=e: GraphBatch.from_undirected(x, undirected, e)
        store = T.ParamStore()
        layer = GnnLayer.create(store, f"g.{variant}", variant, d, de, rng, dropout=0.0)
        proj = rng.normal(size=(n, d))
        fn = lambda layer=layer, batch_fn=batch_fn, proj=proj: T.sum_all(T.mul(layer(batch_fn()), proj))
        cases[variant] = (fn, [x, e] + [t for _, t in store])
    return cases


def run_suite(seeds=range(10)) -> list[GradcheckResult]:
    results = []
    for seed in seeds:
        for name, (fn, leaves) in op_cases(seed).items():
            results.append(GradcheckResult(name, seed, check(fn, leaves)))
        for name, (fn, leaves) in layer_cases(seed).items():
            results.append(GradcheckResult(f"layer:{name}", seed, check(fn, leaves)))
    return results


def main_report(seeds=range(10)) -> tuple[bool, str, float]:
    t0 = time.perf_counter()
    results = run_suite(seeds)
    elapsed = time.perf_counter() - t0
    worst: dict[str, float] = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.error)
    lines = [f"{name:24s} max_rel_err={err:.2e} {'ok' if err < 1e-4 else 'FAIL'}"
             for name, err in sorted(worst.items())]
    ok = all(r.passed for r in results)
    lines.append(f"{len(results)} checks in {elapsed:.1f}s: {'PASS' if ok else 'FAIL'}")
    return ok, "\n".join(lines), elapsed
