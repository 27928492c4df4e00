import numpy as np
import pytest

import kgevent.tensor as T
from helpers import dense_oracle, mlp_np
from kgevent.gnn import GnnLayer, GraphBatch, ecc_forward, gat_forward, geanet_forward, stack_forward
from kgevent.gradcheck import check
from kgevent.tensor import ParamStore, ShapeMismatch, Tensor


def random_graph(rng, n=6, d=4, d_e=3, p=0.4):
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return rng.normal(size=(n, d)), edges, rng.normal(size=(len(edges), d_e))


def make_layer(variant, d=4, d_e=3, seed=0):
    store = ParamStore()
    return store, GnnLayer.create(store, "g", variant, d, d_e, np.random.default_rng(seed))


def identity_theta(layer, d):
    layer.theta.first.w.data = np.eye(d)
    layer.theta.second.w.data = np.eye(d)


def run(layer, x, edges, e):
    return layer(GraphBatch.from_undirected(Tensor(x), edges, Tensor(e))).data


class TestGEANet:
    def test_isolated_identity(self):
        _, layer = make_layer("geanet")
        identity_theta(layer, 4)
        x = np.abs(np.random.default_rng(0).normal(size=(1, 4)))
        assert np.allclose(run(layer, x, [], np.zeros((0, 3))), x)

    def test_single_neighbor(self):
        _, layer = make_layer("geanet")
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 4))
        out = run(layer, x, [(0, 1)], rng.normal(size=(1, 3)) * 10)
        assert np.allclose(out[0], mlp_np(layer.theta, x)[0] + x[1], atol=1e-12)

    def test_identical_edges_mean(self):
        _, layer = make_layer("geanet")
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 4))
        e = np.tile(rng.normal(size=3), (2, 1))
        batch = GraphBatch.from_undirected(Tensor(x), [(0, 1), (0, 2)], Tensor(e))
        a = layer.attention(batch).data.reshape(-1)
        assert np.allclose(a[batch.dst == 0], [0.5, 0.5])
        out = layer(batch).data
        assert np.abs(out[0] - (mlp_np(layer.theta, x)[0] + x[1:].mean(0))).max() < 1e-12

    def test_attention_ignores_node_states(self):
        _, layer = make_layer("geanet")
        rng = np.random.default_rng(3)
        x, edges, e = random_graph(rng)
        b1 = GraphBatch.from_undirected(Tensor(x), edges, Tensor(e))
        b2 = b1.with_states(Tensor(x + rng.normal(size=x.shape)))
        assert np.array_equal(layer.attention(b1).data, layer.attention(b2).data)

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_oracle(self, seed):
        _, layer = make_layer("geanet", seed=seed)
        x, edges, e = random_graph(np.random.default_rng(seed))
        assert np.allclose(geanet_forward(GraphBatch.from_undirected(Tensor(x), edges, Tensor(e)), layer).data,
                           dense_oracle(layer, x, edges, e), atol=1e-12)


class TestECC:
    def test_zero_matrix(self):
        _, layer = make_layer("ecc")
        layer.psi.second.w.data[:] = 0
        layer.psi.second.b.data[:] = 0
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 4))
        assert np.allclose(run(layer, x, [(0, 1), (1, 2)], rng.normal(size=(2, 3))), mlp_np(layer.theta, x))

    def test_identity_matrices_sum(self):
        _, layer = make_layer("ecc")
        layer.psi.second.w.data[:] = 0
        layer.psi.second.b.data = np.eye(4).reshape(-1)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 4))
        out = run(layer, x, [(0, 1), (0, 2)], rng.normal(size=(2, 3)))
        assert np.allclose(out[0], mlp_np(layer.theta, x)[0] + x[1] + x[2], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_oracle(self, seed):
        _, layer = make_layer("ecc", seed=seed)
        x, edges, e = random_graph(np.random.default_rng(seed + 10))
        assert np.allclose(ecc_forward(GraphBatch.from_undirected(Tensor(x), edges, Tensor(e)), layer).data,
                           dense_oracle(layer, x, edges, e), atol=1e-12)


class TestGAT:
    def test_single_neighbor(self):
        _, layer = make_layer("gat")
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 4))
        out = run(layer, x, [(0, 1)], rng.normal(size=(1, 3)))
        assert np.allclose(out[0], mlp_np(layer.theta, x)[0] + x[1] @ layer.gat_w.data, atol=1e-12)

    def test_identical_neighbors_uniform(self):
        _, layer = make_layer("gat")
        x = np.random.default_rng(1).normal(size=(3, 4))
        x[2] = x[1]
        batch = GraphBatch.from_undirected(Tensor(x), [(0, 1), (0, 2)], Tensor(np.zeros((2, 3))))
        a = layer.attention(batch).data.reshape(-1)
        assert np.allclose(a[batch.dst == 0], [0.5, 0.5])

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_oracle(self, seed):
        _, layer = make_layer("gat", seed=seed)
        x, edges, e = random_graph(np.random.default_rng(seed + 20))
        assert np.allclose(gat_forward(GraphBatch.from_undirected(Tensor(x), edges, Tensor(e)), layer).data,
                           dense_oracle(layer, x, edges, e), atol=1e-12)


@pytest.mark.parametrize("variant", ["geanet", "ecc", "gat"])
class TestShared:
    def test_permutation_equivariance(self, variant):
        _, layer = make_layer(variant)
        rng = np.random.default_rng(4)
        x, edges, e = random_graph(rng, n=7)
        perm = rng.permutation(7)  # new label of node i is perm[i]
        px = np.empty_like(x)
        px[perm] = x
        pedges = [(int(perm[u]), int(perm[v])) for u, v in edges]
        assert np.allclose(run(layer, px, pedges, e)[perm], run(layer, x, edges, e), atol=1e-12)

    def test_gradients(self, variant):
        store, layer = make_layer(variant, d=3, d_e=2, seed=5)
        rng = np.random.default_rng(5)
        x, edges, e = random_graph(rng, n=5, d=3, d_e=2, p=0.6)
        xt, et = Tensor(x, requires_grad=True), Tensor(e, requires_grad=True)
        weights = Tensor(rng.normal(size=(5, 3)))

        def loss():
            out = layer(GraphBatch.from_undirected(xt, edges, et))
            return T.sum_all(T.mul(out, weights))

        leaves = [t for _, t in store] + [xt, et]
        assert check(loss, leaves) < 1e-4

    def test_shape_mismatch(self, variant):
        _, layer = make_layer(variant)
        with pytest.raises(ShapeMismatch):
            run(layer, np.zeros((2, 5)), [(0, 1)], np.zeros((1, 3)))


class TestStack:
    def test_zero_layers(self):
        x = Tensor(np.ones((2, 3)))
        batch = GraphBatch.from_undirected(x, [(0, 1)], Tensor(np.ones((1, 2))))
        assert stack_forward(batch, []) is x

    def test_one_layer(self):
        _, layer = make_layer("geanet")
        x, edges, e = random_graph(np.random.default_rng(0))
        batch = GraphBatch.from_undirected(Tensor(x), edges, Tensor(e))
        assert np.array_equal(stack_forward(batch, [layer]).data, layer(batch).data)

    def test_two_layers_compose(self):
        store = ParamStore()
        rng = np.random.default_rng(1)
        layers = [GnnLayer.create(store, f"g{i}", "geanet", 4, 3, rng) for i in range(2)]
        x = rng.normal(size=(5, 4))
        edges = [(0, 1), (1, 2), (2, 3), (3, 4)]
        e = rng.normal(size=(4, 3))
        out = stack_forward(GraphBatch.from_undirected(Tensor(x), edges, Tensor(e)), layers).data
        expected = dense_oracle(layers[1], dense_oracle(layers[0], x, edges, e), edges, e)
        assert np.allclose(out, expected, atol=1e-12)


class TestGraphBatch:
    def test_validation(self):
        with pytest.raises(IndexError):
            GraphBatch(Tensor(np.zeros((2, 1))), np.array([0]), np.array([5]), Tensor(np.zeros((1, 1))))
        with pytest.raises(ValueError):
            GraphBatch(Tensor(np.zeros((2, 1))), np.array([0, 1]), np.array([1, 0]), Tensor(np.zeros((2, 1))))
        with pytest.raises(ShapeMismatch):
            GraphBatch(Tensor(np.zeros((2, 1))), np.array([0]), np.array([1]), Tensor(np.zeros((2, 1))))
        with pytest.raises(ValueError):
            GnnLayer.create(ParamStore(), "g", "gcn", 2, 2, np.random.default_rng(0))
