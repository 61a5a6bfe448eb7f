import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gale.errors import ConfigError, ShapeError
from gale.layers import GatKernel, GenKernel, GineKernel, GraphOps, LayerKind, count_params
from gale.nn import Mlp, MlpSpec
from gale.reversible import random_graph
from helpers import fd_check

KINDS = ["gat", "gine", "gen"]


def setup(kind, n=9, width=4, seed=0, jitter=0.3, **kw):
    rng = np.random.default_rng(seed)
    edges = random_graph(n, rng)
    ops = GraphOps(n, edges)
    lk = LayerKind(kind, **kw) if kw else LayerKind(kind, head_dim=3, hidden=5)
    k = lk.build(width, "k.")
    params = k.init(rng)
    for name in params:  # move away from init symmetries (eps = 0, unit temperature)
        params[name] = params[name] + jitter * rng.standard_normal(params[name].shape)
    X = rng.standard_normal((n, width))
    Eg = rng.standard_normal((len(edges), width))
    return k, params, X, Eg, ops, edges, rng


def two_identical_neighbours():
    """Node 0 receives from nodes 1 and 2, which carry identical features."""
    edges = np.array([[1, 0], [0, 1], [2, 0], [0, 2]])
    return GraphOps(3, edges), edges


class TestGat:
    def test_two_identical_in_neighbours(self):
        k = GatKernel(4, "k.", heads=2, head_dim=3)
        params = k.init(np.random.default_rng(0))
        ops, _ = two_identical_neighbours()
        X = np.array([[0.3, -1.0, 2.0, 0.5], [1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]])
        Eg = np.tile([0.2, 0.1, -0.4, 1.0], (4, 1))
        _, _, _, alpha = k.attention(params, X, ops, Eg)
        np.testing.assert_allclose(alpha[ops.dst == 0], 0.5, rtol=0, atol=1e-15)

    def test_mutual_pair(self):
        k = GatKernel(2, "k.", heads=2, head_dim=2)
        params = k.init(np.random.default_rng(0))
        ops = GraphOps(2, np.array([[0, 1], [1, 0]]))
        _, _, _, alpha = k.attention(params, np.ones((2, 2)), ops, np.ones((2, 2)))
        np.testing.assert_array_equal(alpha, 1.0)

    @given(st.integers(3, 25), st.integers(0, 10 ** 6))
    def test_coefficients_normalised(self, n, seed):
        k, params, X, Eg, ops, _, _ = setup("gat", n=n, seed=seed, jitter=1.0)
        _, _, _, alpha = k.attention(params, 5.0 * X, ops, Eg)
        assert np.all(alpha >= 0)
        sums = ops.scatter_dst(alpha)
        np.testing.assert_allclose(sums[ops.in_degree > 0], 1.0, rtol=0, atol=1e-12)

    def test_isolated_node_gets_zero_aggregate(self):
        k = GatKernel(2, "k.", heads=1, head_dim=2)
        params = k.init(np.random.default_rng(0))
        ops = GraphOps(3, np.array([[0, 1], [1, 0]]))
        _, cache = k.forward(params, np.random.default_rng(1).standard_normal((3, 2)), ops,
                             np.zeros((2, 2)))
        np.testing.assert_array_equal(cache[5][2], 0.0)


class TestGine:
    def test_isolated_node(self):
        k = GineKernel(3, "k.", hidden=4)
        params = k.init(np.random.default_rng(0))
        params["k.eps"] = np.array([0.25])
        X = np.array([[1.0, -2.0, 0.5]])
        y, _ = k.forward(params, X, GraphOps(1, np.zeros((0, 2))), np.zeros((0, 3)))
        ref, _ = Mlp(MlpSpec(3, 4, 3), "k.mlp.").forward(params, 1.25 * X)
        np.testing.assert_array_equal(y, ref)

    def test_single_neighbour(self):
        k = GineKernel(3, "k.", hidden=4)
        rng = np.random.default_rng(0)
        params = k.init(rng)
        assert params["k.eps"][0] == 0.0
        X = rng.standard_normal((2, 3))
        Eg = rng.standard_normal((1, 3))
        ops = GraphOps(2, np.array([[1, 0]]))
        y, _ = k.forward(params, X, ops, Eg)
        m = np.maximum(X[1] + Eg[0] @ params["k.edge.w"] + params["k.edge.b"], 0)
        ref, _ = Mlp(MlpSpec(3, 4, 3), "k.mlp.").forward(params, (X + np.array([m, 0 * m])))
        np.testing.assert_allclose(y[0], ref[0], rtol=0, atol=1e-15)

    @given(st.integers(2, 30), st.integers(0, 10 ** 6))
    def test_sum_aggregation_loop_oracle(self, n, seed):
        k, params, X, Eg, ops, edges, _ = setup("gine", n=n, seed=seed)
        _, cache = k.forward(params, X, ops, Eg)
        pre = cache[1]
        agg = np.zeros_like(X)
        for e, (s, d) in enumerate(edges):
            agg[d] += np.maximum(pre[e], 0.0)
        z = (1.0 + params["k.eps"][0]) * X + agg
        np.testing.assert_allclose(cache[2][0], z, rtol=1e-13, atol=1e-13)


class TestGen:
    def test_small_temperature_is_mean(self):
        k = GenKernel(2, "k.", hidden=3)
        M = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 4.0], [9.0, 9.0]])
        ops = GraphOps(4, np.array([[1, 0], [2, 0], [3, 0], [0, 1]]))
        agg, _ = k.aggregate(M, 1e-6, ops)
        np.testing.assert_allclose(agg[0], M[:3].mean(axis=0), atol=1e-5)

    def test_single_neighbour_exact(self):
        k = GenKernel(2, "k.", hidden=3)
        M = np.array([[1.5, -2.0], [0.25, 7.0]])
        ops = GraphOps(2, np.array([[1, 0], [0, 1]]))
        agg, _ = k.aggregate(M, 3.7, ops)
        np.testing.assert_array_equal(agg, M)

    @given(st.integers(2, 30), st.integers(0, 10 ** 6))
    def test_softmax_loop_oracle(self, n, seed):
        k, params, X, Eg, ops, edges, _ = setup("gen", n=n, seed=seed)
        _, cache = k.forward(params, X, ops, Eg)
        M, t, agg = cache[1], cache[4], cache[3]
        ref = np.zeros_like(X)
        for d in range(n):
            idx = np.flatnonzero(edges[:, 1] == d)
            if idx.size:
                logits = t * M[idx]
                w = np.exp(logits - logits.max(axis=0))
                w /= w.sum(axis=0)
                ref[d] = (w * M[idx]).sum(axis=0)
        np.testing.assert_allclose(agg, ref, rtol=1e-12, atol=1e-12)

    def test_message_offset(self):
        k, params, X, Eg, ops, _, _ = setup("gen")
        _, cache = k.forward(params, X, ops, Eg)
        assert cache[1].min() >= 1e-7


class TestAllKernels:
    @pytest.mark.parametrize("kind", KINDS)
    def test_gradients_fd(self, kind):
        k, params, X, Eg, ops, _, rng = setup(kind, n=8)
        W = rng.standard_normal(X.shape)
        p = dict(params, X=X, Eg=Eg)

        def f():
            return np.sum(W * k.forward(p, p["X"], ops, p["Eg"])[0])

        _, cache = k.forward(p, X, ops, Eg)
        dX, dE, grads = k.backward(p, cache, W, ops, Eg)
        grads.update(X=dX, Eg=dE)
        assert set(grads) == set(p)
        assert fd_check(f, p, grads, per_block=8) < 1e-5

    @pytest.mark.parametrize("kind", KINDS)
    def test_output_width(self, kind):
        k, params, X, Eg, ops, _, _ = setup(kind, width=6)
        assert k.forward(params, X, ops, Eg)[0].shape == X.shape

    @pytest.mark.parametrize("kind", KINDS)
    def test_shape_errors(self, kind):
        k, params, X, Eg, ops, _, _ = setup(kind)
        with pytest.raises(ShapeError):
            k.forward(params, X[:, :3], ops, Eg)
        with pytest.raises(ShapeError):
            k.forward(params, X, ops, Eg[:-1])

    @pytest.mark.parametrize("kind", KINDS)
    @given(perm_seed=st.integers(0, 10 ** 6))
    def test_permutation_equivariance_bitwise(self, kind, perm_seed):
        k, params, X, Eg, ops, edges, _ = setup(kind, n=12)
        perm = np.random.default_rng(perm_seed).permutation(12)
        inv = np.argsort(perm)
        # node i becomes node inv[i]; the edge list keeps its order
        ops_p = GraphOps(12, inv[edges])
        y = k.forward(params, X, ops, Eg)[0]
        y_p = k.forward(params, X[perm], ops_p, Eg)[0]
        assert np.array_equal(y_p, y[perm])


class TestCount:
    @pytest.mark.parametrize("kind", KINDS)
    def test_baseline_budget(self, kind):
        c = count_params(kind, 32)
        assert 4500 <= c <= 5000
        k = LayerKind(kind).build(32, "x.")
        assert c == k.count() == sum(v.size for v in k.init(np.random.default_rng(0)).values())

    def test_width_one_manual_tally(self):
        # GINE, width 1, hidden 2: edge.w 1 + edge.b 1 + eps 1
        # MLP 1->2->2->1: 2 + 2 + 4 + 2 + 2 + 1, LayerNorm 2
        assert count_params("gine", 1, hidden=2) == 3 + 13 + 2
        # GAT, width 1, 1 head of dim 1: lin 1, edge 1, att 3, out.w 1, out.b 1, ln 2
        assert count_params("gat", 1, heads=1, head_dim=1) == 9

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            LayerKind("gcn")

    def test_block_names(self):
        k = LayerKind("gat").build(32, "proc.layer0.group1.")
        assert all(n.startswith("proc.layer0.group1.") for n in k.shapes())
