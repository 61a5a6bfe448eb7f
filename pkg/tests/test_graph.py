import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gale.errors import ConfigError, ShapeError
from gale.graph import (
    GroupedFeatures,
    NodeType,
    count_undirected,
    make_edge_features,
    merge_groups,
    one_hot,
    split_groups,
    validate_graph,
)
from helpers import triangle_graph


class TestNodeType:
    def test_one_hot_rows(self):
        oh = one_hot(np.array([NodeType.FLUID, NodeType.WALL, NodeType.FARFIELD]))
        np.testing.assert_array_equal(oh, np.eye(3))

    @given(st.lists(st.sampled_from(list(NodeType)), min_size=1, max_size=50))
    def test_exactly_one_hot(self, types):
        oh = one_hot(np.array(types))
        assert oh.shape == (len(types), 3)
        np.testing.assert_array_equal(oh.sum(axis=1), 1.0)
        assert set(np.unique(oh)) <= {0.0, 1.0}


class TestValidateGraph:
    def test_valid_triangle(self):
        rep = validate_graph(triangle_graph())
        assert rep.ok and len(rep) == 0

    def test_missing_reciprocal(self):
        g = triangle_graph()
        keep = ~((g.edges[:, 0] == 1) & (g.edges[:, 1] == 0))
        rep = validate_graph(g.with_(edges=g.edges[keep], edge_feat=g.edge_feat[keep]))
        assert "missing-reciprocal" in rep.kinds()

    def test_pressure_on_fluid_node(self):
        rep = validate_graph(triangle_graph(pressure_on_fluid=True))
        assert "pressure-mask" in rep.kinds()
        assert any(1 in v.indices for v in rep)

    def test_self_edge_and_range(self):
        g = triangle_graph()
        edges = np.vstack([g.edges, [[2, 2], [0, 7]]])
        feat = np.vstack([g.edge_feat, [[1, 0, 1, 1], [1, 0, 1, 1]]])
        rep = validate_graph(g.with_(edges=edges, edge_feat=feat))
        assert {"self-edge", "edge-range"} <= rep.kinds()

    def test_non_unit_direction(self):
        g = triangle_graph()
        feat = g.edge_feat.copy()
        feat[:, :2] *= 1.5
        assert "direction-norm" in validate_graph(g.with_(edge_feat=feat)).kinds()

    def test_reciprocal_feature_mismatch(self):
        g = triangle_graph()
        feat = g.edge_feat.copy()
        feat[0, 2] += 0.1
        assert "reciprocal-features" in validate_graph(g.with_(edge_feat=feat)).kinds()

    def test_meta_counts(self):
        g = triangle_graph()
        from dataclasses import replace
        rep = validate_graph(g.with_(meta=replace(g.meta, m=5)))
        assert "meta-count" in rep.kinds()

    def test_arrays_are_read_only(self):
        g = triangle_graph()
        with pytest.raises(ValueError):
            g.node_pos[0, 0] = 1.0


class TestEdgeFeatures:
    def test_direction_and_length(self):
        pos = np.array([[0.0, 0.0], [3.0, 4.0]])
        f = make_edge_features(pos, np.array([[0, 1], [1, 0]]), np.array([2.0, 2.0]))
        np.testing.assert_allclose(f, [[0.6, 0.8, 5.0, 2.0], [-0.6, -0.8, 5.0, 2.0]])

    def test_count_undirected(self):
        assert count_undirected(triangle_graph().edges) == 3


class TestGroups:
    def test_width4_c4(self):
        V = np.arange(12.0).reshape(3, 4)
        gf = split_groups(V, 4)
        assert len(gf) == 4 and all(g.shape == (3, 1) for g in gf.groups)
        np.testing.assert_array_equal(gf[2][:, 0], V[:, 2])

    def test_single_group(self):
        V = np.random.default_rng(0).standard_normal((5, 6))
        np.testing.assert_array_equal(split_groups(V, 1)[0], V)
        np.testing.assert_array_equal(merge_groups(GroupedFeatures((V,))), V)

    def test_width128_c4(self):
        V = np.random.default_rng(1).standard_normal((7, 128))
        gf = split_groups(V, 4)
        assert [g.shape[1] for g in gf.groups] == [32] * 4
        assert np.array_equal(merge_groups(gf), V)

    def test_constant_groups(self):
        out = merge_groups([np.ones((3, 2)), 2 * np.ones((3, 2))])
        np.testing.assert_array_equal(out, np.tile([1.0, 1.0, 2.0, 2.0], (3, 1)))

    def test_indivisible_width(self):
        with pytest.raises(ConfigError):
            split_groups(np.zeros((2, 6)), 4)

    def test_row_mismatch(self):
        with pytest.raises(ShapeError):
            merge_groups([np.zeros((3, 2)), np.zeros((4, 2))])

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 6), st.data())
    def test_roundtrip_bitwise(self, C, width, rows, data):
        V = data.draw(arrays(np.float64, (rows, C * width),
                             elements=st.floats(-1e6, 1e6, allow_nan=False)))
        assert np.array_equal(merge_groups(split_groups(V, C)), V)
