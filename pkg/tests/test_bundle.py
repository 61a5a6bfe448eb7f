import json

import numpy as np
import pytest

from gale.bundle import EDGE_COLUMNS, NODE_COLUMNS, read_bundle, write_bundle
from gale.errors import DataError
from gale.graph import validate_graph


class TestBundle:
    def test_roundtrip_exact(self, tmp_path, small_airfoil):
        g = small_airfoil
        h = read_bundle(write_bundle(g, tmp_path / "b"))
        for name in ("node_pos", "node_type", "pressure_valid", "pressure_in", "edges",
                     "edge_feat", "target", "global_true", "wall_face"):
            assert np.array_equal(getattr(g, name), getattr(h, name)), name
        assert h.meta == g.meta
        assert validate_graph(h).ok

    def test_headers_and_counts(self, tmp_path, small_airfoil):
        out = write_bundle(small_airfoil, tmp_path / "b")
        nodes = (out / "nodes.csv").read_text().splitlines()
        edges = (out / "edges.csv").read_text().splitlines()
        assert nodes[0].split(",") == NODE_COLUMNS
        assert edges[0].split(",") == EDGE_COLUMNS
        meta = json.loads((out / "meta.json").read_text())
        assert meta["n_nodes"] == len(nodes) - 1
        assert meta["n_edges_directed"] == len(edges) - 1 == 2 * meta["n_edges_undirected"]

    def test_rewrite_is_byte_identical(self, tmp_path, small_airfoil):
        a = write_bundle(small_airfoil, tmp_path / "a")
        b = write_bundle(read_bundle(a), tmp_path / "b")
        for f in ("meta.json", "nodes.csv", "edges.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_missing_bundle(self, tmp_path):
        with pytest.raises(DataError):
            read_bundle(tmp_path)

    def test_malformed_type(self, tmp_path, small_airfoil):
        out = write_bundle(small_airfoil, tmp_path / "b")
        text = (out / "nodes.csv").read_text().replace(",wall,", ",solid,", 1)
        (out / "nodes.csv").write_text(text)
        with pytest.raises(DataError):
            read_bundle(out)
