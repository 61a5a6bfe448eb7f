"""Graph-bundle directory format: meta.json, nodes.csv, edges.csv."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph import FlowGraph, GraphMeta, NodeType, count_undirected

FORMAT_VERSION = 1

NODE_COLUMNS = [
    "index", "x", "y", "type", "pressure_in_valid", "pressure_in",
    "target_p", "target_ux", "target_uy",
    "face_x0", "face_y0", "face_x1", "face_y1",
]
EDGE_COLUMNS = ["src", "dst", "dir_x", "dir_y", "edge_len", "boundary_len"]

_TYPE_NAMES = {NodeType.FLUID: "fluid", NodeType.WALL: "wall", NodeType.FARFIELD: "farfield"}
_TYPE_CODES = {v: k for k, v in _TYPE_NAMES.items()}


def fmt(x: float) -> str:
    """Decimal with 17 significant digits (round-trips 64-bit floats)."""
    return format(float(x), ".17g")


def write_bundle(g: FlowGraph, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "case_id": g.meta.case_id,
        "chord": g.meta.chord,
        "center": list(g.meta.center),
        "rho": g.meta.rho,
        "m": g.meta.m,
        "p": g.meta.p,
        "n_nodes": g.n_nodes,
        "n_edges_directed": g.n_edges,
        "n_edges_undirected": count_undirected(g.edges),
        "global_true": {
            "U_inf": float(g.global_true[0]),
            "alpha": float(g.global_true[1]),
            "TI": float(g.global_true[2]),
        },
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")

    with open(path / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NODE_COLUMNS)
        for i in range(g.n_nodes):
            w.writerow([
                i, fmt(g.node_pos[i, 0]), fmt(g.node_pos[i, 1]),
                _TYPE_NAMES[NodeType(int(g.node_type[i]))],
                int(g.pressure_valid[i]), fmt(g.pressure_in[i]),
                *(fmt(v) for v in g.target[i]),
                *(fmt(v) for v in g.wall_face[i]),
            ])
    with open(path / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EDGE_COLUMNS)
        for (s, d), f in zip(g.edges, g.edge_feat):
            w.writerow([int(s), int(d), *(fmt(v) for v in f)])
    return path


def _read_rows(file, columns):
    with open(file, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != columns:
            raise DataError(f"{file}: unexpected header {header}")
        return list(reader)


def read_bundle(path) -> FlowGraph:
    path = Path(path)
    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"{path} is not a graph bundle (no meta.json)") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported bundle format {meta.get('format_version')}")

    rows = _read_rows(path / "nodes.csv", NODE_COLUMNS)
    n = len(rows)
    pos = np.empty((n, 2))
    types = np.empty(n, dtype=np.int8)
    valid = np.empty(n, dtype=bool)
    pin = np.empty(n)
    target = np.empty((n, 3))
    face = np.empty((n, 4))
    for k, r in enumerate(rows):
        try:
            if int(r[0]) != k:
                raise DataError(f"{path}/nodes.csv: row {k} has index {r[0]}")
            pos[k] = float(r[1]), float(r[2])
            types[k] = _TYPE_CODES[r[3]]
            valid[k] = r[4] == "1"
            pin[k] = float(r[5])
            target[k] = [float(v) for v in r[6:9]]
            face[k] = [float(v) for v in r[9:13]]
        except (ValueError, KeyError, IndexError) as exc:
            raise DataError(f"{path}/nodes.csv: malformed row {k}: {exc}") from None

    erows = _read_rows(path / "edges.csv", EDGE_COLUMNS)
    try:
        edges = np.array([[int(r[0]), int(r[1])] for r in erows], dtype=np.int64).reshape(-1, 2)
        feat = np.array([[float(v) for v in r[2:]] for r in erows]).reshape(-1, 4)
    except ValueError as exc:
        raise DataError(f"{path}/edges.csv: malformed row: {exc}") from None

    gt = meta["global_true"]
    return FlowGraph(
        node_pos=pos, node_type=types, pressure_valid=valid, pressure_in=pin,
        edges=edges, edge_feat=feat, target=target,
        global_true=[gt["U_inf"], gt["alpha"], gt["TI"]],
        meta=GraphMeta(chord=float(meta["chord"]), center=tuple(meta["center"]),
                       m=int(meta["m"]), p=int(meta["p"]), case_id=meta["case_id"],
                       rho=float(meta.get("rho", 1.225))),
        wall_face=face,
    )
