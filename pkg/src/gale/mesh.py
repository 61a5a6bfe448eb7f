"""Unstructured 2-D mesh text format and the finite-volume mesh-to-graph parser.

Cells become nodes placed at their centroids, each interior face yields a
pair of directed edges, and every airfoil boundary face yields a Wall node
at the face midpoint linked to the cell behind it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateDomainError,
    GeometryError,
    MeshReferenceError,
    ParseError,
    TopologyError,
)
from .graph import STORAGE_RANK, FlowGraph, GraphMeta, NodeType, make_edge_features

PATCH_NAMES = ("airfoil", "farfield")


@dataclass
class Patch:
    faces: np.ndarray  # (k, 2) vertex indices
    pressure: np.ndarray | None = None  # (k,) face pressure, Pa


@dataclass
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    cells: list  # list of int arrays, counter-clockwise polygons
    patches: dict = field(default_factory=dict)  # name -> Patch
    fields: np.ndarray | None = None  # (nc, 3): p, ux, uy

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def patch(self, name) -> Patch:
        return self.patches.get(name, Patch(np.zeros((0, 2), dtype=np.int64)))


def signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(pts: np.ndarray) -> bool:
    k = len(pts)
    if k < 3:
        return False
    for i in range(k):
        for j in range(i + 2, k):
            if i == 0 and j == k - 1:
                continue
            if _segments_cross(pts[i], pts[(i + 1) % k], pts[j], pts[(j + 1) % k]):
                return False
    return True


# ---------------------------------------------------------------------------
# text format


class _Lines:
    def __init__(self, text):
        self.items = []
        for no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                self.items.append((no, line.split()))
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.items):
            last = self.items[-1][0] if self.items else 0
            raise ParseError(f"unexpected end of file, expected {what}", line=last + 1)
        item = self.items[self.pos]
        self.pos += 1
        return item

    def done(self):
        return self.pos >= len(self.items)


def _ints(tokens, no):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected integers, got {' '.join(tokens)!r}", line=no) from None


def _floats(tokens, no, count):
    if len(tokens) != count:
        raise ParseError(f"expected {count} numbers, got {len(tokens)}", line=no)
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"expected numbers, got {' '.join(tokens)!r}", line=no) from None


def _count(tokens, no):
    if len(tokens) < 2:
        raise ParseError(f"section {tokens[0]!r} needs a count", line=no)
    try:
        n = int(tokens[-1])
    except ValueError:
        raise ParseError(f"bad section count {tokens[-1]!r}", line=no) from None
    if n < 0:
        raise ParseError("negative section count", line=no)
    return n


def parse_mesh(text: str) -> Mesh:
    """Parse ``meshfmt 1`` text; raises ParseError / MeshReferenceError / GeometryError."""
    lines = _Lines(text)
    no, tok = lines.next("header")
    if tok != ["meshfmt", "1"]:
        raise ParseError(f"expected header 'meshfmt 1', got {' '.join(tok)!r}", line=no)

    vertices = None
    cells = None
    cell_lines = []
    patches = {}
    patch_lines = {}
    fields = None
    while not lines.done():
        no, tok = lines.next("section")
        kind = tok[0]
        if kind == "vertices":
            n = _count(tok, no)
            rows = []
            for _ in range(n):
                vno, vtok = lines.next("vertex")
                rows.append(_floats(vtok, vno, 2))
            vertices = np.array(rows).reshape(n, 2)
        elif kind == "cells":
            n = _count(tok, no)
            cells = []
            for _ in range(n):
                cno, ctok = lines.next("cell")
                idx = _ints(ctok, cno)
                if len(idx) < 3:
                    raise ParseError("a cell needs at least 3 vertices", line=cno)
                cells.append(np.array(idx, dtype=np.int64))
                cell_lines.append(cno)
        elif kind == "patch":
            if len(tok) != 3:
                raise ParseError("expected 'patch <name> <n>'", line=no)
            name = tok[1]
            if name not in PATCH_NAMES:
                raise ParseError(f"unknown patch name {name!r}", line=no)
            n = _count(tok, no)
            faces, press, nos = [], [], []
            for _ in range(n):
                fno, ftok = lines.next("patch face")
                if len(ftok) not in (2, 3):
                    raise ParseError("expected 'v0 v1 [pressure]'", line=fno)
                faces.append(_ints(ftok[:2], fno))
                press.append(_floats(ftok[2:], fno, 1)[0] if len(ftok) == 3 else None)
                nos.append(fno)
            have = [p is not None for p in press]
            if any(have) and not all(have):
                raise ParseError(f"patch {name!r} gives pressure on some faces only", line=no)
            patches[name] = Patch(np.array(faces, dtype=np.int64).reshape(-1, 2),
                                  np.array(press, dtype=float) if all(have) and n else None)
            patch_lines[name] = nos
        elif kind == "cellfields":
            n = _count(tok, no)
            rows = []
            for _ in range(n):
                fno, ftok = lines.next("cell field")
                rows.append(_floats(ftok, fno, 3))
            fields = np.array(rows).reshape(n, 3)
        else:
            raise ParseError(f"unknown section {kind!r}", line=no)

    if vertices is None:
        raise ParseError("missing 'vertices' section", line=1)
    if cells is None:
        raise ParseError("missing 'cells' section", line=1)
    nv = len(vertices)
    for cell, cno in zip(cells, cell_lines):
        bad = cell[(cell < 0) | (cell >= nv)]
        if bad.size:
            raise MeshReferenceError(f"cell references vertex {int(bad[0])} of {nv}",
                                     index=int(bad[0]), line=cno)
    for name, p in patches.items():
        for face, fno in zip(p.faces, patch_lines[name]):
            bad = face[(face < 0) | (face >= nv)]
            if bad.size:
                raise MeshReferenceError(f"patch {name!r} references vertex {int(bad[0])} of {nv}",
                                         index=int(bad[0]), line=fno)
    if fields is not None and len(fields) != len(cells):
        raise ParseError(f"cellfields has {len(fields)} rows for {len(cells)} cells", line=1)

    mesh = Mesh(vertices=vertices, cells=cells, patches=patches, fields=fields)
    check_mesh(mesh, cell_lines=cell_lines)
    return mesh


def format_mesh(mesh: Mesh) -> str:
    out = ["meshfmt 1", f"vertices {len(mesh.vertices)}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out.append(f"cells {mesh.n_cells}")
    out += [" ".join(str(int(v)) for v in c) for c in mesh.cells]
    for name in PATCH_NAMES:
        if name not in mesh.patches:
            continue
        p = mesh.patches[name]
        out.append(f"patch {name} {len(p.faces)}")
        for k, (a, b) in enumerate(p.faces.tolist()):
            out.append(f"{a} {b}" if p.pressure is None else f"{a} {b} {float(p.pressure[k])!r}")
    if mesh.fields is not None:
        out.append(f"cellfields {len(mesh.fields)}")
        out += [" ".join(repr(v) for v in row) for row in mesh.fields.tolist()]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# topology


def face_table(mesh: Mesh) -> dict:
    """Map each undirected face (lo, hi) to the list of cells that own it."""
    table = {}
    for c, cell in enumerate(mesh.cells):
        k = len(cell)
        for i in range(k):
            a, b = int(cell[i]), int(cell[(i + 1) % k])
            table.setdefault((min(a, b), max(a, b)), []).append(c)
    return table


def interior_faces(mesh: Mesh) -> list:
    return [(f, cs) for f, cs in face_table(mesh).items() if len(cs) == 2]


def check_mesh(mesh: Mesh, cell_lines=None) -> None:
    for c, cell in enumerate(mesh.cells):
        where = f" (line {cell_lines[c]})" if cell_lines else ""
        pts = mesh.vertices[cell]
        if len(set(cell.tolist())) != len(cell) or not _is_simple(pts):
            raise GeometryError(f"cell {c}{where} is not a simple polygon")
        if signed_area(pts) <= 0:
            raise GeometryError(f"cell {c}{where} is not counter-clockwise")
    table = face_table(mesh)
    for f, cs in table.items():
        if len(cs) > 2:
            raise GeometryError(f"face {f} is shared by {len(cs)} cells")
    for name, p in mesh.patches.items():
        for a, b in p.faces.tolist():
            owners = table.get((min(a, b), max(a, b)), [])
            if len(owners) != 1:
                raise GeometryError(
                    f"patch {name!r} face ({a}, {b}) lies on {len(owners)} cells, expected 1")


def chord_endpoints(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The pair of points with maximum separation (leading/trailing edge)."""
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    return points[i], points[j]


def _sort_edges(edges, feat):
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order], feat[order]


def cells_to_graph(mesh: Mesh, chord: float, global_true=(0.0, 0.0, 0.0), case_id="",
                   rho=1.225, require_targets=True) -> FlowGraph:
    """Finite-volume graph: one node per cell plus one Wall node per airfoil face."""
    if require_targets and mesh.fields is None:
        raise DataError("mesh has no cell fields but targets were requested")
    table = face_table(mesh)
    verts = mesh.vertices
    nc = mesh.n_cells
    centroids = np.array([polygon_centroid(verts[c]) for c in mesh.cells]).reshape(nc, 2)

    air = mesh.patch("airfoil")
    far = mesh.patch("farfield")
    cell_type = np.full(nc, NodeType.FLUID, dtype=np.int8)
    for a, b in far.faces.tolist():
        cell_type[table[(min(a, b), max(a, b))][0]] = NodeType.FARFIELD

    p = len(air.faces)
    fluid_cells = np.flatnonzero(cell_type == NodeType.FLUID)
    farfield_cells = np.flatnonzero(cell_type == NodeType.FARFIELD)
    node_of_cell = np.empty(nc, dtype=np.int64)
    node_of_cell[fluid_cells] = p + np.arange(fluid_cells.size)
    node_of_cell[farfield_cells] = p + fluid_cells.size + np.arange(farfield_cells.size)
    n = p + nc

    pos = np.empty((n, 2))
    types = np.empty(n, dtype=np.int8)
    target = np.zeros((n, 3))
    pressure_in = np.zeros(n)
    valid = np.zeros(n, dtype=bool)
    wall_face = np.zeros((n, 4))

    pos[node_of_cell] = centroids
    types[node_of_cell] = cell_type
    if mesh.fields is not None:
        target[node_of_cell] = mesh.fields

    edges, blen = [], []
    for k, (a, b) in enumerate(air.faces.tolist()):
        owner = table[(min(a, b), max(a, b))][0]
        va, vb = verts[a], verts[b]
        mid = 0.5 * (va + vb)
        t = vb - va
        if np.dot([t[1], -t[0]], mid - centroids[owner]) < 0:
            va, vb = vb, va
        wall_face[k] = [va[0], va[1], vb[0], vb[1]]
        pos[k] = mid
        types[k] = NodeType.WALL
        valid[k] = True
        if air.pressure is not None:
            pressure_in[k] = air.pressure[k]
        elif mesh.fields is not None:
            pressure_in[k] = mesh.fields[owner, 0]
        else:
            raise DataError("airfoil faces carry no pressure and the mesh has no cell fields")
        target[k] = [pressure_in[k], 0.0, 0.0]
        length = float(np.hypot(*t))
        c = node_of_cell[owner]
        edges += [(k, c), (c, k)]
        blen += [length, length]

    for (a, b), cs in table.items():
        if len(cs) != 2:
            continue
        u, v = node_of_cell[cs[0]], node_of_cell[cs[1]]
        length = float(np.hypot(*(verts[b] - verts[a])))
        edges += [(u, v), (v, u)]
        blen += [length, length]

    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    feat = make_edge_features(pos, edges, np.array(blen)) if len(edges) else np.zeros((0, 4))
    edges, feat = _sort_edges(edges, feat)

    if p:
        le, te = chord_endpoints(verts[np.unique(air.faces)])
        center = 0.5 * (le + te)
    else:
        center = 0.5 * (verts.min(axis=0) + verts.max(axis=0))
    meta = GraphMeta(chord=float(chord), center=(float(center[0]), float(center[1])),
                     m=int(fluid_cells.size), p=p, case_id=case_id, rho=rho)
    return FlowGraph(node_pos=pos, node_type=types, pressure_valid=valid, pressure_in=pressure_in,
                     edges=edges, edge_feat=feat, target=target, global_true=global_true,
                     meta=meta, wall_face=wall_face)


def _reindex(g: FlowGraph, keep: np.ndarray, types: np.ndarray) -> FlowGraph:
    """Keep the masked nodes, re-sort them into storage order and remap edges."""
    kept = np.flatnonzero(keep)
    order = kept[np.lexsort((kept, STORAGE_RANK[types[kept].astype(np.int64)]))]
    new_index = np.full(g.n_nodes, -1, dtype=np.int64)
    new_index[order] = np.arange(order.size)
    emask = keep[g.edges[:, 0]] & keep[g.edges[:, 1]]
    edges = new_index[g.edges[emask]]
    edges, feat = _sort_edges(edges, g.edge_feat[emask])
    new_types = types[order]
    meta = GraphMeta(chord=g.meta.chord, center=g.meta.center,
                     m=int(np.count_nonzero(new_types == NodeType.FLUID)),
                     p=int(np.count_nonzero(new_types == NodeType.WALL)),
                     case_id=g.meta.case_id, rho=g.meta.rho)
    return FlowGraph(node_pos=g.node_pos[order], node_type=new_types,
                     pressure_valid=g.pressure_valid[order], pressure_in=g.pressure_in[order],
                     edges=edges, edge_feat=feat, target=g.target[order],
                     global_true=g.global_true, meta=meta, wall_face=g.wall_face[order])


def truncate_to_radius(g: FlowGraph, radius: float) -> FlowGraph:
    """Drop nodes farther than ``radius`` chords from the chord midpoint.

    Fluid nodes that lose a neighbour become Farfield.
    """
    if radius <= 0:
        raise ConfigError("radius must be positive")
    center = np.asarray(g.meta.center)
    dist = np.hypot(*(g.node_pos - center).T)
    keep = dist <= radius * g.meta.chord
    types = g.node_type.copy()
    if not np.any(keep & (types == NodeType.FLUID)):
        raise DegenerateDomainError(
            f"truncation at {radius} chords removes every Fluid node")
    cut = keep[g.edges[:, 0]] & ~keep[g.edges[:, 1]]
    rim = np.unique(g.edges[cut, 0])
    types[rim[types[rim] == NodeType.FLUID]] = NodeType.FARFIELD
    return _reindex(g, keep, types)


def wall_chain(g: FlowGraph) -> list:
    """Wall node indices in perimeter order, following shared face endpoints."""
    wall = np.flatnonzero(g.wall_mask)
    if wall.size == 0:
        raise TopologyError("graph has no Wall nodes")
    ends = {}
    for w in wall:
        f = g.wall_face[w]
        for pt in ((f[0], f[1]), (f[2], f[3])):
            ends.setdefault(pt, []).append(int(w))
    nbrs = {int(w): [] for w in wall}
    for pt, ws in ends.items():
        if len(ws) != 2 or ws[0] == ws[1]:
            raise TopologyError(f"airfoil vertex {pt} is shared by {len(ws)} faces, expected 2")
        a, b = ws
        nbrs[a].append(b)
        nbrs[b].append(a)
    if wall.size < 3:
        raise TopologyError("a closed wall chain needs at least 3 faces")
    chain = [int(wall[0])]
    prev, cur = None, int(wall[0])
    while True:
        a, b = nbrs[cur]
        nxt = b if a == prev else a
        if nxt == chain[0]:
            break
        chain.append(nxt)
        prev, cur = cur, nxt
        if len(chain) > wall.size:
            raise TopologyError("wall chain does not close")
    if len(chain) != wall.size:
        raise TopologyError(
            f"Wall nodes form more than one closed chain ({len(chain)} of {wall.size} visited)")
    return chain


def add_perimeter_edges(g: FlowGraph) -> FlowGraph:
    """Link consecutive Wall nodes around the airfoil in both directions."""
    chain = wall_chain(g)
    wlen = g.wall_length
    existing = set(map(tuple, g.edges.tolist()))
    new, blen = [], []
    for i, a in enumerate(chain):
        b = chain[(i + 1) % len(chain)]
        if (a, b) in existing:
            continue
        mean_len = 0.5 * (wlen[a] + wlen[b])
        new += [(a, b), (b, a)]
        blen += [mean_len, mean_len]
    new = np.array(new, dtype=np.int64).reshape(-1, 2)
    feat = make_edge_features(g.node_pos, new, np.array(blen))
    edges, feat = _sort_edges(np.vstack([g.edges, new]), np.vstack([g.edge_feat, feat]))
    return g.with_(edges=edges, edge_feat=feat)
