"""Graph data model: typed nodes, directed edge list, validation, feature groups.

Nodes are stored Wall first, then Fluid, then Farfield so that masked
reductions over one category are contiguous slices.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, ShapeError

UNIT_TOL = 1e-9
RECIPROCAL_TOL = 1e-12


class NodeType(enum.IntEnum):
    FLUID = 0
    WALL = 1
    FARFIELD = 2


# position of each NodeType in the storage order
STORAGE_RANK = np.array([1, 0, 2])


def one_hot(types: np.ndarray) -> np.ndarray:
    types = np.asarray(types, dtype=np.int64)
    out = np.zeros((types.shape[0], 3))
    out[np.arange(types.shape[0]), types] = 1.0
    return out


@dataclass(frozen=True)
class GraphMeta:
    chord: float
    center: tuple[float, float]
    m: int
    p: int
    case_id: str = ""
    rho: float = 1.225


@dataclass(frozen=True, eq=False)
class FlowGraph:
    """Immutable flow-field graph.

    ``wall_face`` holds the endpoints (x0, y0, x1, y1) of the boundary face
    behind each Wall node, oriented so that the face normal pointing into
    the body is ``(ty, -tx) / |t|`` with ``t = (x1 - x0, y1 - y0)``.  Rows of
    non-Wall nodes are zero.
    """

    node_pos: np.ndarray
    node_type: np.ndarray
    pressure_valid: np.ndarray
    pressure_in: np.ndarray
    edges: np.ndarray
    edge_feat: np.ndarray
    target: np.ndarray
    global_true: np.ndarray
    meta: GraphMeta
    wall_face: np.ndarray = field(default=None)

    def __post_init__(self):
        n = np.asarray(self.node_pos).shape[0]
        coerce = {
            "node_pos": (np.float64, (n, 2)),
            "node_type": (np.int8, (n,)),
            "pressure_valid": (bool, (n,)),
            "pressure_in": (np.float64, (n,)),
            "target": (np.float64, (n, 3)),
            "global_true": (np.float64, (3,)),
        }
        for name, (dtype, shape) in coerce.items():
            arr = np.array(getattr(self, name), dtype=dtype)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, name, arr)
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        feat = np.array(self.edge_feat, dtype=np.float64).reshape(-1, 4)
        if feat.shape[0] != edges.shape[0]:
            raise ShapeError("edge_feat rows must match edge count")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_feat", feat)
        wf = np.zeros((n, 4)) if self.wall_face is None else np.array(self.wall_face, dtype=np.float64)
        if wf.shape != (n, 4):
            raise ShapeError(f"wall_face has shape {wf.shape}, expected {(n, 4)}")
        object.__setattr__(self, "wall_face", wf)
        for name in ("node_pos", "node_type", "pressure_valid", "pressure_in", "edges",
                     "edge_feat", "target", "global_true", "wall_face"):
            getattr(self, name).flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return self.node_pos.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def wall_mask(self) -> np.ndarray:
        return self.node_type == NodeType.WALL

    @property
    def unknown_mask(self) -> np.ndarray:
        """Nodes whose flow features are to be reconstructed (all non-Wall)."""
        return self.node_type != NodeType.WALL

    @property
    def wall_length(self) -> np.ndarray:
        d = self.wall_face[:, 2:] - self.wall_face[:, :2]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def wall_normal(self) -> np.ndarray:
        """Unit face normals pointing into the body (zero rows off the wall)."""
        d = self.wall_face[:, 2:] - self.wall_face[:, :2]
        length = np.hypot(d[:, 0], d[:, 1])
        out = np.zeros_like(d)
        ok = length > 0
        out[ok, 0] = d[ok, 1] / length[ok]
        out[ok, 1] = -d[ok, 0] / length[ok]
        return out

    def with_(self, **changes) -> "FlowGraph":
        return replace(self, **changes)


def make_edge_features(pos: np.ndarray, edges: np.ndarray, boundary_len: np.ndarray) -> np.ndarray:
    """(dir_x, dir_y, edge_len, boundary_len) with unit src->dst direction."""
    d = pos[edges[:, 1]] - pos[edges[:, 0]]
    length = np.hypot(d[:, 0], d[:, 1])
    if np.any(length <= 0):
        raise ShapeError("coincident node positions produce a zero-length edge")
    return np.column_stack([d / length[:, None], length, boundary_len])


def count_undirected(edges: np.ndarray) -> int:
    if edges.size == 0:
        return 0
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    return int(np.unique(np.column_stack([lo, hi]), axis=0).shape[0])


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    indices: tuple = ()


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, kind, message, indices=()):
        self.violations.append(Violation(kind, message, tuple(int(i) for i in indices)))

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def __len__(self):
        return len(self.violations)

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def __str__(self):
        if self.ok:
            return "graph is valid"
        return "\n".join(f"[{v.kind}] {v.message}" for v in self.violations)


def _first(idx, k=10):
    return [int(i) for i in np.asarray(idx).ravel()[:k]]


def validate_graph(g: FlowGraph) -> ValidationReport:
    """List every violated graph invariant; an empty report means valid."""
    rep = ValidationReport()
    n = g.n_nodes
    src, dst = g.edges[:, 0], g.edges[:, 1]

    bad = np.flatnonzero((src < 0) | (src >= n) | (dst < 0) | (dst >= n))
    if bad.size:
        rep.add("edge-range", f"{bad.size} edges reference nodes outside [0, {n})", _first(bad))
    selfe = np.flatnonzero(src == dst)
    if selfe.size:
        rep.add("self-edge", f"{selfe.size} self-edges", _first(selfe))

    in_range = np.setdiff1d(np.arange(g.n_edges), bad)
    if in_range.size:
        keys = src[in_range] * n + dst[in_range]
        order = np.argsort(keys, kind="stable")
        skeys = keys[order]
        dup = np.flatnonzero(np.diff(skeys) == 0)
        if dup.size:
            rep.add("duplicate-edge", f"{dup.size} duplicated directed edges",
                    _first(in_range[order[dup]]))
        rkeys = dst[in_range] * n + src[in_range]
        pos = np.clip(np.searchsorted(skeys, rkeys), 0, skeys.size - 1)
        found = skeys[pos] == rkeys
        missing = in_range[~found]
        for e in missing[:10]:
            rep.add("missing-reciprocal",
                    f"edge {int(e)} ({int(src[e])}->{int(dst[e])}) has no reciprocal "
                    f"({int(dst[e])}->{int(src[e])})", [e])
        if missing.size > 10:
            rep.add("missing-reciprocal", f"... and {missing.size - 10} more", [])
        fwd = in_range[found]
        rev = in_range[order[pos[found]]]
        fa, fb = g.edge_feat[fwd], g.edge_feat[rev]
        mism = np.flatnonzero(
            (np.abs(fa[:, :2] + fb[:, :2]).max(axis=1) > RECIPROCAL_TOL)
            | (np.abs(fa[:, 2:] - fb[:, 2:]).max(axis=1) > RECIPROCAL_TOL)
        )
        if mism.size:
            rep.add("reciprocal-features",
                    f"{mism.size} edges whose reciprocal features are not negated/equal",
                    _first(fwd[mism]))

    if g.n_edges:
        norm = np.hypot(g.edge_feat[:, 0], g.edge_feat[:, 1])
        nonunit = np.flatnonzero(np.abs(norm - 1.0) > UNIT_TOL)
        if nonunit.size:
            rep.add("direction-norm", f"{nonunit.size} edge directions are not unit length",
                    _first(nonunit))
    if not np.all(np.isfinite(g.edge_feat)):
        rep.add("non-finite", "edge features contain non-finite values",
                _first(np.flatnonzero(~np.isfinite(g.edge_feat).all(axis=1))))

    wall = g.wall_mask
    wrong = np.flatnonzero(g.pressure_valid != wall)
    if wrong.size:
        on_fluid = wrong[~wall[wrong]]
        if on_fluid.size:
            rep.add("pressure-mask", f"pressure set on {on_fluid.size} non-Wall nodes", _first(on_fluid))
        off_wall = wrong[wall[wrong]]
        if off_wall.size:
            rep.add("pressure-mask", f"pressure missing on {off_wall.size} Wall nodes", _first(off_wall))
    if not np.all(np.isfinite(g.pressure_in[g.pressure_valid])):
        rep.add("non-finite", "input pressures contain non-finite values")

    types = g.node_type.astype(np.int64)
    if np.any((types < 0) | (types > 2)):
        rep.add("node-type", "unknown node type codes", _first(np.flatnonzero((types < 0) | (types > 2))))
    else:
        rank = STORAGE_RANK[types]
        unordered = np.flatnonzero(np.diff(rank) < 0)
        if unordered.size:
            rep.add("node-order", "node types are not stored Wall, Fluid, Farfield", _first(unordered + 1))
    n_wall = int(np.count_nonzero(types == NodeType.WALL))
    n_fluid = int(np.count_nonzero(types == NodeType.FLUID))
    if n_wall != g.meta.p:
        rep.add("meta-count", f"meta.p = {g.meta.p} but graph has {n_wall} Wall nodes")
    if n_fluid != g.meta.m:
        rep.add("meta-count", f"meta.m = {g.meta.m} but graph has {n_fluid} Fluid nodes")
    if not np.all(np.isfinite(g.node_pos)):
        rep.add("non-finite", "node positions contain non-finite values")
    return rep


# ---------------------------------------------------------------------------
# feature groups


@dataclass(frozen=True)
class GroupedFeatures:
    groups: tuple

    def __len__(self):
        return len(self.groups)

    def __getitem__(self, k):
        return self.groups[k]


def split_groups(V: np.ndarray, C: int) -> GroupedFeatures:
    """Split the feature dimension into ``C`` equal-width column blocks."""
    V = np.asarray(V)
    if V.ndim != 2:
        raise ShapeError("expected a 2-D node-feature matrix")
    if C < 1 or V.shape[1] % C:
        raise ConfigError(f"group count {C} does not divide feature width {V.shape[1]}")
    w = V.shape[1] // C
    return GroupedFeatures(tuple(V[:, k * w:(k + 1) * w].copy() for k in range(C)))


def merge_groups(gf: GroupedFeatures | Sequence[np.ndarray]) -> np.ndarray:
    groups = gf.groups if isinstance(gf, GroupedFeatures) else tuple(gf)
    if not groups:
        raise ShapeError("no groups to merge")
    rows = {np.shape(x)[0] for x in groups}
    if len(rows) != 1:
        raise ShapeError(f"groups have mismatched row counts {sorted(rows)}")
    return np.concatenate(groups, axis=1)
