"""Test-set error metrics and plot-ready CSV export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle import fmt
from .errors import ConfigError, CoverageError, GaleError
from .graph import FlowGraph, NodeType
from .model import OutputContext

FIELD_COLUMNS = ("x", "y", "type", "p_true", "p_pred", "ux_true", "ux_pred", "uy_true", "uy_pred")
GLOBAL_COLUMNS = ("quantity", "true", "pred")
GLOBAL_NAMES = ("U_inf", "alpha", "TI")
_TYPE_NAMES = {NodeType.FLUID: "fluid", NodeType.WALL: "wall", NodeType.FARFIELD: "farfield"}


@dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned ellipse about the chord midpoint; axes in chord lengths."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ConfigError(f"region axes must satisfy a >= b > 0, got a={self.a}, b={self.b}")

    @property
    def label(self) -> str:
        return f"a={self.a:g},b={self.b:g}"

    def contains(self, g: FlowGraph) -> np.ndarray:
        rel = (g.node_pos - np.asarray(g.meta.center)) / g.meta.chord
        return (rel[:, 0] / self.a) ** 2 + (rel[:, 1] / self.b) ** 2 <= 1.0


DEFAULT_REGIONS = (RegionSpec(0.6, 0.1), RegionSpec(0.7, 0.15), RegionSpec(0.8, 0.2))


@dataclass(frozen=True)
class Prediction:
    fields: np.ndarray  # (n, 3): p, ux, uy in physical units
    ctx: OutputContext


@dataclass
class MetricsReport:
    p: float
    ux: float
    uy: float
    U_inf: float
    alpha: float
    TI: float
    n_cases: int
    regions: dict = field(default_factory=dict)  # label -> (ux, uy) or None when empty

    def rows(self):
        yield ("pressure_Pa", self.p)
        yield ("ux_m_s", self.ux)
        yield ("uy_m_s", self.uy)
        yield ("U_inf_m_s", self.U_inf)
        yield ("alpha_deg", self.alpha)
        yield ("TI", self.TI)
        for label, val in self.regions.items():
            ux, uy = (np.nan, np.nan) if val is None else val
            yield (f"region[{label}]_ux_m_s", ux)
            yield (f"region[{label}]_uy_m_s", uy)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("metric", "value"))
            for name, v in self.rows():
                w.writerow((name, "" if np.isnan(v) else fmt(v)))
        return path

    def table(self) -> str:
        rows = list(self.rows())
        width = max(len(n) for n, _ in rows)
        lines = [f"{'metric':<{width}}  value", "-" * (width + 14)]
        for name, v in rows:
            lines.append(f"{name:<{width}}  {'empty' if np.isnan(v) else f'{v:.6g}'}")
        return "\n".join(lines)


def fluid_mask(g: FlowGraph) -> np.ndarray:
    """Nodes whose fields are reconstructed, i.e. everything but the Wall."""
    return g.node_type != NodeType.WALL


def _lookup(preds, graphs):
    missing = [g.meta.case_id for g in graphs if g.meta.case_id not in preds]
    if missing:
        raise CoverageError(f"no prediction for {len(missing)} case(s): {', '.join(missing[:5])}")
    return [preds[g.meta.case_id] for g in graphs]


def _case_rmse(pred: Prediction, g: FlowGraph, mask: np.ndarray) -> np.ndarray:
    d = np.asarray(pred.fields)[mask] - g.target[mask]
    return np.sqrt(np.mean(d * d, axis=0))


def rmse_global(preds: dict, graphs, pooled: bool = False, regions=DEFAULT_REGIONS) -> MetricsReport:
    """Per-case RMSE per node channel over the reconstructed nodes, then the
    arithmetic mean over cases (``pooled`` pools all nodes instead).  Global
    quantities are a single value per case and are pooled over cases."""
    graphs = list(graphs)
    if not graphs:
        raise CoverageError("no cases to evaluate")
    plist = _lookup(preds, graphs)
    node = _aggregate([(p.fields, g, fluid_mask(g)) for p, g in zip(plist, graphs)], pooled)
    gerr = np.array([p.ctx.as_array() - g.global_true for p, g in zip(plist, graphs)])
    glob = np.sqrt(np.mean(gerr * gerr, axis=0))
    rep = MetricsReport(*map(float, node), *map(float, glob), n_cases=len(graphs))
    rep.regions = rmse_regions(preds, graphs, regions, pooled=pooled)
    return rep


def _aggregate(items, pooled: bool) -> np.ndarray:
    if pooled:
        sq = np.concatenate([(np.asarray(f)[m] - g.target[m]) ** 2 for f, g, m in items])
        return np.sqrt(sq.mean(axis=0))
    return np.mean([_case_rmse(Prediction(f, None), g, m) for f, g, m in items], axis=0)


def rmse_regions(preds: dict, graphs, regions=DEFAULT_REGIONS, pooled: bool = False) -> dict:
    """Velocity RMSE (ux, uy) restricted to reconstructed nodes inside each
    ellipse.  Cases where a region holds no such node are skipped; a region
    empty for every case maps to ``None``."""
    graphs = list(graphs)
    plist = _lookup(preds, graphs)
    out = {}
    for reg in regions:
        items = []
        for p, g in zip(plist, graphs):
            m = fluid_mask(g) & reg.contains(g)
            if m.any():
                items.append((p.fields, g, m))
        out[reg.label] = None if not items else tuple(float(v) for v in _aggregate(items, pooled)[1:])
    return out


def export_fields(g: FlowGraph, fields: np.ndarray, path, ctx: OutputContext | None = None) -> list[Path]:
    """Write ``fields.csv`` (and ``globals.csv`` when ``ctx`` is given) into
    directory ``path``."""
    fields = np.asarray(fields, dtype=float)
    if fields.shape != (g.n_nodes, 3):
        raise GaleError(f"fields have shape {fields.shape}, expected ({g.n_nodes}, 3)")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "fields.csv"]
    with open(written[0], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS)
        for i in range(g.n_nodes):
            t, f = g.target[i], fields[i]
            w.writerow((fmt(g.node_pos[i, 0]), fmt(g.node_pos[i, 1]), _TYPE_NAMES[NodeType(g.node_type[i])],
                        fmt(t[0]), fmt(f[0]), fmt(t[1]), fmt(f[1]), fmt(t[2]), fmt(f[2])))
    if ctx is not None:
        written.append(out / "globals.csv")
        with open(written[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GLOBAL_COLUMNS)
            for name, t, p in zip(GLOBAL_NAMES, g.global_true, ctx.as_array()):
                w.writerow((name, fmt(t), fmt(p)))
    return written


def read_fields(path) -> dict:
    """Columns of a ``fields.csv`` as arrays (``type`` stays a string array)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for col in FIELD_COLUMNS:
        vals = [r[col] for r in rows]
        out[col] = np.array(vals) if col == "type" else np.array(vals, dtype=float)
    return out
