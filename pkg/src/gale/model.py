"""Flow-reconstruction model: input context, feature propagation,
encode -> reversible process -> decode, and the two-part L2 loss.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, DataError, StagnationEstimateError
from .graph import FlowGraph, NodeType, one_hot
from .layers import GraphOps, LayerKind
from .nn import Mlp, MlpSpec, add_grads, init_block
from .reversible import ProcessorConfig, RevProcessor
from .synth import PhysicalConstants

ALPHA_SCALE = 15.0  # degrees; half-width of the sampled angle range
CTX_U_REF = 25.0  # m/s; input scale of the estimated farfield speed
EDGE_LEN_SCALE = 10.0  # edge lengths enter as 10 * length / chord


@dataclass(frozen=True)
class InputContext:
    U_hat_inf: float
    C_hat_n: float


@dataclass(frozen=True)
class OutputContext:
    U_inf_pred: float
    alpha_pred: float
    TI_pred: float

    def as_array(self):
        return np.array([self.U_inf_pred, self.alpha_pred, self.TI_pred])


@dataclass(frozen=True)
class NormStats:
    p_mean: float
    p_std: float
    u_scale: float

    def __post_init__(self):
        if not self.p_std > 0:
            raise DataError("surface pressure is constant; cannot normalise")
        if not self.u_scale > 0:
            raise DataError("velocity scale must be positive")

    def normalize(self, fields: np.ndarray) -> np.ndarray:
        out = np.array(fields, dtype=float)
        out[..., 0] = (out[..., 0] - self.p_mean) / self.p_std
        out[..., 1:] = out[..., 1:] / self.u_scale
        return out

    def denormalize(self, fields: np.ndarray) -> np.ndarray:
        out = np.array(fields, dtype=float)
        out[..., 0] = out[..., 0] * self.p_std + self.p_mean
        out[..., 1:] = out[..., 1:] * self.u_scale
        return out

    def normalize_globals(self, glob) -> np.ndarray:
        U, alpha, ti = glob
        return np.array([U / self.u_scale, alpha / ALPHA_SCALE, ti])

    def denormalize_globals(self, glob) -> np.ndarray:
        U, alpha, ti = glob
        return np.array([U * self.u_scale, alpha * ALPHA_SCALE, ti])


@dataclass(frozen=True)
class ModelConfig:
    N: int = 128
    L: int = 30
    C: int = 4
    kind: str = "gat"
    heads: int = 2
    head_dim: int = 24
    kernel_hidden: int = 36
    use_context: bool = True
    fluid_only_loss: bool = False
    fp_iterations: int = 20
    ablation_u_ref: float = 25.0

    def __post_init__(self):
        ProcessorConfig(self.L, self.C, self.N, self.layer_kind)
        if self.fp_iterations < 1:
            raise ConfigError("fp_iterations must be at least 1")

    @property
    def layer_kind(self) -> LayerKind:
        return LayerKind(self.kind, heads=self.heads, head_dim=self.head_dim, hidden=self.kernel_hidden)

    @property
    def processor(self) -> ProcessorConfig:
        return ProcessorConfig(self.L, self.C, self.N, self.layer_kind)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# input context and feature propagation


def estimate_context(g: FlowGraph, consts: PhysicalConstants | None = None) -> InputContext:
    """Bernoulli farfield speed and normal-force coefficient from wall pressures."""
    rho = consts.rho if consts is not None else g.meta.rho
    wall = g.wall_mask & g.pressure_valid
    if not np.any(wall):
        raise StagnationEstimateError("graph has no Wall node with a known pressure")
    p = g.pressure_in[wall]
    p0 = float(p.max())
    if not p0 > 0:
        raise StagnationEstimateError(f"no positive stagnation pressure found (max {p0} Pa)")
    U_hat = math.sqrt(2.0 * p0 / rho)
    cn = float(np.sum(p * g.wall_length[wall] * g.wall_normal[wall, 1])) / p0
    return InputContext(U_hat, cn)


def propagation_matrix(g_or_ops) -> sp.csr_matrix:
    """Symmetrically normalised adjacency D^-1/2 A D^-1/2 without self-loops."""
    if isinstance(g_or_ops, FlowGraph):
        n, edges = g_or_ops.n_nodes, g_or_ops.edges
    else:
        n, edges = g_or_ops
    A = sp.csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    A.sum_duplicates()
    A.data[:] = 1.0
    deg = np.asarray(A.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    D = sp.diags(inv)
    return (D @ A @ D).tocsr()


@dataclass(frozen=True)
class PropagationResult:
    values: np.ndarray
    isolated: np.ndarray  # indices of degree-0 nodes left at their initial value


def feature_propagate(g: FlowGraph, iters: int = 20, known=None, mask=None) -> PropagationResult:
    """Diffuse known node values through the normalised adjacency, clamping
    the known entries after every step.  Unknown entries start at zero."""
    if iters < 1:
        raise ConfigError("feature propagation needs at least one iteration")
    mask = g.pressure_valid if mask is None else np.asarray(mask, dtype=bool)
    known = g.pressure_in if known is None else np.asarray(known, dtype=float)
    A = propagation_matrix(g)
    x = np.where(mask, known, 0.0)
    clamp = x[mask].copy()
    for _ in range(iters):
        x = A @ x
        x[mask] = clamp
    deg = np.diff(A.indptr)
    return PropagationResult(x, np.flatnonzero((deg == 0) & ~mask))


def fp_fixed_point(g: FlowGraph, known=None, mask=None) -> np.ndarray:
    """Closed-form limit x_u = (I - A_uu)^-1 A_uk x_k of feature propagation."""
    mask = g.pressure_valid if mask is None else np.asarray(mask, dtype=bool)
    known = g.pressure_in if known is None else np.asarray(known, dtype=float)
    A = propagation_matrix(g)
    u, k = np.flatnonzero(~mask), np.flatnonzero(mask)
    Auu = A[u][:, u]
    rhs = A[u][:, k] @ known[k]
    x = np.where(mask, known, 0.0)
    x[u] = spla.spsolve((sp.identity(u.size, format="csc") - Auu).tocsc(), rhs)
    return x


# ---------------------------------------------------------------------------
# prepared inputs


@dataclass
class PreparedGraph:
    graph: FlowGraph
    ops: GraphOps
    ctx: InputContext
    stats: NormStats
    node_x: np.ndarray  # (n, 4): propagated pressure, one-hot type
    edge_x: np.ndarray  # (E, 4)
    ctx_in: np.ndarray  # (2,)
    target: np.ndarray  # (n, 3) normalised
    global_target: np.ndarray  # (3,) normalised
    loss_weight: np.ndarray  # (n,) 1 for nodes counted in the node loss
    fp_pressure: np.ndarray  # (n,) normalised propagated pressure


def make_stats(g: FlowGraph, ctx: InputContext, cfg: ModelConfig) -> NormStats:
    p = g.pressure_in[g.wall_mask & g.pressure_valid]
    u_scale = ctx.U_hat_inf if cfg.use_context else cfg.ablation_u_ref
    return NormStats(float(p.mean()), float(p.std()), float(u_scale))


def prepare(g: FlowGraph, cfg: ModelConfig, consts: PhysicalConstants | None = None) -> PreparedGraph:
    ctx = estimate_context(g, consts)
    stats = make_stats(g, ctx, cfg)
    known = np.where(g.pressure_valid, (g.pressure_in - stats.p_mean) / stats.p_std, 0.0)
    fp = feature_propagate(g, cfg.fp_iterations, known=known).values
    node_x = np.column_stack([fp, one_hot(g.node_type)])
    ef = g.edge_feat.copy()
    ef[:, 2:] *= EDGE_LEN_SCALE / g.meta.chord
    ctx_in = np.array([ctx.U_hat_inf / CTX_U_REF, ctx.C_hat_n]) if cfg.use_context else np.zeros(2)
    if cfg.fluid_only_loss:
        weight = (g.node_type == NodeType.FLUID).astype(float)
    else:
        weight = np.ones(g.n_nodes)
    return PreparedGraph(
        graph=g, ops=GraphOps(g.n_nodes, g.edges), ctx=ctx, stats=stats,
        node_x=node_x, edge_x=ef, ctx_in=ctx_in,
        target=stats.normalize(g.target), global_target=stats.normalize_globals(g.global_true),
        loss_weight=weight, fp_pressure=fp,
    )


# ---------------------------------------------------------------------------
# network


@dataclass
class LatentState:
    nodes: np.ndarray
    edges: np.ndarray
    glob: np.ndarray


class FlowModel:
    N_IN_NODE = 4
    N_IN_EDGE = 4
    N_IN_GLOBAL = 2

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        N = cfg.N
        self.glob_enc = Mlp(MlpSpec(self.N_IN_GLOBAL, N, N, final_norm=True), "enc.global.")
        self.node_enc = Mlp(MlpSpec(self.N_IN_NODE + N, N, N, final_norm=True), "enc.node.")
        self.edge_enc = Mlp(MlpSpec(self.N_IN_EDGE, N, N, final_norm=True), "enc.edge.")
        self.proc = RevProcessor(cfg.processor)
        self.node_dec = Mlp(MlpSpec(N, N, 3, final_norm=False), "dec.node.")
        self.glob_dec = Mlp(MlpSpec(2 * N, N, 3, final_norm=False), "dec.global.")
        self._mlps = [self.glob_enc, self.node_enc, self.edge_enc, self.node_dec, self.glob_dec]

    def shapes(self) -> dict:
        out = {}
        for m in self._mlps:
            out.update(m.shapes())
        out.update(self.proc.shapes())
        return out

    def count(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes().values()))

    def init(self, seed: int) -> dict:
        rng = np.random.default_rng(seed)
        params = {}
        for m in self._mlps:
            for k, s in m.shapes().items():
                params[k] = init_block(k, s, rng)
        params.update(self.proc.init(rng))
        return params

    # -- stages ------------------------------------------------------------

    def encode(self, params, pg: PreparedGraph):
        gl, gcache = self.glob_enc.forward(params, pg.ctx_in[None, :])
        n = pg.node_x.shape[0]
        xin = np.concatenate([pg.node_x, np.repeat(gl, n, axis=0)], axis=1)
        V0, ncache = self.node_enc.forward(params, xin)
        E, ecache = self.edge_enc.forward(params, pg.edge_x)
        return LatentState(V0, E, gl), (gcache, ncache, ecache)

    def decode_raw(self, params, lat: LatentState):
        Yn, ncache = self.node_dec.forward(params, lat.nodes)
        gin = np.concatenate([lat.glob, lat.nodes.mean(axis=0, keepdims=True)], axis=1)
        Yg, gcache = self.glob_dec.forward(params, gin)
        return Yn, Yg[0], (ncache, gcache)

    def forward(self, params, pg: PreparedGraph):
        lat, ecaches = self.encode(params, pg)
        Eg = self.proc.project_edges(params, lat.edges)
        VL = self.proc.forward(params, lat.nodes, pg.ops, Eg)
        out = LatentState(VL, lat.edges, lat.glob)
        Yn, Yg, dcaches = self.decode_raw(params, out)
        return Yn, Yg, (lat, ecaches, Eg, VL, dcaches)

    def loss_terms(self, Yn, Yg, pg: PreparedGraph, lam: float):
        w = pg.loss_weight
        diff = Yn - pg.target
        denom = 3.0 * w.sum()
        node = float(np.sum(w[:, None] * diff * diff) / denom)
        gd = Yg - pg.global_target
        glob = float(np.mean(gd * gd))
        return node + lam * glob, node, glob

    def loss(self, params, pg: PreparedGraph, lam: float = 1.0):
        Yn, Yg, _ = self.forward(params, pg)
        return self.loss_terms(Yn, Yg, pg, lam)

    def loss_and_grad(self, params, pg: PreparedGraph, lam: float = 1.0):
        Yn, Yg, (lat, (gcache, ncache, ecache), Eg, VL, (ndc, gdc)) = self.forward(params, pg)
        terms = self.loss_terms(Yn, Yg, pg, lam)
        w = pg.loss_weight
        n = Yn.shape[0]
        N = self.cfg.N
        dYn = 2.0 * w[:, None] * (Yn - pg.target) / (3.0 * w.sum())
        dYg = (2.0 * lam / 3.0) * (Yg - pg.global_target)

        grads = {}
        dVL, gr = self.node_dec.backward(params, ndc, dYn)
        add_grads(grads, gr)
        dgin, gr = self.glob_dec.backward(params, gdc, dYg[None, :])
        add_grads(grads, gr)
        dgl = dgin[:, :N]
        dVL = dVL + dgin[:, N:] / n

        dV0, dEg, gr = self.proc.backward(params, VL, dVL, pg.ops, Eg)
        add_grads(grads, gr)
        dE, gr = self.proc.project_edges_backward(params, lat.edges, dEg)
        add_grads(grads, gr)
        _, gr = self.edge_enc.backward(params, ecache, dE)
        add_grads(grads, gr)
        dxin, gr = self.node_enc.backward(params, ncache, dV0)
        add_grads(grads, gr)
        dgl = dgl + dxin[:, self.N_IN_NODE:].sum(axis=0, keepdims=True)
        _, gr = self.glob_enc.backward(params, gcache, dgl)
        add_grads(grads, gr)
        return terms, grads

    def predict(self, params, pg: PreparedGraph):
        """Physical-unit node fields (n, 3) and OutputContext."""
        Yn, Yg, _ = self.forward(params, pg)
        fields = pg.stats.denormalize(Yn)
        U, alpha, ti = pg.stats.denormalize_globals(Yg)
        return fields, OutputContext(float(U), float(alpha), float(ti))


def encode(g: FlowGraph, params, cfg: ModelConfig) -> LatentState:
    model = FlowModel(cfg)
    return model.encode(params, prepare(g, cfg))[0]


def decode(latent: LatentState, params, stats: NormStats, cfg: ModelConfig):
    model = FlowModel(cfg)
    Yn, Yg, _ = model.decode_raw(params, latent)
    U, alpha, ti = stats.denormalize_globals(Yg)
    return stats.denormalize(Yn), OutputContext(float(U), float(alpha), float(ti))


def loss(pred_fields, pred_ctx, g: FlowGraph, lam: float = 1.0, cfg: ModelConfig | None = None):
    """Loss from physical-unit predictions: both sides are normalised with the
    graph's own statistics before the squared errors are taken."""
    cfg = cfg or ModelConfig()
    ctx = estimate_context(g)
    stats = make_stats(g, ctx, cfg)
    w = (g.node_type == NodeType.FLUID).astype(float) if cfg.fluid_only_loss else np.ones(g.n_nodes)
    diff = stats.normalize(pred_fields) - stats.normalize(g.target)
    node = float(np.sum(w[:, None] * diff * diff) / (3.0 * w.sum()))
    pc = pred_ctx.as_array() if isinstance(pred_ctx, OutputContext) else np.asarray(pred_ctx)
    gd = stats.normalize_globals(pc) - stats.normalize_globals(g.global_true)
    return node + lam * float(np.mean(gd * gd))


def reconstruct(g: FlowGraph, params, cfg: ModelConfig):
    model = FlowModel(cfg)
    return model.predict(params, prepare(g, cfg))


def fp_baseline(pg: PreparedGraph) -> np.ndarray:
    """Pressure predicted by feature propagation alone, in Pa."""
    return pg.fp_pressure * pg.stats.p_std + pg.stats.p_mean


def freestream_baseline(pg: PreparedGraph) -> np.ndarray:
    n = pg.graph.n_nodes
    return np.column_stack([np.full(n, pg.ctx.U_hat_inf), np.zeros(n)])
