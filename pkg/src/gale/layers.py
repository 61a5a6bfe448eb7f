"""Message-passing kernels used inside each reversible group.

All kernels map a group-width node matrix to a matrix of the same width,
aggregating along stored directed edges (src -> dst).  Each has a forward
returning a cache and a backward producing gradients for the node input,
the projected edge latents and every parameter block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ShapeError
from .nn import Mlp, MlpSpec, he_uniform, layer_norm, layer_norm_backward, relu
from .nn import count_params as mlp_count

GEN_MSG_EPS = 1e-7
GAT_SLOPE = 0.2


class GraphOps:
    """Scatter/gather operators for a fixed directed edge list.

    Sums over in-edges go through a sparse incidence matrix, so the
    summation order per destination follows edge order and is reproducible.
    """

    def __init__(self, n_nodes: int, edges: np.ndarray, dtype=np.float64):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.n = int(n_nodes)
        self.src = edges[:, 0]
        self.dst = edges[:, 1]
        E = edges.shape[0]
        ones = np.ones(E, dtype=dtype)
        cols = np.arange(E)
        self.to_dst = sp.csr_matrix((ones, (self.dst, cols)), shape=(self.n, E))
        self.to_src = sp.csr_matrix((ones, (self.src, cols)), shape=(self.n, E))
        self.in_degree = np.bincount(self.dst, minlength=self.n)
        order = np.argsort(self.dst, kind="stable")
        self._order = order
        sdst = self.dst[order]
        self._has_in = np.flatnonzero(self.in_degree > 0)
        self._starts = np.searchsorted(sdst, self._has_in)

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]

    def scatter_dst(self, M):
        return self.to_dst @ M

    def scatter_src(self, M):
        return self.to_src @ M

    def segment_max(self, vals):
        """Per-destination max over in-edges; zero rows for isolated nodes."""
        out = np.zeros((self.n,) + vals.shape[1:], dtype=vals.dtype)
        if self.n_edges:
            out[self._has_in] = np.maximum.reduceat(vals[self._order], self._starts, axis=0)
        return out

    def segment_softmax(self, logits):
        ex = np.exp(logits - self.segment_max(logits)[self.dst])
        denom = self.scatter_dst(ex)
        return ex / denom[self.dst]


# ---------------------------------------------------------------------------


class Kernel:
    """Common plumbing: parameter naming under a prefix and initialisation."""

    kind = "base"

    def __init__(self, width: int, prefix: str):
        self.width = width
        self.prefix = prefix

    def local_shapes(self) -> dict:
        raise NotImplementedError

    def shapes(self) -> dict:
        return {self.prefix + k: s for k, s in self.local_shapes().items()}

    def count(self) -> int:
        return int(sum(np.prod(s) for s in self.local_shapes().values()))

    def init(self, rng: np.random.Generator) -> dict:
        out = {}
        for k, s in self.local_shapes().items():
            out[self.prefix + k] = self._init_block(k, s, rng)
        return out

    def _init_block(self, name, shape, rng):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            return np.ones(shape)
        if leaf in ("beta", "eps") or leaf.startswith("b"):
            return np.zeros(shape)
        if leaf == "inv_temp":
            return np.ones(shape)
        return he_uniform(rng, shape[0] if len(shape) > 1 else shape[-1], shape)

    def _edge_messages(self, params, X, ops, Eg):
        p = self.prefix
        Eh = Eg @ params[p + "edge.w"] + params[p + "edge.b"]
        pre = X[ops.src] + Eh
        return pre, relu(pre)

    def _edge_messages_backward(self, params, pre, dM, ops, Eg):
        p = self.prefix
        dpre = dM * (pre > 0)
        grads = {p + "edge.w": Eg.T @ dpre, p + "edge.b": dpre.sum(axis=0)}
        return ops.scatter_src(dpre), dpre @ params[p + "edge.w"].T, grads

    def _check(self, X, ops, Eg):
        if X.ndim != 2 or X.shape[1] != self.width:
            raise ShapeError(f"{self.prefix}: node input width {X.shape[-1]} != group width {self.width}")
        if Eg.shape != (ops.n_edges, self.width):
            raise ShapeError(f"{self.prefix}: edge input shape {Eg.shape} != ({ops.n_edges}, {self.width})")


class GineKernel(Kernel):
    """GIN with edge features: MLP((1 + eps) x_i + sum_j relu(x_j + W e_ji))."""

    kind = "gine"

    def __init__(self, width, prefix, hidden=36):
        super().__init__(width, prefix)
        self.hidden = hidden
        self.mlp = Mlp(MlpSpec(width, hidden, width, final_norm=True), prefix + "mlp.")

    def local_shapes(self):
        g = self.width
        out = {"edge.w": (g, g), "edge.b": (g,), "eps": (1,)}
        out.update({"mlp." + k: s for k, s in self.mlp.spec.shapes().items()})
        return out

    def forward(self, params, X, ops, Eg):
        self._check(X, ops, Eg)
        pre, M = self._edge_messages(params, X, ops, Eg)
        agg = ops.scatter_dst(M)
        scale = 1.0 + params[self.prefix + "eps"][0]
        z = scale * X + agg
        y, mcache = self.mlp.forward(params, z)
        return y, (X, pre, mcache, scale)

    def backward(self, params, cache, dY, ops, Eg):
        X, pre, mcache, scale = cache
        dz, grads = self.mlp.backward(params, mcache, dY)
        dX = scale * dz
        grads[self.prefix + "eps"] = np.array([np.sum(dz * X)])
        dXs, dEg, eg = self._edge_messages_backward(params, pre, dz[ops.dst], ops, Eg)
        grads.update(eg)
        return dX + dXs, dEg, grads


class GenKernel(Kernel):
    """Generalised aggregation: softmax-weighted sum of messages with a learnable
    inverse temperature, followed by MLP(x_i + aggregate)."""

    kind = "gen"

    def __init__(self, width, prefix, hidden=36):
        super().__init__(width, prefix)
        self.hidden = hidden
        self.mlp = Mlp(MlpSpec(width, hidden, width, final_norm=True), prefix + "mlp.")

    def local_shapes(self):
        g = self.width
        out = {"edge.w": (g, g), "edge.b": (g,), "inv_temp": (1,)}
        out.update({"mlp." + k: s for k, s in self.mlp.spec.shapes().items()})
        return out

    def aggregate(self, M, t, ops):
        w = ops.segment_softmax(t * M)
        return ops.scatter_dst(w * M), w

    def forward(self, params, X, ops, Eg):
        self._check(X, ops, Eg)
        pre, M = self._edge_messages(params, X, ops, Eg)
        M = M + GEN_MSG_EPS
        t = params[self.prefix + "inv_temp"][0]
        agg, w = self.aggregate(M, t, ops)
        y, mcache = self.mlp.forward(params, X + agg)
        return y, (pre, M, w, agg, t, mcache)

    def backward(self, params, cache, dY, ops, Eg):
        pre, M, w, agg, t, mcache = cache
        dz, grads = self.mlp.backward(params, mcache, dY)
        G = dz[ops.dst]
        centred = M - agg[ops.dst]
        gw = G * w
        dM = gw * (1.0 + t * centred)
        grads[self.prefix + "inv_temp"] = np.array([np.sum(gw * centred * M)])
        dXs, dEg, eg = self._edge_messages_backward(params, pre, dM, ops, Eg)
        grads.update(eg)
        return dz + dXs, dEg, grads


class GatKernel(Kernel):
    """Multi-head attention with an edge term in the logit, heads concatenated,
    projected back to group width and LayerNorm-ed."""

    kind = "gat"

    def __init__(self, width, prefix, heads=2, head_dim=24):
        super().__init__(width, prefix)
        self.heads = heads
        self.head_dim = head_dim

    def local_shapes(self):
        g, H, d = self.width, self.heads, self.head_dim
        return {
            "lin.w": (g, H * d),
            "edge.w": (g, H * d),
            "att_src": (H, d),
            "att_dst": (H, d),
            "att_edge": (H, d),
            "out.w": (H * d, g),
            "out.b": (g,),
            "ln.gamma": (g,),
            "ln.beta": (g,),
        }

    def _init_block(self, name, shape, rng):
        if name.startswith("att_"):
            return he_uniform(rng, shape[1], shape)
        return super()._init_block(name, shape, rng)

    def attention(self, params, X, ops, Eg):
        p, H, d = self.prefix, self.heads, self.head_dim
        Hx = (X @ params[p + "lin.w"]).reshape(-1, H, d)
        He = (Eg @ params[p + "edge.w"]).reshape(-1, H, d)
        a_src = (Hx * params[p + "att_src"]).sum(-1)
        a_dst = (Hx * params[p + "att_dst"]).sum(-1)
        a_e = (He * params[p + "att_edge"]).sum(-1)
        pre = a_src[ops.src] + a_dst[ops.dst] + a_e
        logit = np.where(pre > 0, pre, GAT_SLOPE * pre)
        alpha = ops.segment_softmax(logit)
        return Hx, He, pre, alpha

    def forward(self, params, X, ops, Eg):
        self._check(X, ops, Eg)
        p = self.prefix
        Hx, He, pre, alpha = self.attention(params, X, ops, Eg)
        msg = (alpha[..., None] * Hx[ops.src]).reshape(ops.n_edges, -1)
        agg = ops.scatter_dst(msg)
        y = agg @ params[p + "out.w"] + params[p + "out.b"]
        out, ln = layer_norm(y, params[p + "ln.gamma"], params[p + "ln.beta"])
        return out, (X, Hx, He, pre, alpha, agg, ln)

    def backward(self, params, cache, dY, ops, Eg):
        X, Hx, He, pre, alpha, agg, ln = cache
        p, H, d = self.prefix, self.heads, self.head_dim
        grads = {}
        dy, grads[p + "ln.gamma"], grads[p + "ln.beta"] = layer_norm_backward(ln, params[p + "ln.gamma"], dY)
        grads[p + "out.w"] = agg.T @ dy
        grads[p + "out.b"] = dy.sum(axis=0)
        dagg = dy @ params[p + "out.w"].T
        dmsg = dagg[ops.dst].reshape(-1, H, d)
        Hs = Hx[ops.src]
        dalpha = (dmsg * Hs).sum(-1)
        dHx = ops.scatter_src((alpha[..., None] * dmsg).reshape(ops.n_edges, -1)).reshape(-1, H, d)
        # softmax backward within each destination segment
        dlogit = alpha * (dalpha - ops.scatter_dst(alpha * dalpha)[ops.dst])
        dpre = dlogit * np.where(pre > 0, 1.0, GAT_SLOPE)
        da_src = ops.scatter_src(dpre)
        da_dst = ops.scatter_dst(dpre)
        grads[p + "att_src"] = (da_src[..., None] * Hx).sum(0)
        grads[p + "att_dst"] = (da_dst[..., None] * Hx).sum(0)
        grads[p + "att_edge"] = (dpre[..., None] * He).sum(0)
        dHx = dHx + da_src[..., None] * params[p + "att_src"] + da_dst[..., None] * params[p + "att_dst"]
        dHe = (dpre[..., None] * params[p + "att_edge"]).reshape(ops.n_edges, -1)
        dHx = dHx.reshape(X.shape[0], -1)
        grads[p + "lin.w"] = X.T @ dHx
        grads[p + "edge.w"] = Eg.T @ dHe
        return dHx @ params[p + "lin.w"].T, dHe @ params[p + "edge.w"].T, grads


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerKind:
    name: str = "gine"
    heads: int = 2
    head_dim: int = 24
    hidden: int = 36

    def __post_init__(self):
        if self.name not in ("gat", "gine", "gen"):
            raise ConfigError(f"unknown kernel kind {self.name!r}")
        if self.name == "gat" and self.heads < 1:
            raise ConfigError("GAT needs at least one head")

    def build(self, width: int, prefix: str) -> Kernel:
        if self.name == "gat":
            return GatKernel(width, prefix, heads=self.heads, head_dim=self.head_dim)
        if self.name == "gine":
            return GineKernel(width, prefix, hidden=self.hidden)
        return GenKernel(width, prefix, hidden=self.hidden)


def count_params(kind: LayerKind | str, group_width: int, hidden: int | None = None,
                 heads: int | None = None, head_dim: int | None = None) -> int:
    """Exact trainable-scalar count of one group kernel."""
    if isinstance(kind, str):
        kind = LayerKind(kind)
    g = group_width
    if kind.name == "gat":
        H = heads if heads is not None else kind.heads
        d = head_dim if head_dim is not None else kind.head_dim
        return 2 * g * H * d + 3 * H * d + H * d * g + g + 2 * g
    h = hidden if hidden is not None else kind.hidden
    return g * g + g + 1 + mlp_count(MlpSpec(g, h, g, final_norm=True))
