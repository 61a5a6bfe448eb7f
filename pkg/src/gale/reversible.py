"""Grouped reversible message-passing stack.

One block splits the node matrix into C groups and computes::

    V'_0 = V_2 + ... + V_C
    V'_k = f_k(V'_{k-1}) + V_k        k = 1..C

which is inverted group by group from k = C down to 1.  ``backward`` keeps
only the final node matrix and rebuilds each block's input by inversion, so
retained activations do not grow with depth.  ``StoredBackward`` is the
conventional engine that tapes every block, kept as a reference.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .graph import merge_groups, split_groups
from .layers import GraphOps, LayerKind
from .nn import add_grads, he_uniform


@dataclass(frozen=True)
class ProcessorConfig:
    L: int = 30
    C: int = 4
    N: int = 128
    kind: LayerKind = field(default_factory=LayerKind)

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError("processor needs at least one layer")
        if self.C < 2:
            raise ConfigError("reversible blocks need at least two groups")
        if self.N % self.C:
            raise ConfigError(f"group count {self.C} does not divide latent width {self.N}")

    @property
    def group_width(self) -> int:
        return self.N // self.C


class ActivationTracker:
    """Counts simultaneously retained activation matrices and kernel calls."""

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.live_bytes = 0
        self.peak_bytes = 0
        self.kernel_forward = 0
        self.kernel_backward = 0

    def hold(self, *arrays):
        self.live += len(arrays)
        self.live_bytes += sum(_nbytes(a) for a in arrays)
        self.peak = max(self.peak, self.live)
        self.peak_bytes = max(self.peak_bytes, self.live_bytes)

    def release(self, *arrays):
        self.live -= len(arrays)
        self.live_bytes -= sum(_nbytes(a) for a in arrays)


def _nbytes(obj):
    if isinstance(obj, np.ndarray):
        return obj.nbytes
    if isinstance(obj, (tuple, list)):
        return sum(_nbytes(o) for o in obj)
    return 0


class _NoTracker(ActivationTracker):
    def hold(self, *arrays):
        pass

    def release(self, *arrays):
        pass


class RevProcessor:
    def __init__(self, cfg: ProcessorConfig, prefix: str = "proc."):
        self.cfg = cfg
        self.prefix = prefix
        g = cfg.group_width
        self.kernels = [[cfg.kind.build(g, f"{prefix}layer{l}.group{k}.") for k in range(cfg.C)]
                        for l in range(cfg.L)]
        self.proj_w = prefix + "edge_proj.w"
        self.proj_b = prefix + "edge_proj.b"

    # -- parameters --------------------------------------------------------

    def shapes(self) -> dict:
        out = {self.proj_w: (self.cfg.N, self.cfg.group_width), self.proj_b: (self.cfg.group_width,)}
        for row in self.kernels:
            for k in row:
                out.update(k.shapes())
        return out

    def init(self, rng: np.random.Generator) -> dict:
        out = {self.proj_w: he_uniform(rng, self.cfg.N, (self.cfg.N, self.cfg.group_width)),
               self.proj_b: np.zeros(self.cfg.group_width)}
        for row in self.kernels:
            for k in row:
                out.update(k.init(rng))
        return out

    def kernel_count(self) -> int:
        return self.kernels[0][0].count()

    # -- edge projection (shared by every kernel; edges are never updated) -

    def project_edges(self, params, E_lat):
        return E_lat @ params[self.proj_w] + params[self.proj_b]

    def project_edges_backward(self, params, E_lat, dEg):
        grads = {self.proj_w: E_lat.T @ dEg, self.proj_b: dEg.sum(axis=0)}
        return dEg @ params[self.proj_w].T, grads

    # -- blocks ------------------------------------------------------------

    def block_forward(self, params, layer, V, ops, Eg, tracker=None, keep=False):
        """Forward one block; with ``keep`` also return the per-group kernel caches."""
        C = self.cfg.C
        groups = split_groups(V, C).groups
        prev = _group_sum(groups[1:])
        out, caches = [], []
        for k in range(C):
            f, cache = self.kernels[layer][k].forward(params, prev, ops, Eg)
            if tracker is not None:
                tracker.kernel_forward += 1
            if keep:
                caches.append(cache)
            prev = f + groups[k]
            out.append(prev)
        merged = merge_groups(out)
        return (merged, caches) if keep else merged

    def block_inverse(self, params, layer, Vp, ops, Eg):
        V, _ = self._invert(params, layer, list(split_groups(Vp, self.cfg.C).groups), ops, Eg,
                            _NoTracker())
        return merge_groups(V)

    def _invert(self, params, layer, Vp, ops, Eg, tr):
        C = self.cfg.C
        row = self.kernels[layer]
        V = [None] * C
        caches = [None] * C
        for k in range(C - 1, 0, -1):
            f, caches[k] = row[k].forward(params, Vp[k - 1], ops, Eg)
            tr.kernel_forward += 1
            V[k] = Vp[k] - f
            tr.hold(caches[k], V[k])
        prev0 = _group_sum(V[1:])
        f, caches[0] = row[0].forward(params, prev0, ops, Eg)
        tr.kernel_forward += 1
        V[0] = Vp[0] - f
        tr.hold(prev0, caches[0], V[0])
        return V, (caches, prev0)

    def forward(self, params, V, ops, Eg, tracker=None):
        for l in range(self.cfg.L):
            V = self.block_forward(params, l, V, ops, Eg, tracker)
        return V

    def inverse(self, params, Vp, ops, Eg):
        for l in reversed(range(self.cfg.L)):
            Vp = self.block_inverse(params, l, Vp, ops, Eg)
        return Vp

    # -- gradients ---------------------------------------------------------

    def _block_grad(self, params, layer, caches, dVp, ops, Eg):
        """Gradient of one block given its kernel caches and output gradient."""
        C = self.cfg.C
        row = self.kernels[layer]
        g = list(dVp)
        dEg = np.zeros_like(Eg)
        grads = {}
        for k in range(C - 1, 0, -1):
            dX, dE, gr = row[k].backward(params, caches[k], g[k], ops, Eg)
            g[k - 1] = g[k - 1] + dX
            dEg += dE
            add_grads(grads, gr)
        g0, dE, gr = row[0].backward(params, caches[0], g[0], ops, Eg)
        dEg += dE
        add_grads(grads, gr)
        dV = [g[0]] + [g[k] + g0 for k in range(1, C)]
        return dV, g0, dEg, grads

    def backward(self, params, V_final, grad_out, ops, Eg, tracker=None):
        """Reversible backward from the final activation only.

        Returns ``(grad_V_initial, grad_Eg, grad_params)``.
        """
        tr = tracker if tracker is not None else _NoTracker()
        C = self.cfg.C
        Vp = list(split_groups(V_final, C).groups)
        dVp = list(split_groups(grad_out, C).groups)
        dEg = np.zeros_like(Eg)
        tr.hold(Eg, dEg, *Vp, *dVp)
        grads = {}
        for l in reversed(range(self.cfg.L)):
            V, (caches, prev0) = self._invert(params, l, Vp, ops, Eg, tr)
            if not all(np.all(np.isfinite(v)) for v in V):
                raise NumericError(f"non-finite reconstruction in processor layer {l}")
            dV, g0, dE, gr = self._block_grad(params, l, caches, dVp, ops, Eg)
            tr.kernel_backward += C
            tr.hold(g0)
            dEg += dE
            add_grads(grads, gr)
            tr.release(*caches, prev0, g0, *Vp)
            tr.release(*dVp)
            tr.hold(*dV)
            Vp, dVp = V, dV
        tr.release(Eg, dEg, *Vp, *dVp)
        return merge_groups(dVp), dEg, grads


class StoredBackward:
    """Conventional backward that tapes every block during the forward pass."""

    def __init__(self, proc: RevProcessor):
        self.proc = proc

    def forward(self, params, V, ops, Eg, tracker=None):
        tr = tracker if tracker is not None else _NoTracker()
        tape = []
        tr.hold(Eg)
        for l in range(self.proc.cfg.L):
            V, caches = self.proc.block_forward(params, l, V, ops, Eg, tr, keep=True)
            tr.hold(*caches, V)
            tape.append(caches)
        return V, tape

    def backward(self, params, tape, grad_out, ops, Eg, tracker=None):
        tr = tracker if tracker is not None else _NoTracker()
        dVp = list(split_groups(grad_out, self.proc.cfg.C).groups)
        dEg = np.zeros_like(Eg)
        tr.hold(dEg, *dVp)
        grads = {}
        for l in reversed(range(self.proc.cfg.L)):
            dV, g0, dE, gr = self.proc._block_grad(params, l, tape[l], dVp, ops, Eg)
            dEg += dE
            add_grads(grads, gr)
            tr.release(*dVp)
            tr.hold(*dV)
            dVp = dV
        return merge_groups(dVp), dEg, grads


def _group_sum(groups):
    total = groups[0]
    for x in groups[1:]:
        total = total + x
    return total


# ---------------------------------------------------------------------------
# public entry points


def rev_block_forward(proc: RevProcessor, params, layer, V, ops, Eg):
    return proc.block_forward(params, layer, V, ops, Eg)


def rev_block_inverse(proc: RevProcessor, params, layer, Vp, ops, Eg):
    return proc.block_inverse(params, layer, Vp, ops, Eg)


def rev_backward(proc: RevProcessor, params, V_final, grad_out, ops, Eg, tracker=None):
    return proc.backward(params, V_final, grad_out, ops, Eg, tracker)


def random_graph(n_nodes: int, rng: np.random.Generator, degree: int = 3) -> np.ndarray:
    """Connected random bidirectional edge list (ring plus random chords)."""
    pairs = {(i, (i + 1) % n_nodes) for i in range(n_nodes)} if n_nodes > 2 else {(0, 1)}
    extra = max(0, n_nodes * (degree - 2) // 2)
    for _ in range(extra):
        a, b = rng.integers(0, n_nodes, size=2)
        if a != b:
            pairs.add((int(min(a, b)), int(max(a, b))))
    und = sorted((min(a, b), max(a, b)) for a, b in pairs)
    und = sorted(set(und))
    return np.array([e for a, b in und for e in ((a, b), (b, a))], dtype=np.int64)


def peak_activation_count(cfg: ProcessorConfig, n_nodes: int, seed: int = 0, stored=False,
                          dtype=np.float64) -> ActivationTracker:
    """Run an instrumented backward on a random graph and return the tracker.

    ``tracker.peak`` is the maximum number of simultaneously retained
    activation matrices (group blocks, kernel caches, edge buffers).
    """
    rng = np.random.default_rng(seed)
    edges = random_graph(n_nodes, rng)
    ops = GraphOps(n_nodes, edges, dtype=dtype)
    proc = RevProcessor(cfg)
    params = {k: v.astype(dtype) for k, v in proc.init(rng).items()}
    V = rng.standard_normal((n_nodes, cfg.N)).astype(dtype)
    E_lat = rng.standard_normal((edges.shape[0], cfg.N)).astype(dtype)
    Eg = proc.project_edges(params, E_lat)
    tr = ActivationTracker()
    if stored:
        eng = StoredBackward(proc)
        out, tape = eng.forward(params, V, ops, Eg, tr)
        eng.backward(params, tape, np.ones_like(out), ops, Eg, tr)
    else:
        out = proc.forward(params, V, ops, Eg, tr)
        proc.backward(params, out, np.ones_like(out), ops, Eg, tr)
    return tr
