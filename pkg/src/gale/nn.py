"""Dense building blocks with hand-written backward rules, plus Adam.

Parameters live in a flat ``dict[str, ndarray]`` keyed by dotted block
names; every module only knows the prefix it owns.  Forward functions
return ``(output, cache)`` and backward functions consume that cache.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericError, ShapeError

LN_EPS = 1e-5


def he_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def relu(x):
    return np.maximum(x, 0.0)


def layer_norm(X, gamma, beta, eps=LN_EPS):
    """Row-wise standardisation followed by a learned scale and shift."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] == 0:
        raise ShapeError("layer_norm needs a matrix with at least one column")
    if np.shape(gamma) != (X.shape[1],) or np.shape(beta) != (X.shape[1],):
        raise ShapeError("gamma/beta length must equal the column count")
    mu = X.mean(axis=1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd)


def layer_norm_backward(cache, gamma, dY):
    xhat, rstd = cache
    dgamma = (dY * xhat).sum(axis=0)
    dbeta = dY.sum(axis=0)
    dxhat = dY * gamma
    dX = rstd * (dxhat - dxhat.mean(axis=1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
    return dX, dgamma, dbeta


@dataclass(frozen=True)
class MlpSpec:
    """affine -> ReLU -> affine -> ReLU -> affine [-> LayerNorm]."""

    in_dim: int
    hidden_dim: int
    out_dim: int
    final_norm: bool = True
    hidden_layers: int = 2

    def __post_init__(self):
        if self.hidden_layers != 2:
            raise ShapeError("only two-hidden-layer MLPs are supported")
        if min(self.in_dim, self.hidden_dim, self.out_dim) < 1:
            raise ShapeError("MLP dimensions must be positive")

    def shapes(self) -> dict:
        dims = [self.in_dim, self.hidden_dim, self.hidden_dim, self.out_dim]
        out = {}
        for k in range(3):
            out[f"w{k}"] = (dims[k], dims[k + 1])
            out[f"b{k}"] = (dims[k + 1],)
        if self.final_norm:
            out["ln.gamma"] = (self.out_dim,)
            out["ln.beta"] = (self.out_dim,)
        return out


def count_params(spec: MlpSpec) -> int:
    h = spec.hidden_dim
    n = spec.in_dim * h + h + h * h + h + h * spec.out_dim + spec.out_dim
    return n + (2 * spec.out_dim if spec.final_norm else 0)


def init_block(name: str, shape, rng: np.random.Generator) -> np.ndarray:
    """He-uniform weights (fan-in = first dim), zero biases, unit gamma, zero beta."""
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gamma":
        return np.ones(shape)
    if leaf == "beta" or leaf.startswith("b"):
        return np.zeros(shape)
    if leaf.startswith("w") or leaf.startswith("W"):
        return he_uniform(rng, shape[0], shape)
    raise KeyError(f"no initialiser rule for block {name!r}")


def seeded_init(spec: MlpSpec, seed: int, prefix: str = "") -> dict:
    rng = np.random.default_rng(seed)
    return {prefix + k: init_block(k, s, rng) for k, s in spec.shapes().items()}


class Mlp:
    def __init__(self, spec: MlpSpec, prefix: str):
        self.spec = spec
        self.prefix = prefix

    def shapes(self) -> dict:
        return {self.prefix + k: s for k, s in self.spec.shapes().items()}

    def forward(self, params, X):
        if X.ndim != 2 or X.shape[1] != self.spec.in_dim:
            raise ShapeError(f"{self.prefix}: input has shape {X.shape}, expected (*, {self.spec.in_dim})")
        p = self.prefix
        h0 = X @ params[p + "w0"] + params[p + "b0"]
        a0 = relu(h0)
        h1 = a0 @ params[p + "w1"] + params[p + "b1"]
        a1 = relu(h1)
        y = a1 @ params[p + "w2"] + params[p + "b2"]
        ln = None
        if self.spec.final_norm:
            y, ln = layer_norm(y, params[p + "ln.gamma"], params[p + "ln.beta"])
        return y, (X, h0, a0, h1, a1, ln)

    def backward(self, params, cache, dY):
        X, h0, a0, h1, a1, ln = cache
        p = self.prefix
        g = {}
        if self.spec.final_norm:
            dY, g[p + "ln.gamma"], g[p + "ln.beta"] = layer_norm_backward(ln, params[p + "ln.gamma"], dY)
        g[p + "w2"] = a1.T @ dY
        g[p + "b2"] = dY.sum(axis=0)
        dh1 = (dY @ params[p + "w2"].T) * (h1 > 0)
        g[p + "w1"] = a0.T @ dh1
        g[p + "b1"] = dh1.sum(axis=0)
        dh0 = (dh1 @ params[p + "w1"].T) * (h0 > 0)
        g[p + "w0"] = X.T @ dh0
        g[p + "b0"] = dh0.sum(axis=0)
        return dh0 @ params[p + "w0"].T, g


def mlp_forward(spec: MlpSpec, params: dict, X, prefix: str = ""):
    return Mlp(spec, prefix).forward(params, X)


def mlp_backward(spec: MlpSpec, params: dict, cache, dY, prefix: str = ""):
    return Mlp(spec, prefix).backward(params, cache, dY)


def add_grads(total: dict, part: dict) -> dict:
    for k, v in part.items():
        if k in total:
            total[k] = total[k] + v
        else:
            total[k] = v
    return total


# ---------------------------------------------------------------------------
# optimiser


def lr_at(epoch: int, base_lr: float = 5e-4, decay: float = 0.97) -> float:
    return base_lr * decay ** epoch


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_lr: float = 5e-4
    decay: float = 0.97

    @classmethod
    def zeros_like(cls, params: dict, **kw) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()}, **kw)


def adam_step(state: AdamState, params: dict, grads: dict, lr_now: float):
    """One bias-corrected Adam update, applied in place; returns (params, state)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter block {name!r}")
        if np.shape(g) != np.shape(params[name]):
            raise ShapeError(f"gradient for {name!r} has shape {np.shape(g)}, "
                             f"parameter has {np.shape(params[name])}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        params[name] = params[name] - lr_now * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint files: <u64 header length><JSON header><little-endian float64 blocks>


def save_blocks(path, blocks: dict, extra: dict | None = None) -> Path:
    path = Path(path)
    entries, offset = [], 0
    for name, arr in blocks.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = json.dumps({"blocks": entries, **(extra or {})}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for arr in blocks.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_blocks(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DataError(f"{path} is not a parameter file")
    (hlen,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header") from exc
    base = 8 + hlen
    blocks = {}
    for e in header["blocks"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        blocks[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=start) \
            .reshape(e["shape"]).astype(np.float64)
    return blocks, header


def save_adam(path, state: AdamState) -> Path:
    blocks = {}
    for k in state.m:
        blocks[f"m.{k}"] = state.m[k]
        blocks[f"v.{k}"] = state.v[k]
    extra = {"step": state.step, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
             "base_lr": state.base_lr, "decay": state.decay}
    return save_blocks(path, blocks, extra)


def load_adam(path) -> AdamState:
    blocks, h = load_blocks(path)
    st = AdamState(step=h["step"], beta1=h["beta1"], beta2=h["beta2"], eps=h["eps"],
                   base_lr=h["base_lr"], decay=h["decay"])
    for k, v in blocks.items():
        kind, name = k.split(".", 1)
        (st.m if kind == "m" else st.v)[name] = v
    return st
