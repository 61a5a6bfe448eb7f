"""Batch-size-one training with per-epoch shuffling, decayed Adam and
best-validation model selection."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, GaleError, NumericError
from .graph import FlowGraph
from .model import FlowModel, ModelConfig, PreparedGraph, prepare
from .nn import AdamState, adam_step, load_blocks, lr_at, save_adam, save_blocks

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "epoch", "lr", "node_loss", "global_loss", "total")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lam: float = 1.0
    base_lr: float = 5e-4
    decay: float = 0.97
    seed: int = 0
    fp_iterations: int = 20
    batch_size: int = 1
    select_best_val: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.fp_iterations < 1:
            raise ConfigError("fp_iterations must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size != 1:
            raise ConfigError("only batch size 1 is supported")
        if not self.base_lr > 0 or not 0 < self.decay <= 1:
            raise ConfigError("learning rate must be positive and decay in (0, 1]")


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    adam: AdamState
    trace: list = field(default_factory=list)  # rows keyed by TRACE_COLUMNS
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1

    def epoch_losses(self) -> np.ndarray:
        """Mean total training loss per epoch."""
        epochs = np.array([r["epoch"] for r in self.trace])
        total = np.array([r["total"] for r in self.trace])
        return np.array([total[epochs == e].mean() for e in np.unique(epochs)])

    @property
    def selected(self) -> dict:
        return self.best_params


def _seeds(seed: int):
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(shuffle_ss)


def evaluate_loss(model: FlowModel, params, prepared, lam: float) -> float:
    return float(np.mean([model.loss(params, pg, lam)[0] for pg in prepared]))


def train(train_graphs, model_cfg: ModelConfig, cfg: TrainConfig, val_graphs=(),
          trace_path=None) -> TrainResult:
    """Train from scratch; deterministic given ``cfg.seed``."""
    graphs = list(train_graphs)
    if not graphs:
        raise DataError("training split is empty")
    if model_cfg.fp_iterations != cfg.fp_iterations:
        model_cfg = ModelConfig.from_dict({**model_cfg.to_dict(), "fp_iterations": cfg.fp_iterations})
    model = FlowModel(model_cfg)
    init_seed, shuffle_rng = _seeds(cfg.seed)
    params = model.init(init_seed)
    adam = AdamState.zeros_like(params, base_lr=cfg.base_lr, decay=cfg.decay)
    prepared = [_prepare(g, model_cfg) for g in graphs]
    val_prep = [_prepare(g, model_cfg) for g in val_graphs]

    result = TrainResult(params, {k: v.copy() for k, v in params.items()}, adam)
    best = np.inf
    writer = _TraceWriter(trace_path)
    step = 0
    try:
        for epoch in range(cfg.epochs):
            lr = lr_at(epoch, cfg.base_lr, cfg.decay)
            for i in shuffle_rng.permutation(len(prepared)):
                pg = prepared[i]
                (total, node, glob), grads = model.loss_and_grad(params, pg, cfg.lam)
                if not np.isfinite(total):
                    raise NumericError(f"non-finite loss on case {pg.graph.meta.case_id!r} "
                                       f"(epoch {epoch}, step {step})")
                try:
                    adam_step(adam, params, grads, lr)
                except NumericError as exc:
                    raise NumericError(f"{exc} on case {pg.graph.meta.case_id!r}") from None
                step += 1
                row = {"step": step, "epoch": epoch, "lr": lr, "node_loss": node,
                       "global_loss": glob, "total": total}
                result.trace.append(row)
                writer.write(row)
            if val_prep and cfg.select_best_val:
                vl = evaluate_loss(model, params, val_prep, cfg.lam)
                result.val_losses.append(vl)
                if vl < best:
                    best, result.best_epoch = vl, epoch
                    result.best_params = {k: v.copy() for k, v in params.items()}
            log.info("epoch %d lr %.3g train %.5g", epoch, lr, result.epoch_losses()[-1])
    finally:
        writer.close()
    if not (val_prep and cfg.select_best_val):
        result.best_params = {k: v.copy() for k, v in params.items()}
        result.best_epoch = cfg.epochs - 1
    result.params = params
    return result


def _prepare(g: FlowGraph, cfg: ModelConfig) -> PreparedGraph:
    try:
        return prepare(g, cfg)
    except GaleError as exc:
        raise type(exc)(f"case {g.meta.case_id!r}: {exc}") from None


class _TraceWriter:
    def __init__(self, path):
        self.fh = None
        if path is not None:
            self.fh = open(path, "w", newline="", encoding="utf-8")
            self.w = csv.DictWriter(self.fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
            self.w.writeheader()

    def write(self, row):
        if self.fh is not None:
            self.w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})

    def close(self):
        if self.fh is not None:
            self.fh.close()


# ---------------------------------------------------------------------------
# model files and run configuration


def save_model(path, params: dict, cfg: ModelConfig) -> Path:
    return save_blocks(path, params, {"model_config": cfg.to_dict()})


def load_model(path) -> tuple[dict, ModelConfig]:
    blocks, header = load_blocks(path)
    if "model_config" not in header:
        raise DataError(f"{path}: no model configuration in header")
    cfg = ModelConfig.from_dict(header["model_config"])
    expected = FlowModel(cfg).shapes()
    if set(expected) != set(blocks) or any(tuple(blocks[k].shape) != tuple(s) for k, s in expected.items()):
        raise DataError(f"{path}: parameter blocks do not match the stored configuration")
    return blocks, cfg


def save_run(out_dir, result: TrainResult, cfg: ModelConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "params.bin", result.best_params, cfg)
    save_model(out / "last.bin", result.params, cfg)
    save_adam(out / "adam.bin", result.adam)
    return out


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    dataset: str | None = None
    split: str = "train"

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        unknown = set(raw) - {"model", "train", "data"}
        if unknown:
            raise ConfigError(f"unknown run-config sections: {sorted(unknown)}")
        m = dict(raw.get("model", {}))
        t = dict(raw.get("train", {}))
        if "lambda" in t:
            t["lam"] = t.pop("lambda")
        if "lr" in t:
            t["base_lr"] = t.pop("lr")
        for name, d, typ in (("model", m, ModelConfig), ("train", t, TrainConfig)):
            bad = set(d) - set(typ.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown {name} keys: {sorted(bad)}")
        train_cfg = TrainConfig(**t)
        m.setdefault("fp_iterations", train_cfg.fp_iterations)
        data = raw.get("data", {})
        return cls(ModelConfig(**m), train_cfg, data.get("dataset"), data.get("split", "train"))

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": asdict(self.train),
                "data": {"dataset": self.dataset, "split": self.split}}
