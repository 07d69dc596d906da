"""Adam + Noam training loop with binary checkpoints."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import Sample, make_batches
from .metrics import EvalReport, evaluate
from .model import UniPunc
from .tensor import Tensor

log = logging.getLogger(__name__)

CKPT_MAGIC = b"UPCK"
CKPT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 1e-5
    warmup_steps: int = 8000
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    max_steps: int = 1000
    seed: int = 0
    clip_norm: float | None = 1.0
    eval_interval: int = 100

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.warmup_steps < 1:
            raise ValueError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        if self.batch_size < 1 or self.max_steps < 0 or self.eval_interval < 1:
            raise ValueError("batch_size and eval_interval must be >= 1, max_steps >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown training config keys {sorted(unknown)}")
        return cls(**raw)


def noam_lr(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    if step < 1:
        raise ValueError(f"noam_lr: step must be >= 1, got {step}")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def noam_scale_for_peak(peak_lr: float, d_model: int, warmup: int) -> float:
    """Scale making ``noam_lr`` reach ``peak_lr`` at ``step == warmup``."""
    return peak_lr * math.sqrt(d_model) * math.sqrt(warmup)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, Tensor]) -> "OptimizerState":
        return cls({k: np.zeros(p.shape) for k, p in params.items()},
                   {k: np.zeros(p.shape) for k, p in params.items()})


def grads_of(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Parameter gradients, with zeros for parameters the last graph never touched."""
    return {k: (p.grad if p.grad is not None else np.zeros(p.shape)) for k, p in params.items()}


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState,
              lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: dict[str, Tensor], state: OptimizerState, meta: dict) -> None:
    """Write atomically: a crash mid-write never leaves a partial file at ``path``."""
    meta = dict(meta, step=state.t)
    records = [(f"param:{k}", p.data) for k, p in params.items()]
    records += [(f"adam.m:{k}", a) for k, a in state.m.items()]
    records += [(f"adam.v:{k}", a) for k, a in state.v.items()]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(blob)) + blob)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    meta: dict
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @property
    def step(self) -> int:
        return int(self.meta["step"])

    def restore(self, params: dict[str, Tensor], state: OptimizerState | None = None) -> None:
        missing = set(params) - set(self.params)
        extra = set(self.params) - set(params)
        if missing or extra:
            raise CheckpointError(f"parameter sets differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            if p.shape != self.params[name].shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {self.params[name].shape}, model {p.shape}")
        for name, p in params.items():
            p.data = self.params[name].copy()
            p.grad = None
        if state is not None:
            state.m = {k: a.copy() for k, a in self.m.items()}
            state.v = {k: a.copy() for k, a in self.v.items()}
            state.t = self.step


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos} (needed {n} more)")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam.m": {}, "adam.v": {}}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        kind, _, name = take(name_len).decode("utf-8").partition(":")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        if kind not in groups:
            raise CheckpointError(f"{path}: unknown record kind {kind!r}")
        groups[kind][name] = arr
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return Checkpoint(meta, groups["param"], groups["adam.m"], groups["adam.v"])


# ------------------------------------------------------------------- training

@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    best_f1: float = -1.0


class Trainer:
    """Owns the model, optimizer state and dropout rng so runs can be resumed bitwise."""

    def __init__(self, model: UniPunc, cfg: TrainConfig, train_samples: Sequence[Sample],
                 eval_samples: Sequence[Sample] | None = None, out_dir=None):
        if not train_samples:
            raise ValueError("training corpus is empty")
        self.model = model
        self.cfg = cfg
        self.train_samples = list(train_samples)
        self.eval_samples = list(eval_samples) if eval_samples else []
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.state = OptimizerState.zeros_like(model.params)
        self.rng = np.random.default_rng(cfg.seed)
        self.scale = noam_scale_for_peak(cfg.base_lr, model.cfg.d_model, cfg.warmup_steps)
        self.best_f1 = -1.0
        self._epoch_cache: tuple[int, list] | None = None
        self.n_batches = math.ceil(len(self.train_samples) / cfg.batch_size)

    @property
    def step(self) -> int:
        return self.state.t

    def lr(self, step: int) -> float:
        return noam_lr(step, self.model.cfg.d_model, self.cfg.warmup_steps, self.scale)

    def batch_for(self, step: int):
        epoch, idx = divmod(step, self.n_batches)
        if self._epoch_cache is None or self._epoch_cache[0] != epoch:
            seed = self.cfg.seed * 1_000_003 + epoch
            self._epoch_cache = (epoch, make_batches(self.train_samples, self.cfg.batch_size, seed))
        return self._epoch_cache[1][idx]

    def train_step(self) -> float:
        """One optimizer update; returns the batch loss before the update."""
        params = self.model.params
        batch = self.batch_for(self.step)
        lr = self.lr(self.step + 1)
        try:
            loss = self.model.loss(batch, training=True, rng=self.rng)
        except T.NonFiniteError as exc:
            raise TrainingError(f"non-finite value at step {self.step + 1} (lr {lr:.3e}): {exc}") from exc
        T.backward(loss)
        grads = grads_of(params)
        if self.cfg.clip_norm is not None:
            clip_global_norm(grads, self.cfg.clip_norm)
        adam_step(params, grads, self.state, lr, self.cfg.betas, self.cfg.eps)
        T.zero_grads(params.values())
        return float(loss.data)

    def evaluate(self, samples: Sequence[Sample] | None = None) -> EvalReport:
        samples = self.eval_samples if samples is None else samples
        return evaluate(self.model, make_batches(samples, self.cfg.batch_size))

    def meta(self) -> dict:
        return {
            "model": self.model.cfg.to_dict(),
            "train": asdict(self.cfg),
            "rng": self.rng.bit_generator.state,
            "best_f1": self.best_f1,
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.model.params, self.state, self.meta())

    def resume(self, path) -> None:
        ckpt = load_checkpoint(path)
        if ckpt.meta.get("model") != self.model.cfg.to_dict():
            raise CheckpointError(f"{path}: model configuration differs from the checkpoint")
        ckpt.restore(self.model.params, self.state)
        self.rng.bit_generator.state = ckpt.meta["rng"]
        self.best_f1 = ckpt.meta.get("best_f1", -1.0)

    def run(self, on_log: Callable[[dict], None] | None = None) -> TrainResult:
        result = TrainResult()
        window: list[float] = []
        while self.step < self.cfg.max_steps:
            loss = self.train_step()
            result.losses.append(loss)
            window.append(loss)
            if self.step % self.cfg.eval_interval == 0 or self.step == self.cfg.max_steps:
                record = self._log_record(window)
                window = []
                result.metrics.append(record)
                if on_log is not None:
                    on_log(record)
        if self.out_dir is not None:
            self.save(self.out_dir / "last.upck")
        result.best_f1 = self.best_f1
        return result

    def _log_record(self, window: list[float]) -> dict:
        record = {"step": self.step, "loss": float(np.mean(window)), "lr": self.lr(self.step)}
        if self.eval_samples:
            rep = self.evaluate()
            record["per_class"] = {k: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
                                   for k, s in rep.per_class.items()}
            record["overall_f1"] = rep.overall.f1
            if rep.overall.f1 > self.best_f1:
                self.best_f1 = rep.overall.f1
                if self.out_dir is not None:
                    self.save(self.out_dir / "best.upck")
        log.info("step %d loss %.4f lr %.3e f1 %s", record["step"], record["loss"], record["lr"],
                 record.get("overall_f1"))
        return record


def train(model: UniPunc, cfg: TrainConfig, corpus: Sequence[Sample],
          eval_corpus: Sequence[Sample] | None = None, out_dir=None,
          on_log: Callable[[dict], None] | None = None) -> TrainResult:
    return Trainer(model, cfg, corpus, eval_corpus, out_dir).run(on_log)
