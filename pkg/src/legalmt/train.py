"""Adam/AdamW, the two training presets, the epoch loop and checkpoint files."""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .corpus import ParallelCorpus, make_batches
from .model import ModelConfig, TransformerModel, is_decayed
from .tensor import CounterRNG, Tape, Tensor, backward

log = logging.getLogger(__name__)

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8
MAGIC = b"MTFG"
FORMAT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name, detail=""):
        super().__init__(f"non-finite gradient in parameter {name!r}{detail}")
        self.parameter = name


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# ------------------------------------------------------------------ config

PRESETS = {
    # compact model trained from scratch
    "scratch": dict(learning_rate=5e-4, weight_decay=0.0, batch_size=32, max_len=256,
                    optimizer="adam", schedule="inverse_sqrt", warmup_steps=4000),
    # continued training of an existing checkpoint
    "continued": dict(learning_rate=2e-5, weight_decay=0.01, batch_size=32, max_len=128,
                      optimizer="adamw", schedule="constant", warmup_steps=0),
}


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "scratch"
    learning_rate: float = 5e-4
    weight_decay: float = 0.0
    batch_size: int = 32
    max_len: int = 256
    max_epochs: int = 10
    warmup_steps: int = 4000
    grad_clip_norm: float = 1.0
    seed: int = 0
    optimizer: str = "adam"
    schedule: str = "inverse_sqrt"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.optimizer not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("inverse_sqrt", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.batch_size < 1 or self.max_len < 2 or self.max_epochs < 0:
            raise ValueError("batch_size >= 1, max_len >= 2 and max_epochs >= 0 required")

    @classmethod
    def from_preset(cls, preset: str, **overrides) -> "TrainConfig":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}")
        return cls(preset=preset, **{**PRESETS[preset], **overrides})

    def to_dict(self):
        return asdict(self)

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based optimizer ``step``."""
        if self.schedule == "constant" or self.warmup_steps <= 0:
            return self.learning_rate
        w = self.warmup_steps
        return self.learning_rate * min(step / w, math.sqrt(w / step))


# --------------------------------------------------------------- optimizer


@dataclass
class OptimState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params):
        return cls(0, {k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def _check_finite(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NonFiniteGradientError(name, f" ({bad} of {np.size(g)} entries)")


def adam_step(params, grads, state: OptimState, lr: float):
    """One bias-corrected Adam update, in place.  Returns ``(params, state)``.

    ``params`` maps names to tensors (or arrays); ``grads`` maps the same
    names to gradient arrays.
    """
    return adamw_step(params, grads, state, lr, 0.0)


def adamw_step(params, grads, state: OptimState, lr: float, weight_decay: float, decay=is_decayed):
    _check_finite(grads)
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for name, p in params.items():
        theta = p.data if isinstance(p, Tensor) else p
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + EPS)
        if weight_decay and decay(name):
            theta -= (lr * weight_decay) * theta
        theta -= lr * update
    return params, state


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if max_norm and total > max_norm:
        f = max_norm / (total + 1e-6)
        for k in grads:
            grads[k] = grads[k] * grads[k].dtype.type(f)
    return total


# -------------------------------------------------------------- checkpoint


def _atomic_write(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_TAGS = {np.dtype("float32"): "f32", np.dtype("float64"): "f64"}


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict
    optim: OptimState | None
    step: int = 0
    epoch: int = 0
    subword_hash: str = ""
    train_config: dict | None = None
    rng_state: dict | None = None

    def to_bytes(self) -> bytes:
        tensors = [(f"param/{k}", v) for k, v in self.params.items()]
        if self.optim is not None:
            tensors += [(f"adam_m/{k}", v) for k, v in self.optim.m.items()]
            tensors += [(f"adam_v/{k}", v) for k, v in self.optim.v.items()]
        manifest, payload, offset = [], [], 0
        for name, arr in tensors:
            arr = np.ascontiguousarray(arr)
            tag = _TAGS[arr.dtype]
            raw = arr.astype(_DTYPES[tag], copy=False).tobytes()
            manifest.append({"name": name, "dtype": tag, "shape": list(arr.shape),
                             "offset": offset, "nbytes": len(raw)})
            payload.append(raw)
            offset += len(raw)
        header = {
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config,
            "subword_hash": self.subword_hash,
            "step": self.step,
            "epoch": self.epoch,
            "optim_step": None if self.optim is None else self.optim.step,
            "rng_state": self.rng_state,
            "tensors": manifest,
        }
        hdr = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hdr)) + hdr + b"".join(payload)

    def save(self, path):
        _atomic_write(path, self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:4] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        version, hlen = struct.unpack_from("<IQ", data, 4)
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        start = 4 + struct.calcsize("<IQ")
        header = json.loads(data[start:start + hlen].decode("utf-8"))
        base = start + hlen
        params, m, v = {}, {}, {}
        for t in header["tensors"]:
            lo = base + t["offset"]
            arr = np.frombuffer(data[lo:lo + t["nbytes"]], dtype=_DTYPES[t["dtype"]]).reshape(t["shape"])
            kind, name = t["name"].split("/", 1)
            {"param": params, "adam_m": m, "adam_v": v}[kind][name] = arr.astype(arr.dtype.newbyteorder("="))
        optim = None if header["optim_step"] is None else OptimState(header["optim_step"], m, v)
        return cls(ModelConfig(**header["model_config"]), params, optim, header["step"], header["epoch"],
                   header["subword_hash"], header["train_config"], header["rng_state"])

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def build_model(self, dtype=None) -> TransformerModel:
        dtype = dtype or next(iter(self.params.values())).dtype
        model = TransformerModel(self.model_config, dtype=dtype, params=self.params)
        if self.rng_state:
            model.rng = CounterRNG.from_state(self.rng_state)
        return model


# -------------------------------------------------------------------- loop


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_loss: float | None
    lr: float
    step: int

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    model: TransformerModel
    history: list
    optim: OptimState
    checkpoint_path: Path | None = None


def evaluate_loss(model, batches, label_smoothing=None) -> float:
    """Mean teacher-forced loss over ``batches`` in inference mode."""
    was = model.training
    model.eval()
    try:
        losses = [float(model.loss(b, label_smoothing=label_smoothing).data) for b in batches]
    finally:
        model.train(was)
    return float(np.mean(losses))


def train_step(model, batch, optim: OptimState, cfg: TrainConfig) -> float:
    model.train()
    model.zero_grad()
    with Tape() as tape:
        loss = model.loss(batch)
    value = float(loss.data)
    if not math.isfinite(value):
        raise TrainingDiverged(f"loss became {value} at step {optim.step + 1}")
    backward(loss, tape)
    grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data) for k, p in model.params.items()}
    _check_finite(grads)
    clip_grad_norm(grads, cfg.grad_clip_norm)
    lr = cfg.lr_at(optim.step + 1)
    if cfg.optimizer == "adamw":
        adamw_step(model.params, grads, optim, lr, cfg.weight_decay)
    else:
        adam_step(model.params, grads, optim, lr)
    return value


def train(model: TransformerModel, corpus: ParallelCorpus, subword, cfg: TrainConfig,
          valid: ParallelCorpus | None = None, checkpoint_dir=None, log_path=None,
          resume: Checkpoint | None = None, optim: OptimState | None = None,
          epoch_callback=None) -> TrainResult:
    """Teacher-forced training for ``cfg.max_epochs`` epochs (total, counting resumed ones).

    Each epoch reshuffles with seed ``cfg.seed + epoch``.  With
    ``checkpoint_dir`` a checkpoint is written atomically after every epoch;
    with ``log_path`` one JSON line per epoch is appended.
    """
    if subword.vocab_size != model.config.vocab_size:
        raise ValueError(f"subword vocabulary {subword.vocab_size} != model vocabulary {model.config.vocab_size}")
    start_epoch = 0
    if resume is not None:
        if resume.subword_hash and resume.subword_hash != subword.content_hash:
            raise CheckpointError("checkpoint was trained with a different subword model")
        model.load_state_dict(resume.params)
        if resume.rng_state:
            model.rng = CounterRNG.from_state(resume.rng_state)
        optim = resume.optim
        start_epoch = resume.epoch
    if optim is None:
        optim = OptimState.for_params(model.params)

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    valid_batches = (make_batches(valid, subword, cfg.batch_size, cfg.max_len)
                     if valid is not None and len(valid) else None)
    max_len = min(cfg.max_len, model.config.max_len)
    history, last_ckpt = [], None

    for epoch in range(start_epoch, cfg.max_epochs):
        batches = make_batches(corpus, subword, cfg.batch_size, max_len, shuffle_seed=cfg.seed + epoch)
        losses = [train_step(model, b, optim, cfg) for b in batches]
        rec = EpochRecord(epoch + 1, float(np.mean(losses)),
                          evaluate_loss(model, valid_batches) if valid_batches else None,
                          cfg.lr_at(max(optim.step, 1)), optim.step)
        history.append(rec)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")
        if ckpt_dir is not None:
            ck = Checkpoint(model.config, model.state_dict(), optim, optim.step, epoch + 1,
                            subword.content_hash, cfg.to_dict(), model.rng.state())
            last_ckpt = ckpt_dir / f"epoch{epoch + 1:04d}.mtfg"
            ck.save(last_ckpt)
            ck.save(ckpt_dir / "last.mtfg")
        log.info("epoch %d train_loss %.4f step %d", rec.epoch, rec.train_loss, rec.step)
        if epoch_callback is not None:
            epoch_callback(rec)
    return TrainResult(model, history, optim, last_ckpt)


def continue_training(checkpoint: Checkpoint, corpus: ParallelCorpus, subword, cfg: TrainConfig | None = None,
                      **kw) -> TrainResult:
    """Resume from trained weights with a fresh AdamW state (the ``continued`` recipe)."""
    if cfg is None:
        cfg = TrainConfig.from_preset("continued")
    if cfg.preset != "continued":
        raise ValueError("continue_training expects the 'continued' preset")
    if checkpoint.subword_hash != subword.content_hash:
        raise CheckpointError(
            f"subword hash mismatch: checkpoint {checkpoint.subword_hash[:12]} vs model {subword.content_hash[:12]}")
    model = checkpoint.build_model()
    return train(model, corpus, subword, cfg, **kw)
