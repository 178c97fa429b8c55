"""Optimization and evaluation: AdamW, mixup, spectrogram masking, the
epoch loop, and checkpoint-series output.

Reproducibility contract: all randomness in one epoch comes from
`default_rng([seed, epoch])`, so a rerun with the same seed and config
produces bit-identical parameters and metric logs.  Wall-clock entries
come from an injectable `clock` callable; substituting a fixed clock
makes even the log bytes reproducible.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .errors import ConfigError, DimensionError, NumericsError, ParameterError
from .metrics import accuracy, mean_average_precision
from .model import ModelConfig, forward, init_params

TASKS = ("multilabel", "multiclass")


def _from_dict(cls, raw: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**raw)


@dataclass
class AugmentConfig:
    """Mixup and masking settings; widths must fit the input extents."""

    mixup_alpha: float = 0.5
    time_mask: int = 192
    freq_mask: int = 48
    enabled: bool = True

    def validate(self, n_frames: int, n_mels: int) -> "AugmentConfig":
        if self.mixup_alpha <= 0:
            raise ConfigError(f"mixup_alpha must be > 0, got {self.mixup_alpha}")
        if not 0 <= self.time_mask <= n_frames:
            raise ConfigError(f"time_mask {self.time_mask} does not fit {n_frames} frames")
        if not 0 <= self.freq_mask <= n_mels:
            raise ConfigError(f"freq_mask {self.freq_mask} does not fit {n_mels} bins")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "AugmentConfig":
        return _from_dict(cls, raw)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    cosine: bool = False

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "OptimConfig":
        return _from_dict(cls, raw)


@dataclass
class TrainConfig:
    model: ModelConfig
    augment: AugmentConfig
    optimizer: OptimConfig
    task: str = "multilabel"
    batch_size: int = 16
    epochs: int = 10
    manifest: str | None = None
    features_dir: str | None = None
    out_dir: str | None = None

    def validate(self) -> "TrainConfig":
        self.model.validate()
        self.augment.validate(self.model.in_frames, self.model.in_mels)
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        return self

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "augment": self.augment.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "task": self.task,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "manifest": self.manifest,
            "features_dir": self.features_dir,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(
            model=ModelConfig.from_dict(raw.get("model", {})),
            augment=AugmentConfig.from_dict(raw.get("augment", {})),
            optimizer=OptimConfig.from_dict(raw.get("optimizer", {})),
            **{k: v for k, v in raw.items() if k not in ("model", "augment", "optimizer")},
        )
        return cfg.validate()

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config root must be a JSON object")
        return cls.from_dict(raw)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay.

    Update: theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
    A non-finite gradient anywhere aborts the whole step before any
    parameter is touched.
    """

    def __init__(self, params: T.ParamStore, config: OptimConfig | None = None):
        self.params = params
        self.config = config or OptimConfig()
        self.step_count = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.trainable()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.trainable()}

    def step(self, grads: dict, lr: float | None = None) -> None:
        cfg = self.config
        lr = cfg.lr if lr is None else lr
        for name in self._m:
            if name not in grads:
                raise ParameterError(f"missing gradient for {name!r}")
            if not np.isfinite(grads[name]).all():
                raise NumericsError(f"non-finite gradient for {name!r}; step aborted")
        self.step_count += 1
        t = self.step_count
        for name, tensor in self.params.trainable():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1**t)
            v_hat = v / (1.0 - cfg.beta2**t)
            update = m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * tensor.data
            tensor.data -= (lr * update).astype(tensor.data.dtype, copy=False)


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine decay from base_lr to 0 across the run."""
    if total_epochs <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * epoch / (total_epochs - 1)))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def mixup(x_a, y_a, x_b, y_b, lam: float):
    """Convex combination of two samples and their label vectors."""
    x_a = np.asarray(x_a)
    x_b = np.asarray(x_b)
    if x_a.shape != x_b.shape:
        raise DimensionError(f"mixup inputs differ: {x_a.shape} vs {x_b.shape}")
    y_a = np.asarray(y_a)
    y_b = np.asarray(y_b)
    if y_a.shape != y_b.shape:
        raise DimensionError(f"mixup labels differ: {y_a.shape} vs {y_b.shape}")
    lam = float(lam)
    return lam * x_a + (1.0 - lam) * x_b, lam * y_a + (1.0 - lam) * y_b


def spec_augment(x: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One time mask and one frequency mask, widths uniform on [0, max],
    uniformly placed, filled with 0.  Returns a new array."""
    x = np.array(x, copy=True)
    if x.ndim != 2:
        raise DimensionError(f"expected (frames, mels), got {x.shape}")
    t, f = x.shape
    if config.time_mask > t or config.freq_mask > f:
        raise ParameterError("mask widths exceed input extents")
    wt = int(rng.integers(0, config.time_mask + 1))
    t0 = int(rng.integers(0, t - wt + 1))
    x[t0 : t0 + wt, :] = 0.0
    wf = int(rng.integers(0, config.freq_mask + 1))
    f0 = int(rng.integers(0, f - wf + 1))
    x[:, f0 : f0 + wf] = 0.0
    return x


def compute_loss(logits, targets, task: str) -> T.Tensor:
    """BCE-with-logits for multilabel targets, softmax CE for class labels."""
    if task == "multilabel":
        targets = np.asarray(targets)
        if targets.shape != logits.shape:
            raise DimensionError(f"targets {targets.shape} vs logits {logits.shape}")
        return T.bce_with_logits(logits, targets)
    if task == "multiclass":
        labels = np.asarray(targets)
        if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
            raise DimensionError(f"labels {labels.shape} vs logits {logits.shape}")
        if labels.min() < 0 or labels.max() >= logits.shape[1]:
            raise DimensionError("label id outside logit width")
        return T.softmax_cross_entropy(logits, labels)
    raise ParameterError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# evaluation and the epoch loop
# ---------------------------------------------------------------------------


def _batches(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield np.arange(start, min(start + batch_size, n))


def evaluate_arrays(features, targets, params, config: ModelConfig, task: str, batch_size: int = 16):
    """Loss plus mAP (multilabel) or accuracy (multiclass) in eval mode."""
    n = len(features)
    if n == 0:
        raise ConfigError("cannot evaluate an empty split")
    scores = np.empty((n, config.num_classes), dtype=np.float64)
    total_loss = 0.0
    with T.no_grad():
        for idx in _batches(n, batch_size):
            logits = forward(features[idx], params, config, training=False)
            loss = compute_loss(logits, np.asarray(targets)[idx], task)
            total_loss += loss.item() * len(idx)
            scores[idx] = logits.data
    mean_loss = total_loss / n
    if task == "multilabel":
        return mean_loss, mean_average_precision(scores, targets)
    return mean_loss, accuracy(scores, targets)


def _metric_line(epoch, split, loss, metric_name, metric, wall_time_s) -> str:
    return json.dumps(
        {
            "epoch": epoch,
            "split": split,
            "loss": round(float(loss), 8),
            metric_name: round(float(metric), 8),
            "wall_time_s": round(float(wall_time_s), 6),
        },
        separators=(", ", ": "),
    )


def train_arrays(
    train_x,
    train_y,
    config: TrainConfig,
    seed: int = 0,
    val_x=None,
    val_y=None,
    clock=None,
    on_epoch=None,
):
    """Train on in-memory arrays; returns (params, metric-log lines).

    When `config.out_dir` is set, each epoch writes a checkpoint
    (`epoch_NNN.ckpt`) and the metric log (`metrics.jsonl`).
    """
    config.validate()
    if len(train_x) == 0:
        raise ConfigError("training split is empty")
    clock = clock or time.monotonic
    model_cfg = config.model
    metric_name = "mAP" if config.task == "multilabel" else "accuracy"
    params = init_params(model_cfg, seed=seed)
    optimizer = AdamW(params, config.optimizer)
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    train_y = np.asarray(train_y)
    lines = []
    start = clock()
    for epoch in range(config.epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(train_x))
        lr = cosine_lr(config.optimizer.lr, epoch, config.epochs) if config.optimizer.cosine else None
        for idx in _batches(len(order), config.batch_size):
            batch = order[idx]
            xb = np.array(train_x[batch], dtype=np.float32)
            yb = train_y[batch]
            if config.augment.enabled and config.task == "multilabel":
                pair = rng.permutation(len(batch))
                lam = rng.beta(config.augment.mixup_alpha, config.augment.mixup_alpha, size=len(batch))
                xb = lam[:, None, None] * xb + (1.0 - lam[:, None, None]) * xb[pair]
                yb = lam[:, None] * yb + (1.0 - lam[:, None]) * yb[pair]
                xb = xb.astype(np.float32)
            if config.augment.enabled:
                for i in range(len(xb)):
                    xb[i] = spec_augment(xb[i], config.augment, rng)
            logits = forward(xb, params, model_cfg, training=True)
            loss = compute_loss(logits, yb, config.task)
            grads = T.backward(loss, params)
            optimizer.step(grads, lr)

        splits = [("train", train_x, train_y)]
        if val_x is not None:
            splits.append(("val", val_x, val_y))
        for split, sx, sy in splits:
            loss_value, metric = evaluate_arrays(
                sx, sy, params, model_cfg, config.task, config.batch_size
            )
            lines.append(_metric_line(epoch, split, loss_value, metric_name, metric, clock() - start))
        if out_dir is not None:
            save_checkpoint(out_dir / f"epoch_{epoch:03d}.ckpt", params, model_cfg)
            (out_dir / "metrics.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
        if on_epoch is not None and on_epoch(epoch, lines) is False:
            break
    return params, lines


def train_from_manifest(config: TrainConfig, seed: int = 0, clock=None):
    """Resolve the manifest into arrays and run `train_arrays`."""
    from .data import load_split_arrays, read_manifest

    if not config.manifest:
        raise ConfigError("config has no manifest path")
    entries = read_manifest(config.manifest)
    train_x, train_hot = load_split_arrays(
        entries, "train", config.model.num_classes,
        config.model.in_frames, config.model.in_mels, config.features_dir,
    )
    has_val = any(e.split == "val" for e in entries)
    val_x = val_y = None
    if has_val:
        val_x, val_hot = load_split_arrays(
            entries, "val", config.model.num_classes,
            config.model.in_frames, config.model.in_mels, config.features_dir,
        )
        val_y = val_hot if config.task == "multilabel" else val_hot.argmax(axis=1)
    train_y = train_hot if config.task == "multilabel" else train_hot.argmax(axis=1)
    return train_arrays(train_x, train_y, config, seed=seed, val_x=val_x, val_y=val_y, clock=clock)
