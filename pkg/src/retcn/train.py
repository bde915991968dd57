"""Desk-scale training: SGD with momentum, linear warmup then step decay,
cross-entropy loss, best-validation checkpointing."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .augment import augment_batch, preset
from .data import SkeletonDataset
from .errors import BadConfig, BadLabel, Divergence
from .model import Model, backward, fold_persons, forward_cached, forward_sequences, save_checkpoint
from .tensor import make_rng

log = logging.getLogger(__name__)

_SHUFFLE_STREAM = 0
_AUGMENT_STREAM = 1


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_factor: float = 0.1
    decay_epochs: Tuple[int, ...] = (30, 45)
    warmup_epochs: int = 5
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    augmentation: str = "none"

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)

    def validate(self):
        if not self.lr0 > 0:
            raise BadConfig(f"lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise BadConfig(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise BadConfig("batch_size must be >= 1")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise BadConfig("epochs and warmup_epochs must be >= 0")
        if self.weight_decay < 0:
            raise BadConfig("weight_decay must be >= 0")
        preset(self.augmentation)


def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """Linear ramp to ``lr0`` over the warmup epochs, then step decay."""
    if epoch < cfg.warmup_epochs:
        return cfg.lr0 * (epoch + 1) / cfg.warmup_epochs
    passed = sum(1 for e in cfg.decay_epochs if e <= epoch)
    return cfg.lr0 * cfg.decay_factor ** passed


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Accepts one logit vector with an int label, or (N, K) logits with N labels.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    z = np.atleast_2d(logits).astype(np.float64)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    k = z.shape[1]
    if y.shape != (z.shape[0],) or y.min() < 0 or y.max() >= k:
        raise BadLabel(f"labels must be {z.shape[0]} integers in [0, {k})")
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    log_p = z - lse[:, None]
    loss = float(-log_p[np.arange(len(y)), y].mean())
    d = np.exp(log_p)
    d[np.arange(len(y)), y] -= 1.0
    d /= len(y)
    d = d.astype(logits.dtype if logits.dtype.kind == "f" else np.float64)
    return loss, (d[0] if single else d)


def sgd_step(params: dict, grads: dict, velocity: dict, lr: float, momentum: float, weight_decay: float):
    """v <- momentum*v - lr*(g + weight_decay*w); w <- w + v (in place)."""
    for name, w in params.items():
        g = grads[name]
        if weight_decay:
            g = g + weight_decay * w
        v = velocity.get(name)
        v = -lr * g if v is None else momentum * v - lr * g
        velocity[name] = v.astype(w.dtype, copy=False)
        w += velocity[name]


@dataclass
class Metrics:
    loss: float
    accuracy: float
    per_class: List[Tuple[int, float, float]]
    confusion: np.ndarray

    def to_records(self):
        rows = [{"record": "metrics", "loss": self.loss, "accuracy": self.accuracy}]
        rows += [{"record": "class", "class": k, "precision": p, "recall": r} for k, p, r in self.per_class]
        return rows


def batch_logits(model: Model, ds: SkeletonDataset, batch_size: int = 64) -> np.ndarray:
    out = [forward_sequences(model, ds.data[i:i + batch_size]) for i in range(0, len(ds), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.config.num_classes))


def evaluate(model: Model, ds: SkeletonDataset, batch_size: int = 64) -> Metrics:
    logits = batch_logits(model, ds, batch_size)
    loss, _ = cross_entropy(logits, ds.labels)
    pred = np.argmax(logits, axis=1)
    k = model.config.num_classes
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (ds.labels, pred), 1)
    per_class = []
    for c in range(k):
        tp = conf[c, c]
        col, row = conf[:, c].sum(), conf[c].sum()
        per_class.append((c, float(tp / col) if col else 0.0, float(tp / row) if row else 0.0))
    return Metrics(loss, float((pred == ds.labels).mean()), per_class, conf)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_accuracy: float
    val_loss: float

    def to_record(self):
        return {"record": "epoch", **asdict(self)}


@dataclass
class TrainResult:
    best: Model
    best_epoch: int
    best_val_accuracy: float
    history: List[EpochRecord] = field(default_factory=list)

    @property
    def losses(self):
        return [h.train_loss for h in self.history]


def train_loop(model: Model, trainset: SkeletonDataset, valset: SkeletonDataset, cfg: TrainConfig,
               checkpoint_path: Optional[str] = None, on_epoch=None) -> TrainResult:
    """Train ``model`` in place; return the best-validation snapshot and history.

    Shuffling and augmentation draw from streams derived from ``cfg.seed``,
    the epoch and the sample index, so identical inputs give identical runs.
    """
    cfg.validate()
    if len(trainset) == 0 or len(valset) == 0:
        raise BadConfig("train and validation sets must be nonempty")
    aug = preset(cfg.augmentation)
    params = model.learnable()
    velocity: dict = {}
    dtype = model.classifier.weight.dtype
    best, best_epoch, best_acc = model.copy(), -1, -1.0
    history = []
    n = len(trainset)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(cfg, epoch)
        order = make_rng(cfg.seed, _SHUFFLE_STREAM, epoch).permutation(n)
        total, seen = 0.0, 0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            data = trainset.data[idx]
            labels = trainset.labels[idx]
            if aug:
                data = augment_batch(data, labels, aug, cfg.seed, (_AUGMENT_STREAM, epoch), idx)
            mm = data.shape[4]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked below
                logits, cache = forward_cached(model, fold_persons(data).astype(dtype, copy=False),
                                               training=True, update_stats=True)
                logits = logits.reshape(len(idx), mm, -1).mean(axis=1)
                loss, d_logits = cross_entropy(logits, labels)
            if not np.isfinite(loss):
                raise Divergence(epoch, step)
            d_folded = np.repeat(d_logits / mm, mm, axis=0).astype(dtype, copy=False)
            grads, _ = backward(model, cache, d_folded)
            sgd_step(params, grads, velocity, lr, cfg.momentum, cfg.weight_decay)
            total += loss * len(idx)
            seen += len(idx)
        with np.errstate(over="ignore", invalid="ignore"):
            metrics = evaluate(model, valset)
        rec = EpochRecord(epoch, lr, total / seen, metrics.accuracy, metrics.loss)
        history.append(rec)
        log.info("epoch %d lr=%.4g train_loss=%.5f val_acc=%.4f", epoch, lr, rec.train_loss, rec.val_accuracy)
        if metrics.accuracy > best_acc:
            best, best_epoch, best_acc = model.copy(), epoch, metrics.accuracy
            if checkpoint_path:
                save_checkpoint(checkpoint_path, best, epoch, best_acc)
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(best, best_epoch, best_acc, history)
