"""Mini-batch training with Adam, staircase exponential decay and early stopping."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .. import dsp
from ..signals import DatasetSplit, TimeSeriesSample, split_indices
from .layers import cross_entropy
from .model import (
    PARAM_BUDGET_BYTES,
    ModelArtifact,
    backward_layers,
    describe,
    forward_layers,
    init_params,
    logits_end,
    param_budget,
    activation_bytes,
    predict_f32,
)

log = logging.getLogger(__name__)


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 5
    lr0: float = 5e-4
    decay_rate: float = 0.95
    decay_steps: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0
    val_fraction: float = 0.15

    def validate(self) -> list[str]:
        errors = []
        for name in ("batch_size", "max_epochs", "patience", "decay_steps"):
            if getattr(self, name) < 1:
                errors.append(f"{name}: must be >= 1")
        if self.patience >= self.max_epochs:
            errors.append("patience: must be smaller than max_epochs")
        for name in ("lr0", "epsilon"):
            if not getattr(self, name) > 0:
                errors.append(f"{name}: must be > 0")
        if not 0 < self.decay_rate <= 1:
            errors.append("decay_rate: must lie in (0, 1]")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                errors.append(f"{name}: must lie in [0, 1)")
        if not 0 < self.val_fraction < 1:
            errors.append("val_fraction: must lie in (0, 1)")
        return errors

    def lr_at(self, step: int) -> float:
        """Learning rate for optimizer step ``step`` (0-based)."""
        return self.lr0 * self.decay_rate ** (step // self.decay_steps)


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = ""
    best_epoch: int = 0

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["epoch", "loss", "acc", "val_acc", "lr"])
        for i, row in enumerate(zip(self.loss, self.acc, self.val_acc, self.lr), start=1):
            w.writerow([i, *(repr(float(v)) for v in row)])
        return out.getvalue()


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, epsilon=1e-7):
        self.params = params
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, grads, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            for k in p:
                m[k] = self.beta1 * m[k] + (1 - self.beta1) * g[k]
                v[k] = self.beta2 * v[k] + (1 - self.beta2) * g[k] ** 2
                p[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.epsilon)


def loss_and_grads(layers, params, x_nhwc, labels):
    end = logits_end(layers)
    logits, caches = forward_layers(layers, params, x_nhwc, end)
    loss, dlogits = cross_entropy(logits, labels)
    _, grads = backward_layers(layers[:end], params[:end], caches, dlogits)
    grads += [{} for _ in range(len(layers) - end)]
    return loss, grads, logits


def _logits(layers, params, x_nhwc, batch_size=512):
    end = logits_end(layers)
    return np.concatenate([forward_layers(layers, params, x_nhwc[i : i + batch_size], end)[0] for i in range(0, len(x_nhwc), batch_size)])


def fit(layers, features: np.ndarray, labels: np.ndarray, cfg: TrainConfig = TrainConfig()):
    """Train on ``(N, 3, 4, 65)`` feature maps; returns (float32-rounded params, history).

    All randomness (initialization, validation hold-out, shuffling) comes from one
    generator seeded with ``cfg.seed``.
    """
    errors = cfg.validate()
    if errors:
        raise ValueError("; ".join(errors))
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("cannot train on an empty set")
    x = dsp.to_cnn_layout(np.asarray(features, dtype=np.float64))
    rng = np.random.default_rng(cfg.seed)
    params = init_params(layers, rng)
    tr_idx, val_idx = split_indices(labels, 1 - cfg.val_fraction, int(rng.integers(2**63)), stratified=True)
    if len(val_idx) == 0 or len(tr_idx) == 0:
        raise ValueError("training set too small for a validation hold-out")
    x_tr, y_tr, x_val, y_val = x[tr_idx], labels[tr_idx], x[val_idx], labels[val_idx]

    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.epsilon)
    hist = TrainHistory()
    best_val, best_params, wait, step = -1.0, None, 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        hist.lr.append(cfg.lr_at(step))
        perm = rng.permutation(len(y_tr))
        total_loss = correct = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            b = perm[start : start + cfg.batch_size]
            loss, grads, logits = loss_and_grads(layers, params, x_tr[b], y_tr[b])
            opt.step(grads, cfg.lr_at(step))
            step += 1
            total_loss += loss * len(b)
            correct += float(np.sum(logits.argmax(axis=1) == y_tr[b]))
        val_acc = float(np.mean(_logits(layers, params, x_val).argmax(axis=1) == y_val))
        hist.loss.append(total_loss / len(y_tr))
        hist.acc.append(correct / len(y_tr))
        hist.val_acc.append(val_acc)
        log.debug("epoch %d loss %.5f acc %.4f val_acc %.4f", epoch, hist.loss[-1], hist.acc[-1], val_acc)
        if val_acc > best_val:
            best_val, wait, hist.best_epoch = val_acc, 0, epoch
            best_params = [{k: v.copy() for k, v in p.items()} for p in params]
        else:
            wait += 1
        hist.stop_epoch = epoch
        if wait >= cfg.patience:
            hist.stop_reason = "early_stopping"
            break
    else:
        hist.stop_reason = "max_epochs"
    final = [{k: v.astype(np.float32).astype(np.float64) for k, v in p.items()} for p in best_params]
    return final, hist


def train(
    arch,
    split: DatasetSplit,
    cfg: TrainConfig = TrainConfig(),
    prep: dsp.PrepConfig = dsp.PrepConfig(),
    features: Optional[np.ndarray] = None,
) -> tuple[ModelArtifact, TrainHistory]:
    """Preprocess the training split and fit ``arch``. Pass ``features`` to skip preprocessing."""
    arch = list(arch)
    if not split.train:
        raise ValueError("empty training split")
    budget = param_budget(arch)
    if budget > PARAM_BUDGET_BYTES:
        raise BudgetError(f"architecture needs {budget} parameter bytes, budget is {PARAM_BUDGET_BYTES}")
    if features is None:
        features = dsp.preprocess_many(split.train, prep)
    labels = np.array([s.label.index for s in split.train])
    params, hist = fit(arch, features, labels, cfg)
    input_shape = features.shape[2:] + features.shape[1:2]
    metadata = {
        "architecture": describe(arch),
        "param_bytes": budget,
        "activation_bytes": activation_bytes(arch, tuple(input_shape)),
        "seed": cfg.seed,
        "prep": {"alpha": prep.alpha, "eps": prep.eps, "pool": list(prep.pool), "per_axis": prep.per_axis},
        "train": asdict(cfg),
        "stop_epoch": hist.stop_epoch,
        "best_epoch": hist.best_epoch,
        "stop_reason": hist.stop_reason,
    }
    return ModelArtifact(arch, params, tuple(input_shape), metadata), hist


def prep_from_metadata(model: ModelArtifact) -> dsp.PrepConfig:
    p = model.metadata.get("prep", {})
    return dsp.PrepConfig(
        alpha=p.get("alpha", dsp.TUKEY_ALPHA),
        eps=p.get("eps", dsp.EPS),
        pool=tuple(p.get("pool", dsp.POOL)),
        per_axis=p.get("per_axis", False),
    )


def features_and_labels(model: ModelArtifact, samples) -> tuple[np.ndarray, np.ndarray]:
    """Accepts samples, or an already computed ``(features, labels)`` pair."""
    if isinstance(samples, tuple):
        features, labels = samples
        return np.asarray(features, dtype=np.float64), np.asarray(labels)
    samples = list(samples)
    return dsp.preprocess_many(samples, prep_from_metadata(model)), np.array([s.label.index for s in samples])


def evaluate(model: ModelArtifact, samples: Sequence[TimeSeriesSample] | tuple, int8: bool = False) -> float:
    """Fraction of correctly classified samples, using the float or the integer path."""
    features, labels = features_and_labels(model, samples)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty set")
    if int8:
        from .int8 import predict_i8

        pred = predict_i8(model, features)
    else:
        pred = predict_f32(model, features)
    return float(np.mean(pred == labels))
