"""Losses, optimizer loop, the softmax-to-fusedmax swap, threshold tuning.

The objective is a weighted cross-entropy over the three attribute
classifiers plus, for span-labeled examples, a KL divergence pulling each
attention distribution toward the normalized gold mask; the two parts are
combined as ``loss = classification + lambda * identification``.  The
swap schedule trains with softmax and switches the projection to fusedmax
for the final epochs, resetting extraction thresholds to zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ATTRIBUTES, CLASSES, DataPoint
from .model import ExtractionThresholds, ModelParams, forward, make_predictor
from .tensor import Tensor

__all__ = [
    "ClassWeights",
    "TrainConfig",
    "TrainingDiverged",
    "class_weights",
    "classification_loss",
    "identification_loss",
    "Adam",
    "SGD",
    "train",
    "tune_thresholds",
]

_PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    """Loss became NaN; carries the epoch and batch for diagnostics."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"loss is NaN at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class ClassWeights:
    """Per-class weights per attribute, mean-normalized to 1."""

    weights: dict[str, np.ndarray]

    def get(self, attr: str) -> np.ndarray:
        return self.weights[attr]

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls({attr: np.ones(len(CLASSES[attr])) for attr in ATTRIBUTES})


def class_weights(label_counts: dict[str, np.ndarray]) -> ClassWeights:
    """Invert each class' relative proportion, then normalize to mean 1.

    Zero-count classes get a clamped denominator of 1 so weights stay finite.
    """
    out = {}
    for attr in ATTRIBUTES:
        counts = np.asarray(label_counts[attr], dtype=np.float64)
        if counts.ndim != 1 or counts.size == 0:
            raise ValueError(f"{attr}: counts must be a nonempty vector, got shape {counts.shape}")
        if counts.min() < 0:
            raise ValueError(f"{attr}: negative class count")
        total = counts.sum()
        if total == 0:
            raise ValueError(f"{attr}: all class counts are zero")
        w = total / (counts.size * np.maximum(counts, 1.0))
        out[attr] = w / w.mean()
    return ClassWeights(out)


def count_labels(points: list[DataPoint]) -> dict[str, np.ndarray]:
    counts = {attr: np.zeros(len(CLASSES[attr])) for attr in ATTRIBUTES}
    for p in points:
        for attr in ATTRIBUTES:
            counts[attr][CLASSES[attr].index(p.labels[attr])] += 1
    return counts


def classification_loss(probs: dict[str, Tensor], labels: dict[str, int],
                        weights: ClassWeights) -> Tensor:
    """Sum over attributes of -w_y * log p_y, with probabilities floored."""
    total = None
    for attr in ATTRIBUTES:
        y = labels[attr]
        p = probs[attr]
        if not 0 <= y < p.data.size:
            raise IndexError(f"{attr}: label {y} out of range for {p.data.size} classes")
        term = T.mul(T.neg(T.log(T.clip_min(p[y], _PROB_FLOOR))), float(weights.get(attr)[y]))
        total = term if total is None else T.add(total, term)
    return total


def identification_loss(gold_masks: dict[str, np.ndarray | None],
                        attn_weights: dict[str, Tensor]) -> Tensor:
    """Sum over span-labeled attributes of KL(normalized gold || attention).

    Attributes without a mask (or with an all-zero mask) contribute zero.
    """
    total = Tensor(0.0)
    for attr in ATTRIBUTES:
        mask = gold_masks.get(attr)
        if mask is None:
            continue
        mask = np.asarray(mask, dtype=np.float64)
        s = mask.sum()
        if s == 0:
            continue
        a = mask / s
        ahat = attn_weights[attr]
        if a.shape != ahat.data.shape:
            raise ValueError(f"{attr}: gold mask length {a.shape} vs attention {ahat.data.shape}")
        entropy = float((a[a > 0] * np.log(a[a > 0])).sum())
        cross = T.tensor_sum(T.mul(T.neg(T.log(T.clip_min(ahat, _PROB_FLOOR))), a))
        total = T.add(total, T.add(cross, entropy))
    return total


# ---------------------------------------------------------------------------
# optimizers


class Adam:
    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params}
        self.v = {name: np.zeros_like(t.data) for name, t in params}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class SGD:
    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-2, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.buf = {name: np.zeros_like(t.data) for name, t in params}

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                continue
            b = self.buf[name]
            b *= self.momentum
            b += p.grad
            p.data -= self.lr * b


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    lambda_id: float = 1.0
    optimizer: str = "adam"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    sgd_momentum: float = 0.0
    fusedmax_star: bool = False
    swap_fraction: float = 0.25
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 < self.swap_fraction < 1.0:
            raise ValueError(f"swap_fraction must be in (0, 1), got {self.swap_fraction}")
        if self.lambda_id < 0:
            raise ValueError(f"lambda_id must be >= 0, got {self.lambda_id}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def swap_epoch(self, epochs: int | None = None) -> int:
        """First 1-based epoch that runs with fusedmax under the swap schedule."""
        e = self.epochs if epochs is None else epochs
        return int(np.floor((1.0 - self.swap_fraction) * e)) + 1


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict]
    thresholds: ExtractionThresholds
    class_weights: ClassWeights


def _make_optimizer(cfg: TrainConfig, params: ModelParams):
    named = params.named_parameters()  # embedding table deliberately absent
    if cfg.optimizer == "adam":
        return Adam(named, lr=cfg.learning_rate, beta1=cfg.adam_betas[0],
                    beta2=cfg.adam_betas[1], eps=cfg.adam_eps)
    return SGD(named, lr=cfg.learning_rate, momentum=cfg.sgd_momentum)


def train(train_points: list[DataPoint], params: ModelParams, cfg: TrainConfig,
          validation: list[DataPoint] | None = None,
          history_path=None, progress=None) -> TrainResult:
    """Optimize all trainable parameter groups on the joint objective.

    Under ``fusedmax_star`` the projection starts as softmax and switches to
    fusedmax at the swap epoch (thresholds reset to 0 at that point).  The
    returned thresholds are tuned on ``validation`` when it has span labels
    and the final projection is softmax; otherwise they are zeros.
    """
    weights = class_weights(count_labels(train_points))
    optimizer = _make_optimizer(cfg, params)
    rng = np.random.default_rng(cfg.seed)
    history: list[dict] = []

    base_projection = params.config.projection
    if cfg.fusedmax_star:
        params.config.projection = base_projection.with_kind("softmax")
    swap_at = cfg.swap_epoch()

    n = len(train_points)
    order = np.arange(n)
    for epoch in range(1, cfg.epochs + 1):
        if cfg.fusedmax_star and epoch == swap_at:
            params.config.projection = base_projection.with_kind("fusedmax")
        rng.shuffle(order)
        epoch_lc = 0.0
        epoch_li = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = [train_points[i] for i in order[start : start + cfg.batch_size]]
            params.zero_grad()
            batch_loss = None
            lc_val = li_val = 0.0
            for point in batch:
                res = forward(point, params, rng=rng)
                labels = {a: CLASSES[a].index(point.labels[a]) for a in ATTRIBUTES}
                lc = classification_loss(res.probs, labels, weights)
                loss = lc
                lc_val += lc.item()
                if cfg.lambda_id > 0 and point.has_spans():
                    masks = {a: point.mask(a) for a in ATTRIBUTES}
                    li = identification_loss(masks, {a: res.attention[a].weights for a in ATTRIBUTES})
                    li_val += li.item()
                    loss = T.add(loss, T.mul(li, cfg.lambda_id))
                batch_loss = loss if batch_loss is None else T.add(batch_loss, loss)
            batch_loss = T.mul(batch_loss, 1.0 / len(batch))
            if not np.isfinite(batch_loss.item()):
                raise TrainingDiverged(epoch, b)
            T.backward(batch_loss)
            optimizer.step()
            epoch_lc += lc_val
            epoch_li += li_val
        record = {
            "epoch": epoch,
            "loss_c": epoch_lc / n,
            "loss_i": epoch_li / n,
            "projection": params.config.projection.kind,
        }
        history.append(record)
        if progress is not None:
            progress(record)

    if history_path is not None:
        with open(history_path, "w", encoding="utf-8") as fh:
            for record in history:
                fh.write(json.dumps(record) + "\n")

    thresholds = ExtractionThresholds.zeros()
    if params.config.projection.kind == "softmax" and validation:
        span_val = [p for p in validation if p.has_spans()]
        if span_val:
            thresholds = tune_thresholds(params, span_val)
    return TrainResult(params, history, thresholds, weights)


# ---------------------------------------------------------------------------
# threshold tuning


def _best_threshold(values: np.ndarray, gold: np.ndarray) -> float:
    """Threshold maximizing token F1 of ``value > threshold``; ties go low.

    Candidates are 0 plus midpoints between consecutive distinct observed
    values, swept with cumulative counts.
    """
    order = np.argsort(-values, kind="stable")
    v = values[order]
    g = gold[order].astype(np.float64)
    tp = np.cumsum(g)
    pos = np.arange(1, v.size + 1)
    total_gold = g.sum()

    distinct = np.unique(v)[::-1]  # descending
    mids = (distinct[:-1] + distinct[1:]) / 2.0 if distinct.size > 1 else np.empty(0)
    candidates = np.concatenate((mids, [0.0]))
    candidates = candidates[candidates >= 0.0]
    candidates = np.unique(candidates)  # ascending; ties then pick smallest

    best_f1 = -1.0
    best_t = 0.0
    for t in candidates:
        k = int(np.searchsorted(-v, -t, side="left"))  # count of values > t
        tp_k = tp[k - 1] if k else 0.0
        denom = 2.0 * tp_k + (k - tp_k) + (total_gold - tp_k)
        f1 = 2.0 * tp_k / denom if denom else 0.0
        if f1 > best_f1 + 1e-15:
            best_f1 = f1
            best_t = float(t)
    return best_t


def tune_thresholds(params: ModelParams, validation_span_set: list[DataPoint]) -> ExtractionThresholds:
    """Per-attribute thresholds maximizing token F1 on validation spans.

    With fusedmax the attention weights are already sparse and the
    thresholds stay at zero; tuning only matters for softmax.
    """
    if not validation_span_set:
        raise ValueError("tune_thresholds: empty validation set")
    if params.config.projection.kind == "fusedmax":
        return ExtractionThresholds.zeros()
    predict = make_predictor(params)
    values = {attr: [] for attr in ATTRIBUTES}
    gold = {attr: [] for attr in ATTRIBUTES}
    for point in validation_span_set:
        _, _, weights = predict(point)
        for attr in ATTRIBUTES:
            mask = point.mask(attr)
            if mask is None:
                continue
            values[attr].append(weights[attr])
            gold[attr].append(mask)
    chosen = {}
    for attr in ATTRIBUTES:
        if not values[attr]:
            chosen[attr] = 0.0
            continue
        chosen[attr] = _best_threshold(np.concatenate(values[attr]), np.concatenate(gold[attr]))
    return ExtractionThresholds(**{a: chosen[a] for a in ATTRIBUTES})
