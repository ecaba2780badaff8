"""Extraction and classification metrics plus report assembly.

Token-wise F1 pools every token of every pair as one binary decision; the
longest-common-substring score compares the longest contiguous run of
positions shared by prediction and gold against each side's length and is
averaged per extraction (pairs with empty gold are excluded and counted).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import ATTRIBUTES, CLASSES, DataPoint

__all__ = [
    "MaskPair",
    "AttributeReport",
    "EvalReport",
    "token_f1",
    "lcs_length",
    "lcsf1",
    "classification_f1",
    "segment_count",
    "evaluate",
]


@dataclass(frozen=True)
class MaskPair:
    predicted: np.ndarray
    gold: np.ndarray

    def __post_init__(self):
        pred = np.asarray(self.predicted, dtype=np.int8)
        gold = np.asarray(self.gold, dtype=np.int8)
        if pred.shape != gold.shape or pred.ndim != 1:
            raise ValueError(f"mask pair shapes differ: {pred.shape} vs {gold.shape}")
        for name, m in (("predicted", pred), ("gold", gold)):
            if m.size and not np.isin(m, (0, 1)).all():
                raise ValueError(f"{name} mask is not binary")
        object.__setattr__(self, "predicted", pred)
        object.__setattr__(self, "gold", gold)


def token_f1(pairs: list[MaskPair]) -> float:
    """Micro F1 of the positive class over the pooled token decisions."""
    if not pairs:
        raise ValueError("token_f1: need at least one mask pair")
    tp = fp = fn = 0
    for pair in pairs:
        p, g = pair.predicted, pair.gold
        tp += int(np.sum((p == 1) & (g == 1)))
        fp += int(np.sum((p == 1) & (g == 0)))
        fn += int(np.sum((p == 0) & (g == 1)))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def lcs_length(pair: MaskPair) -> int:
    """Longest run of consecutive positions marked in both masks."""
    both = (pair.predicted == 1) & (pair.gold == 1)
    best = run = 0
    for hit in both:
        run = run + 1 if hit else 0
        if run > best:
            best = run
    return best


def lcsf1(pairs: list[MaskPair]):
    """Mean per-pair harmonic mean of LCS recall and precision.

    Pairs with empty gold are excluded from the mean; returns
    (score or None, n_scored, n_skipped).
    """
    if not pairs:
        raise ValueError("lcsf1: need at least one mask pair")
    scores = []
    skipped = 0
    for pair in pairs:
        n_gold = int(pair.gold.sum())
        if n_gold == 0:
            skipped += 1
            continue
        n_pred = int(pair.predicted.sum())
        lcs = lcs_length(pair)
        recall = lcs / n_gold
        precision = lcs / n_pred if n_pred else 0.0
        scores.append(2 * precision * recall / (precision + recall) if precision + recall else 0.0)
    if not scores:
        return None, 0, skipped
    return float(np.mean(scores)), len(scores), skipped


def classification_f1(preds, golds, n_classes: int) -> float:
    """Macro F1 over the classes present in gold or predictions."""
    preds = np.asarray(preds)
    golds = np.asarray(golds)
    if preds.shape != golds.shape:
        raise ValueError(f"prediction/gold shapes differ: {preds.shape} vs {golds.shape}")
    if preds.size and (preds.min() < 0 or preds.max() >= n_classes or golds.min() < 0 or golds.max() >= n_classes):
        raise ValueError("label out of range")
    present = sorted(set(preds.tolist()) | set(golds.tolist()))
    f1s = []
    for c in present:
        tp = int(np.sum((preds == c) & (golds == c)))
        fp = int(np.sum((preds == c) & (golds != c)))
        fn = int(np.sum((preds != c) & (golds == c)))
        denom = 2 * tp + fp + fn
        f1s.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(f1s)) if f1s else 0.0


def segment_count(mask) -> int:
    """Number of maximal runs of 1s."""
    m = np.asarray(mask, dtype=np.int8)
    if m.size == 0:
        return 0
    starts = int(m[0] == 1) + int(np.sum((m[1:] == 1) & (m[:-1] == 0)))
    return starts


# ---------------------------------------------------------------------------
# report assembly


@dataclass
class AttributeReport:
    tf1: float | None
    lcsf1: float | None
    classification_f1: float
    mean_segments: float | None
    lcsf1_pairs: int
    lcsf1_skipped: int


@dataclass
class EvalReport:
    attributes: dict[str, AttributeReport]
    macro_tf1: float | None
    macro_lcsf1: float | None
    macro_classification_f1: float
    n_examples: int
    n_span_labeled: int
    extra: dict = field(default_factory=dict)

    def to_records(self) -> list[dict]:
        recs = []
        for attr in ATTRIBUTES:
            a = self.attributes[attr]
            recs.append(
                {
                    "attribute": attr,
                    "tf1": a.tf1,
                    "lcsf1": a.lcsf1,
                    "classification_f1": a.classification_f1,
                    "mean_segments": a.mean_segments,
                    "lcsf1_pairs": a.lcsf1_pairs,
                    "lcsf1_skipped": a.lcsf1_skipped,
                }
            )
        recs.append(
            {
                "attribute": "macro",
                "tf1": self.macro_tf1,
                "lcsf1": self.macro_lcsf1,
                "classification_f1": self.macro_classification_f1,
                "n_examples": self.n_examples,
                "n_span_labeled": self.n_span_labeled,
                **self.extra,
            }
        )
        return recs

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.to_records()) + "\n"

    def table(self) -> str:
        """Human-readable summary table."""
        def fmt(x):
            return "  -  " if x is None else f"{x:5.3f}"

        lines = [f"{'attribute':<12} {'TF1':>6} {'LCSF1':>6} {'ClsF1':>6} {'segs':>6}"]
        for attr in ATTRIBUTES:
            a = self.attributes[attr]
            lines.append(
                f"{attr:<12} {fmt(a.tf1):>6} {fmt(a.lcsf1):>6} "
                f"{fmt(a.classification_f1):>6} {fmt(a.mean_segments):>6}"
            )
        lines.append(
            f"{'macro':<12} {fmt(self.macro_tf1):>6} {fmt(self.macro_lcsf1):>6} "
            f"{fmt(self.macro_classification_f1):>6} {'':>6}"
        )
        return "\n".join(lines)


def evaluate(predict, dataset: list[DataPoint]) -> EvalReport:
    """Run a predictor over a dataset and assemble the full report.

    ``predict(point) -> (class ids, masks, attention weights)``.  Span
    metrics use the span-labeled subset; when it is empty they are reported
    as absent rather than zero.
    """
    if not dataset:
        raise ValueError("evaluate: empty dataset")
    cls_preds = {attr: [] for attr in ATTRIBUTES}
    cls_golds = {attr: [] for attr in ATTRIBUTES}
    pairs = {attr: [] for attr in ATTRIBUTES}
    seg_counts = {attr: [] for attr in ATTRIBUTES}
    n_span = 0
    for point in dataset:
        classes, masks, _ = predict(point)
        for attr in ATTRIBUTES:
            cls_preds[attr].append(classes[attr])
            cls_golds[attr].append(CLASSES[attr].index(point.labels[attr]))
        if point.has_spans():
            n_span += 1
            for attr in ATTRIBUTES:
                gold = point.mask(attr)
                if gold is None:
                    gold = np.zeros(point.n_tokens, dtype=np.int8)
                pairs[attr].append(MaskPair(masks[attr], gold))
                seg_counts[attr].append(segment_count(masks[attr]))

    attributes = {}
    for attr in ATTRIBUTES:
        cf1 = classification_f1(cls_preds[attr], cls_golds[attr], len(CLASSES[attr]))
        if pairs[attr]:
            tf1 = token_f1(pairs[attr])
            lf1, n_pairs, n_skip = lcsf1(pairs[attr])
            segs = float(np.mean(seg_counts[attr]))
        else:
            tf1, lf1, n_pairs, n_skip, segs = None, None, 0, 0, None
        attributes[attr] = AttributeReport(tf1, lf1, cf1, segs, n_pairs, n_skip)

    def macro(values):
        vals = [v for v in values if v is not None]
        return float(np.mean(vals)) if len(vals) == len(ATTRIBUTES) else None

    return EvalReport(
        attributes=attributes,
        macro_tf1=macro([attributes[a].tf1 for a in ATTRIBUTES]),
        macro_lcsf1=macro([attributes[a].lcsf1 for a in ATTRIBUTES]),
        macro_classification_f1=float(np.mean([attributes[a].classification_f1 for a in ATTRIBUTES])),
        n_examples=len(dataset),
        n_span_labeled=n_span,
    )
