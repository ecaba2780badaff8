"""Dataset schema, record parsing, synthetic generator and splits.

Records are JSON lines: id, utterances (speaker + word tokens), the target
medication (name tokens plus its flattened token span), one class label per
attribute, and optional per-attribute evidence spans.  The generator emits
templated doctor/patient dialogues where each attribute class is realized as
a surface phrase inside a prescription utterance; class labels can be
corrupted at configurable per-attribute rates without touching the text,
which mirrors annotators using out-of-window knowledge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ATTRIBUTES",
    "CLASSES",
    "CLASS_PROPORTIONS",
    "SPEAKERS",
    "Utterance",
    "MedicationRef",
    "DataPoint",
    "GeneratorConfig",
    "DatasetError",
    "parse_dataset",
    "write_dataset",
    "generate",
    "split",
    "limit_span_labels",
]

ATTRIBUTES = ("frequency", "route", "change")

SPEAKERS = ("DR", "PT", "CG", "RN")

CLASSES = {
    "frequency": (
        "Daily",
        "Every morning",
        "At Bedtime",
        "Twice a day",
        "Three times a day",
        "Every six hours",
        "Every week",
        "Twice a week",
        "Three times a week",
        "Every month",
        "Other",
        "None",
    ),
    "route": (
        "Pill",
        "Injection",
        "Topical cream",
        "Nasal spray",
        "Medicated patch",
        "Ophthalmic solution",
        "Inhaler",
        "Oral solution",
        "Other",
        "None",
    ),
    "change": ("Take", "Stop", "Increase", "Decrease", "None", "Other"),
}

# observed class proportions (percent) in the reference corpus; used as the
# default sampling distribution so the heavy None skew is exercised
CLASS_PROPORTIONS = {
    "frequency": (8.0, 0.9, 1.7, 6.5, 1.6, 0.2, 0.9, 0.2, 0.3, 0.3, 1.5, 77.9),
    "route": (6.8, 3.5, 1.0, 0.5, 0.2, 0.2, 0.2, 0.1, 2.1, 85.5),
    "change": (83.1, 6.5, 5.2, 2.0, 1.6, 1.4),
}


class DatasetError(ValueError):
    """Malformed record or invariant violation, with context."""


@dataclass
class Utterance:
    speaker: str
    tokens: list[str]


@dataclass
class MedicationRef:
    tokens: list[str]
    start: int
    end: int


@dataclass
class DataPoint:
    """One grounded example; flattened token/speaker views are derived."""

    id: str
    utterances: list[Utterance]
    medication: MedicationRef
    labels: dict[str, str]
    spans: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        self.tokens: list[str] = []
        self.speaker_ids: list[int] = []
        for utt in self.utterances:
            if utt.speaker not in SPEAKERS:
                raise DatasetError(f"{self.id}: unknown speaker {utt.speaker!r}")
            sid = SPEAKERS.index(utt.speaker)
            self.tokens.extend(utt.tokens)
            self.speaker_ids.extend([sid] * len(utt.tokens))
        self._validate()

    def _validate(self):
        n = len(self.tokens)
        if n == 0:
            raise DatasetError(f"{self.id}: example has no tokens")
        med = self.medication
        if not (0 <= med.start < med.end <= n):
            raise DatasetError(f"{self.id}: medication span [{med.start}, {med.end}) out of range for {n} tokens")
        if self.tokens[med.start : med.end] != med.tokens:
            raise DatasetError(f"{self.id}: medication tokens do not match text at [{med.start}, {med.end})")
        for attr in ATTRIBUTES:
            if attr not in self.labels:
                raise DatasetError(f"{self.id}: missing label for attribute {attr!r}")
            if self.labels[attr] not in CLASSES[attr]:
                raise DatasetError(f"{self.id}: unknown {attr} class {self.labels[attr]!r}")
        extra = set(self.labels) - set(ATTRIBUTES)
        if extra:
            raise DatasetError(f"{self.id}: unknown label fields {sorted(extra)}")
        for attr, span in self.spans.items():
            if attr not in ATTRIBUTES:
                raise DatasetError(f"{self.id}: unknown span attribute {attr!r}")
            s, e = span
            if not (0 <= s < e <= n):
                raise DatasetError(f"{self.id}: {attr} span [{s}, {e}) out of range for {n} tokens")

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    def mask(self, attr: str) -> np.ndarray | None:
        """Binary evidence mask for ``attr``, or None when not span-labeled."""
        span = self.spans.get(attr)
        if span is None:
            return None
        m = np.zeros(len(self.tokens), dtype=np.int8)
        m[span[0] : span[1]] = 1
        return m

    def has_spans(self) -> bool:
        return bool(self.spans)

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "utterances": [{"speaker": u.speaker, "tokens": list(u.tokens)} for u in self.utterances],
            "medication": {
                "tokens": list(self.medication.tokens),
                "start": self.medication.start,
                "end": self.medication.end,
            },
            "labels": dict(self.labels),
        }
        if self.spans:
            rec["spans"] = {a: [s, e] for a, (s, e) in self.spans.items()}
        return rec


def _require_fields(obj: dict, allowed: set[str], required: set[str], where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise DatasetError(f"{where}: unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise DatasetError(f"{where}: missing fields {sorted(missing)}")


def datapoint_from_record(rec: dict, where: str = "record") -> DataPoint:
    if not isinstance(rec, dict):
        raise DatasetError(f"{where}: expected an object, got {type(rec).__name__}")
    _require_fields(rec, {"id", "utterances", "medication", "labels", "spans"},
                    {"id", "utterances", "medication", "labels"}, where)
    utterances = []
    for i, u in enumerate(rec["utterances"]):
        _require_fields(u, {"speaker", "tokens"}, {"speaker", "tokens"}, f"{where}: utterance {i}")
        if u["speaker"] not in SPEAKERS:
            raise DatasetError(f"{where}: unknown speaker {u['speaker']!r}")
        utterances.append(Utterance(u["speaker"], list(u["tokens"])))
    med = rec["medication"]
    _require_fields(med, {"tokens", "start", "end"}, {"tokens", "start", "end"}, f"{where}: medication")
    spans = {}
    for attr, pair in rec.get("spans", {}).items():
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise DatasetError(f"{where}: span for {attr!r} must be a [start, end) pair")
        spans[attr] = (int(pair[0]), int(pair[1]))
    return DataPoint(
        id=str(rec["id"]),
        utterances=utterances,
        medication=MedicationRef(list(med["tokens"]), int(med["start"]), int(med["end"])),
        labels=dict(rec["labels"]),
        spans=spans,
    )


def parse_dataset(path) -> list[DataPoint]:
    """Read a JSON-lines dataset file; any malformed line names its number."""
    points = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"{path}:{lineno}: not valid JSON ({err.msg})") from None
            try:
                points.append(datapoint_from_record(rec, where=f"{path}:{lineno}"))
            except DatasetError:
                raise
    if not points:
        raise DatasetError(f"{path}: no records")
    return points


def write_dataset(points: list[DataPoint], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in points:
            fh.write(json.dumps(p.to_record(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class GeneratorConfig:
    n_examples: int = 1000
    span_label_fraction: float = 1.0
    multi_medication_fraction: float = 0.773
    label_noise_rates: dict = field(
        default_factory=lambda: {"frequency": 0.22, "route": 0.36, "change": 0.15}
    )
    class_distribution: str = "table2"
    seed: int = 0

    def __post_init__(self):
        for name, frac in (
            ("span_label_fraction", self.span_label_fraction),
            ("multi_medication_fraction", self.multi_medication_fraction),
        ):
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {frac}")
        for attr, rate in self.label_noise_rates.items():
            if attr not in ATTRIBUTES or not 0.0 <= rate <= 1.0:
                raise ValueError(f"bad noise rate {attr!r}={rate}")
        if self.class_distribution not in ("table2", "uniform"):
            raise ValueError(f"unknown class_distribution {self.class_distribution!r}")


# surface realizations per class; lexicon phrases where the baseline lexicon
# has them, home-grown phrases for the classes it leaves empty
REALIZATIONS = {
    "frequency": {
        "Daily": ["every day", "once a day", "daily"],
        "Every morning": ["every morning", "everyday in the morning", "morning"],
        "At Bedtime": ["at bedtime", "every night", "before sleeping", "after dinner"],
        "Twice a day": ["twice a day", "two times a day", "2 times per day"],
        "Three times a day": ["3 times a day", "3 times per day", "3 times every day"],
        "Every six hours": ["every 6 hours", "every six hours"],
        "Every week": ["every week", "weekly", "once a week"],
        "Twice a week": ["twice a week", "two times a week", "twice per week"],
        "Three times a week": ["3 times a week", "3 times per week"],
        "Every month": ["every month", "monthly", "once a month"],
        "Other": ["as needed", "whenever you feel it coming"],
    },
    "route": {
        "Pill": ["pill", "tablet", "capsule", "mg"],
        "Injection": ["injection", "shot", "pen", "injector"],
        "Topical cream": ["cream", "gel", "ointment", "lotion"],
        "Nasal spray": ["spray", "nasal"],
        "Medicated patch": ["patch"],
        "Ophthalmic solution": ["drops", "drop", "ophthalmic"],
        "Inhaler": ["inhaler"],
        "Oral solution": ["oral solution"],
        "Other": ["suppository", "lozenge"],
    },
    "change": {
        "Take": ["take", "start", "put you on", "continue"],
        "Stop": ["stop", "off"],
        "Increase": ["increase"],
        "Decrease": ["decrease", "reduce"],
        "Other": ["rethink", "revisit"],
    },
}

MEDICATION_NAMES = [
    ["zorvax"],
    ["melatrin"],
    ["cordavil"],
    ["nexilor"],
    ["aptravine"],
    ["fentrozol"],
    ["dexaprin"],
    ["velcorin", "forte"],
    ["lumetra", "xr"],
    ["brivandol"],
    ["ketrazine"],
    ["solmavir", "b", "complex"],
    ["ostrafen"],
    ["quilandra"],
    ["tervolin", "plus"],
]

# filler lines avoid all realization vocabulary so phrase matches stay clean
FILLER = [
    ("PT", "okay ."),
    ("PT", "alright , thank you ."),
    ("PT", "i see ."),
    ("PT", "yes i think so ."),
    ("PT", "that sounds fine to me ."),
    ("DR", "how have you been feeling lately ?"),
    ("DR", "your labs look fine ."),
    ("DR", "any headaches or dizziness ?"),
    ("DR", "we can check again at your next visit ."),
    ("DR", "let me pull up your chart ."),
    ("CG", "she has been doing well at home ."),
    ("CG", "i can help with the schedule ."),
    ("RN", "your blood pressure looks fine today ."),
    ("RN", "the front desk can print your summary ."),
]


def _sample_class(rng: np.random.Generator, attr: str, distribution: str) -> str:
    names = CLASSES[attr]
    if distribution == "uniform":
        return names[rng.integers(len(names))]
    weights = np.asarray(CLASS_PROPORTIONS[attr], dtype=np.float64)
    return names[rng.choice(len(names), p=weights / weights.sum())]


def _pick_phrase(rng: np.random.Generator, attr: str, cls: str) -> list[str] | None:
    options = REALIZATIONS[attr].get(cls)
    if not options:
        return None
    return options[rng.integers(len(options))].split()


def _prescription_utterance(
    rng: np.random.Generator,
    med: list[str],
    phrases: dict[str, list[str] | None],
):
    """Build one DR utterance embedding the medication and its phrases.

    Returns (tokens, med offset, {attr: phrase offset}) with offsets local to
    the utterance.
    """
    tokens: list[str] = []
    offsets: dict[str, int] = {}

    lead = ["okay", ","] if rng.random() < 0.5 else ["so", ","]
    tokens.extend(lead)
    if phrases["change"] is not None:
        tokens.extend(["we", "will"])
        offsets["change"] = len(tokens)
        tokens.extend(phrases["change"])
    else:
        tokens.extend(["about"])
    med_at = len(tokens)
    tokens.extend(med)
    tokens.append(",")
    if phrases["route"] is not None:
        tokens.append("one")
        offsets["route"] = len(tokens)
        tokens.extend(phrases["route"])
    if phrases["frequency"] is not None:
        offsets["frequency"] = len(tokens)
        tokens.extend(phrases["frequency"])
    if phrases["route"] is None and phrases["frequency"] is None:
        tokens.extend(["as", "we", "discussed"])
    tokens.append(".")
    return tokens, med_at, offsets


def _make_example(rng: np.random.Generator, cfg: GeneratorConfig, index: int) -> DataPoint:
    labels = {a: _sample_class(rng, a, cfg.class_distribution) for a in ATTRIBUTES}
    phrases = {a: _pick_phrase(rng, a, labels[a]) for a in ATTRIBUTES}

    med_idx = int(rng.integers(len(MEDICATION_NAMES)))
    med = MEDICATION_NAMES[med_idx]

    n_distractors = 0
    if rng.random() < cfg.multi_medication_fraction:
        n_distractors = int(rng.integers(1, 3))
    distractors = []
    used_meds = {med_idx}
    for _ in range(n_distractors):
        didx = int(rng.integers(len(MEDICATION_NAMES)))
        while didx in used_meds:
            didx = int(rng.integers(len(MEDICATION_NAMES)))
        used_meds.add(didx)
        dlabels = {}
        for attr in ATTRIBUTES:
            cls = _sample_class(rng, attr, cfg.class_distribution)
            while cls == labels[attr]:
                cls = _sample_class(rng, attr, "uniform")
            dlabels[attr] = cls
        dphrases = {a: _pick_phrase(rng, a, dlabels[a]) for a in ATTRIBUTES}
        distractors.append((MEDICATION_NAMES[didx], dphrases))

    n_utts = int(np.clip(round(rng.normal(7.8, 2.3)), 3, 20))
    n_script = 1 + n_distractors
    n_utts = max(n_utts, n_script + 1)
    filler_count = n_utts - n_script

    script_slots = sorted(rng.choice(n_utts, size=n_script, replace=False).tolist())
    target_slot = script_slots[int(rng.integers(n_script))]

    utterances: list[Utterance] = []
    med_span = None
    spans: dict[str, tuple[int, int]] = {}
    flat = 0
    # assign the target prescription to its chosen slot, distractors to the rest
    slot_content: dict[int, tuple] = {}
    remaining = [s for s in script_slots if s != target_slot]
    slot_content[target_slot] = (med, phrases, True)
    for slot, (dmed, dph) in zip(remaining, distractors):
        slot_content[slot] = (dmed, dph, False)

    filler_order = rng.permutation(len(FILLER))
    fi = 0
    for slot in range(n_utts):
        if slot in slot_content:
            m, ph, is_target = slot_content[slot]
            tokens, med_at, offsets = _prescription_utterance(rng, m, ph)
            if is_target:
                med_span = (flat + med_at, flat + med_at + len(m))
                for attr, off in offsets.items():
                    spans[attr] = (flat + off, flat + off + len(ph[attr]))
            utterances.append(Utterance("DR", tokens))
            flat += len(tokens)
        else:
            spk, text = FILLER[filler_order[fi % len(FILLER)]]
            fi += 1
            tokens = text.split()
            utterances.append(Utterance(spk, tokens))
            flat += len(tokens)

    # label corruption: flip the class, keep text and spans untouched; draws
    # are consumed unconditionally so the rates never shift the RNG stream
    for attr in ATTRIBUTES:
        rate = cfg.label_noise_rates.get(attr, 0.0)
        u = rng.random()
        others = [c for c in CLASSES[attr] if c != labels[attr]]
        pick = int(rng.integers(len(others)))
        if u < rate:
            labels[attr] = others[pick]

    keep_spans = rng.random() < cfg.span_label_fraction
    return DataPoint(
        id=f"syn{index:06d}",
        utterances=utterances,
        medication=MedicationRef(list(med), med_span[0], med_span[1]),
        labels=labels,
        spans=spans if keep_spans else {},
    )


def generate(cfg: GeneratorConfig) -> list[DataPoint]:
    """Deterministic templated dialogue dataset for the configured seed."""
    rng = np.random.default_rng(cfg.seed)
    return [_make_example(rng, cfg, i) for i in range(cfg.n_examples)]


def split(points: list[DataPoint], fractions, seed: int):
    """Seeded disjoint train/validation/test split, stratified by change class."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError(f"fractions must be three values summing to 1, got {fractions}")
    n = len(points)
    targets = [int(round(f * n)) for f in fractions]
    targets[0] = n - targets[1] - targets[2]
    if min(targets) <= 0:
        raise ValueError(f"split of {n} examples with fractions {fractions} leaves an empty part")

    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {}
    for i, p in enumerate(points):
        by_class.setdefault(p.labels["change"], []).append(i)

    parts: list[list[int]] = [[], [], []]
    leftovers: list[tuple[int, np.ndarray]] = []
    for cls in sorted(by_class):
        idx = np.array(by_class[cls])
        rng.shuffle(idx)
        counts = [int(math.floor(f * len(idx))) for f in fractions]
        start = 0
        for part, c in enumerate(counts):
            parts[part].extend(idx[start : start + c].tolist())
            start += c
        leftovers.append((cls, idx[start:]))
    # distribute stratification remainders to whichever part is furthest below target
    for _, rest in leftovers:
        for i in rest.tolist():
            deficits = [targets[k] - len(parts[k]) for k in range(3)]
            parts[max(range(3), key=lambda k: deficits[k])].append(i)

    out = []
    for part in parts:
        part_idx = np.array(sorted(part))
        rng.shuffle(part_idx)
        out.append([points[i] for i in part_idx.tolist()])
    assert sum(len(p) for p in out) == n
    return out[0], out[1], out[2]


def limit_span_labels(points: list[DataPoint], n_keep: int, seed: int) -> list[DataPoint]:
    """Keep gold spans on a seeded subset of ``n_keep`` examples, drop the rest."""
    rng = np.random.default_rng(seed)
    labeled = [i for i, p in enumerate(points) if p.has_spans()]
    keep = set(rng.permutation(labeled)[:n_keep].tolist())
    out = []
    for i, p in enumerate(points):
        if p.has_spans() and i not in keep:
            out.append(DataPoint(p.id, p.utterances, p.medication, dict(p.labels), {}))
        else:
            out.append(p)
    return out
