"""Phrase-based extraction baseline: per-class lexicons plus longest match."""

from __future__ import annotations

from .data import ATTRIBUTES, CLASSES

__all__ = ["default_lexicon", "load_lexicon", "phrase_extract"]

# class -> phrase strings; classes absent from the published lexicon
# (Daily, Inhaler, Other, None) map to empty lists
_DEFAULT_PHRASES = {
    "frequency": {
        "Every morning": ["everyday in the morning", "every morning", "morning"],
        "At Bedtime": [
            "everyday before sleeping",
            "everyday after dinner",
            "every night",
            "after dinner",
            "at bedtime",
            "before sleeping",
        ],
        "Twice a day": [
            "twice a day",
            "2 times a day",
            "two times a day",
            "2 times per day",
            "two times per day",
        ],
        "Three times a day": ["3 times a day", "3 times per day", "3 times every day"],
        "Every six hours": ["every 6 hours", "every six hours"],
        "Every week": ["every week", "weekly", "once a week"],
        "Twice a week": [
            "twice a week",
            "two times a week",
            "2 times a week",
            "twice per week",
            "two times per week",
            "2 times per week",
        ],
        "Three times a week": ["3 times a week", "3 times per week"],
        "Every month": ["every month", "monthly", "once a month"],
    },
    "route": {
        "Pill": ["tablet", "pill", "capsule", "mg"],
        "Injection": ["pen", "shot", "injector", "injection", "inject"],
        "Topical cream": ["cream", "gel", "ointment", "lotion"],
        "Nasal spray": ["spray", "nasal"],
        "Medicated patch": ["patch"],
        "Ophthalmic solution": ["ophthalmic", "drops", "drop"],
        "Oral solution": ["oral solution"],
    },
    "change": {
        "Take": ["take", "start", "put you on", "continue"],
        "Stop": ["stop", "off"],
        "Increase": ["increase"],
        "Decrease": ["reduce", "decrease"],
    },
}


def default_lexicon() -> dict[str, dict[str, list[list[str]]]]:
    """attribute -> class -> tokenized lowercase phrases, in class order."""
    lex: dict[str, dict[str, list[list[str]]]] = {}
    for attr in ATTRIBUTES:
        lex[attr] = {}
        for cls in CLASSES[attr]:
            phrases = _DEFAULT_PHRASES[attr].get(cls, [])
            lex[attr][cls] = [p.split() for p in phrases]
    return lex


def load_lexicon(path) -> dict[str, dict[str, list[list[str]]]]:
    """Read ``attribute<TAB>class<TAB>phrase`` lines into a lexicon."""
    lex: dict[str, dict[str, list[list[str]]]] = {a: {c: [] for c in CLASSES[a]} for a in ATTRIBUTES}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected attribute<TAB>class<TAB>phrase")
            attr, cls, phrase = parts
            if attr not in ATTRIBUTES:
                raise ValueError(f"{path}:{lineno}: unknown attribute {attr!r}")
            if cls not in CLASSES[attr]:
                raise ValueError(f"{path}:{lineno}: unknown {attr} class {cls!r}")
            if not phrase.strip():
                raise ValueError(f"{path}:{lineno}: empty phrase")
            lex[attr][cls].append(phrase.lower().split())
    return lex


def phrase_extract(tokens, attribute: str, lexicon=None):
    """Longest lexicon match for one attribute.

    Matching is whole-token on lowercased text.  Ties break to the earliest
    occurrence, then to the class listed first in the lexicon.  Returns
    (mask, matched class or None); the mask is all zeros when nothing
    matches.
    """
    if lexicon is None:
        lexicon = default_lexicon()
    lowered = [t.lower() for t in tokens]
    n = len(lowered)
    best = None  # (length, start, class_rank, cls)
    for rank, (cls, phrases) in enumerate(lexicon[attribute].items()):
        for phrase in phrases:
            k = len(phrase)
            if k == 0 or k > n:
                continue
            for start in range(n - k + 1):
                if lowered[start : start + k] == phrase:
                    cand = (-k, start, rank)
                    if best is None or cand < best[:3]:
                        best = (-k, start, rank, cls)
    mask = [0] * n
    if best is None:
        return mask, None
    length, start, _, cls = -best[0], best[1], best[2], best[3]
    for i in range(start, start + length):
        mask[i] = 1
    return mask, cls
