"""Paraphrase corpus handling and the templated toy-question generator.

The toy grammar produces question-style paraphrase pairs over a small closed
vocabulary, in two template families ("A" and "B") that share all slot-filler
words but no templates, so family B can serve as an unseen target domain.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

__all__ = [
    "ParaphraseRecord",
    "CorpusError",
    "load_corpus",
    "save_corpus",
    "make_toy_corpus",
    "toy_vocabulary",
]


class CorpusError(ValueError):
    """Raised for malformed corpus files; message names the offending line."""


@dataclass(frozen=True)
class ParaphraseRecord:
    source: str
    target: str
    domain: str | None = None

    def __post_init__(self):
        if not self.source or not self.target:
            raise CorpusError("source and target must both be non-empty")


def load_corpus(path: str | Path) -> list[ParaphraseRecord]:
    """Parse a JSONL corpus, one {"source", "target"[, "domain"]} object per line."""
    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            for key in ("source", "target"):
                if key not in obj:
                    raise CorpusError(f"{path}:{lineno}: missing key {key!r}")
            try:
                records.append(
                    ParaphraseRecord(obj["source"], obj["target"], obj.get("domain"))
                )
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise CorpusError(f"{path}: empty corpus")
    return records


def save_corpus(records: list[ParaphraseRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            obj = {"source": rec.source, "target": rec.target}
            if rec.domain is not None:
                obj["domain"] = rec.domain
            fh.write(json.dumps(obj) + "\n")


# Slot fillers shared by both template families.
_VERBS = [
    "improve", "learn", "practice", "master", "study", "teach",
    "start", "enjoy", "understand", "organize", "finish", "plan",
]

_NOUNS = [
    "tennis", "chess", "cooking", "painting", "coding", "guitar",
    "piano", "writing", "swimming", "photography", "gardening", "singing",
    "dancing", "baking", "drawing", "skiing", "yoga", "soccer",
    "violin", "pottery", "climbing", "origami", "calligraphy", "juggling",
    "surfing", "knitting", "archery", "fencing", "rowing", "sculpting",
]

# Family A: casual question <-> "best way" question.
_FAMILY_A_SOURCES = [
    "how can i {v} {n} ?",
    "how do i {v} {n} ?",
]
_FAMILY_A_TARGETS = [
    "what is the best way to {v} {n} ?",
    "what is a good way to {v} {n} ?",
    "how should a beginner {v} {n} ?",
    "any tips to {v} {n} quickly ?",
]

# Family B: polite request <-> explanation request. No template overlap with A.
_FAMILY_B_SOURCES = [
    "please tell me how to {v} {n}",
    "i want to {v} {n} , help me out",
]
_FAMILY_B_TARGETS = [
    "could you explain how to {v} {n} properly",
    "give me advice about how to {v} {n}",
    "share some pointers for people trying to {v} {n}",
]

_FAMILIES = {
    "A": (_FAMILY_A_SOURCES, _FAMILY_A_TARGETS),
    "B": (_FAMILY_B_SOURCES, _FAMILY_B_TARGETS),
}


def toy_vocabulary() -> list[str]:
    """All words the toy grammar can emit, sorted."""
    words = set()
    for sources, targets in _FAMILIES.values():
        for tpl in sources + targets:
            words.update(tpl.format(v="", n="").split())
    words.update(_VERBS)
    words.update(_NOUNS)
    return sorted(words)


def make_toy_corpus(seed: int, n: int, family: str = "A") -> list[ParaphraseRecord]:
    """Generate ``n`` templated paraphrase pairs; deterministic given ``seed``.

    Each pair fills one (verb, noun) slot combination into a random source
    template and a random target template of the requested family, so source
    and target always share their content words.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if family not in _FAMILIES:
        raise ValueError(f"family must be one of {sorted(_FAMILIES)}, got {family!r}")
    sources, targets = _FAMILIES[family]
    rng = random.Random(seed)
    records = []
    for _ in range(n):
        v = rng.choice(_VERBS)
        noun = rng.choice(_NOUNS)
        src = rng.choice(sources).format(v=v, n=noun)
        tgt = rng.choice(targets).format(v=v, n=noun)
        records.append(ParaphraseRecord(src, tgt, domain=family))
    return records


def family_templates(family: str) -> tuple[list[str], list[str]]:
    """Raw (source, target) template strings of a family, for disjointness checks."""
    sources, targets = _FAMILIES[family]
    return list(sources), list(targets)
