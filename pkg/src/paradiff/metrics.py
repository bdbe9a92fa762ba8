"""Paraphrase evaluation metrics: BLEU, source BLEU, distinct-4, similarity.

All metrics are pure functions of their inputs returning scores in [0, 100].
The combined score subtracts source BLEU from a pluggable semantic-similarity
backend, so it rewards semantic fidelity while penalizing source copying.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from typing import Callable

from .errors import ValidationError

logger = logging.getLogger(__name__)

__all__ = [
    "bleu",
    "src_bleu",
    "distinct_n",
    "semantic_similarity",
    "ibscore",
    "register_similarity_backend",
    "similarity_backends",
]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: list[str], references: list[str], max_n: int = 4) -> float:
    """Corpus-level BLEU with brevity penalty.

    Smoothing: add one to numerator and denominator of every precision of
    order >= 2 (toy sentences are short enough to have empty 4-gram sets).
    """
    if not hypotheses or len(hypotheses) != len(references):
        raise ValidationError("need equal-length, non-empty hypothesis/reference lists")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h = hyp.split()
        r = ref.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            h_counts = _ngrams(h, n)
            r_counts = _ngrams(r, n)
            matches[n - 1] += sum((h_counts & r_counts).values())
            totals[n - 1] += sum(h_counts.values())
    log_prec = 0.0
    for n in range(1, max_n + 1):
        smooth = 1 if n > 1 else 0
        num = matches[n - 1] + smooth
        den = totals[n - 1] + smooth
        if num == 0 or den == 0:
            return 0.0
        log_prec += math.log(num / den) / max_n
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / max(1, hyp_len))
    return 100.0 * bp * math.exp(log_prec)


def src_bleu(hypotheses: list[str], sources: list[str]) -> float:
    """BLEU of the hypotheses against their own sources; high = duplication."""
    return bleu(hypotheses, sources)


def distinct_n(sample_groups: list[list[str]], n: int = 4) -> float:
    """Percentage of unique n-grams per group of samples, averaged over groups.

    Each group holds the k samples generated for one source. Sentences shorter
    than n contribute no n-grams and are skipped with a warning.
    """
    if not sample_groups:
        raise ValidationError("need at least one sample group")
    ratios = []
    for group in sample_groups:
        grams: Counter = Counter()
        for sent in group:
            tokens = sent.split()
            if len(tokens) < n:
                logger.warning("sentence shorter than %d tokens skipped: %r", n, sent)
                continue
            grams.update(_ngrams(tokens, n))
        total = sum(grams.values())
        ratios.append(100.0 * len(grams) / total if total else 100.0)
    return sum(ratios) / len(ratios)


def _token_f1(hypotheses: list[str], references: list[str]) -> float:
    """Self-contained token-overlap F score in [0, 100], averaged over pairs."""
    scores = []
    for hyp, ref in zip(hypotheses, references):
        h = Counter(hyp.split())
        r = Counter(ref.split())
        overlap = sum((h & r).values())
        if overlap == 0:
            scores.append(0.0)
            continue
        p = overlap / sum(h.values())
        rr = overlap / sum(r.values())
        scores.append(100.0 * 2 * p * rr / (p + rr))
    return sum(scores) / len(scores)


_SIMILARITY_BACKENDS: dict[str, Callable[[list[str], list[str]], float]] = {
    "token_f1": _token_f1,
}


def register_similarity_backend(
    name: str, fn: Callable[[list[str], list[str]], float]
) -> None:
    """Plug in an external embedding-based similarity; must return [0, 100]."""
    _SIMILARITY_BACKENDS[name] = fn


def similarity_backends() -> list[str]:
    return sorted(_SIMILARITY_BACKENDS)


def semantic_similarity(
    hypotheses: list[str], references: list[str], backend: str = "token_f1"
) -> float:
    if backend not in _SIMILARITY_BACKENDS:
        raise ValidationError(
            f"unknown similarity backend {backend!r}; have {similarity_backends()}"
        )
    if not hypotheses or len(hypotheses) != len(references):
        raise ValidationError("need equal-length, non-empty hypothesis/reference lists")
    return _SIMILARITY_BACKENDS[backend](hypotheses, references)


def ibscore(similarity: float, source_bleu: float) -> float:
    """Similarity minus source BLEU, exactly."""
    return similarity - source_bleu
