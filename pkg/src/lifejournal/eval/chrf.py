"""Character n-gram F-score (chrF).

Whitespace is removed before extracting character n-grams of orders 1..6.
Precision and recall are averaged over the orders for which both texts have
n-grams, and combined with beta = 2 (recall weighted higher).
"""

from __future__ import annotations

from collections import Counter

from lifejournal.errors import EmptyText

CHAR_ORDER = 6
BETA = 2.0


def _ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def _strip(text: str) -> str:
    return "".join(text.split())


def chrf(candidate: str, reference: str, order: int = CHAR_ORDER, beta: float = BETA) -> float:
    """chrF in [0, 1]; identical texts score 1."""
    hyp, ref = _strip(candidate), _strip(reference)
    if not hyp or not ref:
        raise EmptyText("chrF needs non-empty candidate and reference texts")
    precisions, recalls = [], []
    for n in range(1, order + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        h_total, r_total = sum(h.values()), sum(r.values())
        if h_total == 0 or r_total == 0:
            continue
        match = sum((h & r).values())
        precisions.append(match / h_total)
        recalls.append(match / r_total)
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p == 0.0 and r == 0.0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * p * r / (b2 * p + r)


def best_chrf(candidate: str, references: list[str]) -> float:
    """Highest chrF over the available references."""
    if not references:
        raise EmptyText("no reference texts")
    return max(chrf(candidate, ref) for ref in references)
