"""Nearest-neighbour retrieval scored by mean average precision at k."""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def neighbours(queries, references, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest references per query (L2; ties by reference index)."""
    Q = np.asarray(queries, dtype=np.float64)
    R = np.asarray(references, dtype=np.float64)
    if len(R) == 0:
        raise ValueError("empty reference set")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(R) < k:
        raise ValueError(f"reference set has {len(R)} items, fewer than k={k}")
    out = np.empty((len(Q), k), dtype=np.int64)
    for i, q in enumerate(Q):
        d2 = ((R - q) ** 2).sum(axis=1)
        out[i] = np.argsort(d2, kind="stable")[:k]
    return out


def _ap_exact(relevant) -> Fraction:
    # binary relevance makes the score rational; exact sums round once at the end
    hits, total = 0, Fraction(0)
    for j, r in enumerate(relevant, start=1):
        if r:
            hits += 1
            total += Fraction(hits, j)
    return total / len(relevant)


def average_precision_at_k(relevant) -> float:
    """``(1/k) * sum_j rel_j * hits_up_to_j / j`` for one query's relevance pattern."""
    return float(_ap_exact(relevant))


def map_at_k(queries, query_labels, references, reference_labels, k: int) -> float:
    idx = neighbours(queries, references, k)
    ref_labels = np.asarray(reference_labels)
    q_labels = np.asarray(query_labels)
    rel = ref_labels[idx] == q_labels[:, None]
    return float(sum((_ap_exact(r) for r in rel), Fraction(0)) / len(rel))
