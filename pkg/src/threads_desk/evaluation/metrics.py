"""Classification and survival metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _binary_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = rankdata(scores)  # midranks credit ties 0.5
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(scores, labels) -> float:
    """Binary AUC, or the unweighted mean of one-vs-rest AUCs.

    ``scores`` is a vector (binary: score of class 1) or an n x k matrix of
    per-class scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        classes = np.unique(labels)
        if len(classes) != 2:
            raise ValueError(f"binary AUC needs exactly two classes, got {len(classes)}")
        return _binary_auc(scores, labels == classes[1])
    if scores.ndim == 2 and scores.shape[1] == 2:
        return _binary_auc(scores[:, 1], labels == 1)
    k = scores.shape[1]
    present = np.unique(labels)
    if len(present) < k:
        raise ValueError(f"one-vs-rest AUC needs every class present ({len(present)} of {k})")
    return float(np.mean([_binary_auc(scores[:, c], labels == c) for c in range(k)]))


def balanced_accuracy(pred, labels) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("balanced accuracy of an empty set")
    recalls = [np.mean(pred[labels == c] == c) for c in np.unique(labels)]
    return float(np.mean(recalls))


def confusion(pred, labels, k: int) -> np.ndarray:
    """Integer counts; rows are true labels, columns predictions."""
    m = np.zeros((k, k), dtype=np.int64)
    np.add.at(m, (np.asarray(labels, dtype=int), np.asarray(pred, dtype=int)), 1)
    return m


def quadratic_weighted_kappa(pred, labels, k: int) -> float:
    if k < 2:
        raise ValueError("kappa needs k >= 2 ordinal classes")
    observed = confusion(pred, labels, k)
    n = int(observed.sum())
    i, j = np.indices((k, k))
    w = (i - j) ** 2
    # integer numerator and denominator, so the single division is exactly rounded
    disagree = n * int((w * observed).sum())
    chance = int((w * np.outer(observed.sum(axis=1), observed.sum(axis=0))).sum())
    if chance == 0:
        raise ValueError("kappa undefined: expected weighted disagreement is zero")
    return (chance - disagree) / chance


def concordance_index(risks, times, events) -> float:
    """Harrell's C: a pair is comparable when the earlier time is an observed event.

    Higher risk should go with the earlier event; ties in risk count 0.5.
    """
    r = np.asarray(risks, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events).astype(bool)
    comparable = (t[:, None] < t[None, :]) & e[:, None]
    n = comparable.sum()
    if n == 0:
        raise ValueError("no comparable pairs")
    score = np.where(r[:, None] > r[None, :], 1.0, np.where(r[:, None] == r[None, :], 0.5, 0.0))
    return float((score * comparable).sum() / n)
