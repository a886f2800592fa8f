"""Molecular prompting: classify or risk-score slides by distance to molecular prototypes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PromptSet:
    prototypes: np.ndarray  # one row per prompt
    names: tuple            # class index per row, or ("low", "high") for survival

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


def l2_normalize(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X / np.maximum(np.linalg.norm(X, axis=-1, keepdims=True), 1e-12)


def build_prompts(embeddings, labels, n_classes: int | None = None) -> PromptSet:
    """Per-class mean of (already encoded) molecular embeddings."""
    E = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    k = n_classes if n_classes is not None else int(labels.max()) + 1
    rows = []
    for c in range(k):
        members = E[labels == c]
        if len(members) == 0:
            raise ValueError(f"class {c} has no support profiles")
        rows.append(members.mean(axis=0))
    return PromptSet(np.stack(rows), tuple(range(k)))


def survival_groups(times, events) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the longest- and shortest-surviving quarter of uncensored patients.

    The group size is ``max(1, floor(n_uncensored / 4))``; patients tied with the
    boundary time are included.
    """
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events).astype(bool)
    unc = np.flatnonzero(e)
    if len(unc) < 4:
        raise ValueError(f"survival prompts need >= 4 uncensored patients, got {len(unc)}")
    q = max(1, len(unc) // 4)
    sorted_t = np.sort(t[unc])
    low = unc[t[unc] >= sorted_t[-q]]
    high = unc[t[unc] <= sorted_t[q - 1]]
    return low, high


def build_survival_prompts(embeddings, times, events) -> PromptSet:
    E = np.asarray(embeddings, dtype=np.float64)
    low, high = survival_groups(times, events)
    return PromptSet(np.stack([E[low].mean(axis=0), E[high].mean(axis=0)]), ("low", "high"))


def prompt_classify(query, prompts: PromptSet):
    """Name of the nearest prompt (L2); ties go to the earliest prompt."""
    Q = np.asarray(query, dtype=np.float64)
    if len(prompts.names) < 2:
        raise ValueError("need at least two prompts")
    d = np.linalg.norm(np.atleast_2d(Q)[:, None, :] - prompts.prototypes[None], axis=-1)
    pred = np.array([prompts.names[i] for i in np.argmin(d, axis=1)])
    return pred[0] if Q.ndim == 1 else pred


def prompt_risk_score(query, prompts: PromptSet):
    """Distance to the high-risk prompt minus distance to the low-risk prompt.

    Taken as written: a query sitting on the high-risk prompt gets the most
    negative score.
    """
    if tuple(prompts.names) != ("low", "high"):
        raise ValueError("risk scoring needs a survival prompt set")
    Q = np.asarray(query, dtype=np.float64)
    low, high = prompts.prototypes
    score = np.linalg.norm(Q - high, axis=-1) - np.linalg.norm(Q - low, axis=-1)
    return float(score) if np.ndim(score) == 0 else score
