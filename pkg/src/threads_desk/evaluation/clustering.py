"""K-means on embeddings and agreement between partitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score, mutual_info_score


@dataclass
class Clustering:
    labels: np.ndarray
    inertia: float


def kmeans(embeddings, k: int, seed: int = 0, restarts: int = 20) -> Clustering:
    """Lloyd iterations from k-means++ seeds; best inertia over ``restarts``."""
    X = np.asarray(embeddings, dtype=np.float64)
    if len(X) < k:
        raise ValueError(f"k-means with k={k} needs at least k points, got {len(X)}")
    km = KMeans(n_clusters=k, init="k-means++", n_init=restarts, algorithm="lloyd",
                random_state=seed).fit(X)
    return Clustering(km.labels_.astype(np.int64), float(km.inertia_))


def clustering_agreement(a, b) -> dict[str, float]:
    """Adjusted Rand index and mutual information (nats)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"partitions differ in length: {a.shape} vs {b.shape}")
    return {"ari": float(adjusted_rand_score(a, b)), "mi": float(mutual_info_score(a, b))}
