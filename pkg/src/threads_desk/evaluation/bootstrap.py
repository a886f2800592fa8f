"""Non-parametric bootstrap confidence intervals over test-set outputs."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..numerics import make_rng

MAX_RETRIES = 10


def bootstrap_ci(metric: Callable[..., float], *arrays, n: int = 100, seed: int = 0,
                 level: float = 0.95) -> dict[str, float]:
    """Resample rows of ``arrays`` jointly with replacement and recompute ``metric``.

    A resample on which the metric is undefined (raises ``ValueError``) is
    redrawn, at most ``MAX_RETRIES`` times per replicate.
    """
    arrays = [np.asarray(a) for a in arrays]
    size = len(arrays[0])
    if size < 2:
        raise ValueError("bootstrap needs at least 2 samples")
    if any(len(a) != size for a in arrays):
        raise ValueError("bootstrap arrays must be aligned")
    rng = make_rng(seed, 23)
    values = []
    for _ in range(n):
        for attempt in range(MAX_RETRIES + 1):
            idx = rng.integers(0, size, size=size)
            try:
                values.append(float(metric(*[a[idx] for a in arrays])))
                break
            except ValueError:
                if attempt == MAX_RETRIES:
                    raise ValueError(f"metric undefined on {MAX_RETRIES + 1} consecutive resamples") from None
    values = np.array(values)
    tail = 100 * (1 - level) / 2
    return {"mean": float(values.mean()), "lo95": float(np.percentile(values, tail)),
            "hi95": float(np.percentile(values, 100 - tail)), "n": n}
