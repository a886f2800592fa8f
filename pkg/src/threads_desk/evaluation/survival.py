"""Kaplan-Meier curves and the two-group log-rank test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2


@dataclass
class KaplanMeier:
    times: np.ndarray      # distinct event times
    survival: np.ndarray   # S(t) just after each event time

    def __call__(self, t):
        """Right-continuous step function evaluated at ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right")
        s = np.concatenate([[1.0], self.survival])[idx]
        return float(s) if np.ndim(s) == 0 else s


def kaplan_meier(times, events) -> KaplanMeier:
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events).astype(bool)
    if len(t) == 0:
        raise ValueError("Kaplan-Meier of an empty group")
    uniq = np.unique(t[e])
    surv = []
    s = 1.0
    for u in uniq:
        at_risk = np.sum(t >= u)
        deaths = np.sum((t == u) & e)
        s *= 1.0 - deaths / at_risk
        surv.append(s)
    return KaplanMeier(uniq, np.array(surv))


def logrank(times_a, events_a, times_b, events_b) -> dict[str, float]:
    ta, ea = np.asarray(times_a, dtype=np.float64), np.asarray(events_a).astype(bool)
    tb, eb = np.asarray(times_b, dtype=np.float64), np.asarray(events_b).astype(bool)
    if len(ta) == 0 or len(tb) == 0:
        raise ValueError("log-rank needs two nonempty groups")
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    observed = expected = var = 0.0
    for u in np.unique(t[e]):
        n_a = np.sum(ta >= u)
        n = np.sum(t >= u)
        d_a = np.sum((ta == u) & ea)
        d = np.sum((t == u) & e)
        observed += d_a
        expected += d * n_a / n
        if n > 1:
            var += d * (n_a / n) * (1 - n_a / n) * (n - d) / (n - 1)
    stat = 0.0 if var == 0 else (observed - expected) ** 2 / var
    return {"chi2": float(stat), "p": float(chi2.sf(stat, 1))}
