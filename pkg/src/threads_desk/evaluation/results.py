"""Result records written by the evaluation commands, and the TSV report."""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np


def summarize(task: str, scheme: str, folds: Sequence[dict], ci: dict | None = None) -> dict:
    """``{task, scheme, folds, mean, stderr | ci}``; ``ci`` is used for single-fold runs."""
    values = np.array([f["value"] for f in folds], dtype=np.float64)
    out = {"task": task, "scheme": scheme, "folds": list(folds), "mean": float(values.mean())}
    if len(values) > 1:
        out["stderr"] = float(values.std(ddof=1) / np.sqrt(len(values)))
    elif ci is not None:
        out["ci"] = ci
    return out


def dumps(result: dict) -> str:
    return json.dumps(result, indent=1, sort_keys=True) + "\n"


def report_tsv(results: Sequence[dict]) -> str:
    lines = ["task\tscheme\tmetric\tn_folds\tmean\tspread"]
    for r in results:
        metrics = sorted({f["metric"] for f in r["folds"]})
        if "stderr" in r:
            spread = f"stderr={r['stderr']:.6f}"
        elif "ci" in r:
            spread = f"ci95=[{r['ci']['lo95']:.6f},{r['ci']['hi95']:.6f}]"
        else:
            spread = ""
        lines.append(f"{r['task']}\t{r['scheme']}\t{','.join(metrics)}\t{len(r['folds'])}\t{r['mean']:.6f}\t{spread}")
    return "\n".join(lines) + "\n"
