"""Fold-level evaluation runs over a set of splits, producing result records."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .bootstrap import bootstrap_ci
from .clustering import clustering_agreement, kmeans
from .linear import fit_coxnet, fit_logistic_probe
from .metrics import balanced_accuracy, concordance_index, macro_auc, quadratic_weighted_kappa
from .prompting import build_prompts, build_survival_prompts, l2_normalize, prompt_classify, prompt_risk_score
from .results import summarize
from .retrieval import map_at_k
from .splits import Split

CLASSIFICATION_METRICS = ("auto", "auc", "balanced_accuracy", "kappa")


def _index(ids: Sequence[str]) -> dict[str, int]:
    return {str(i): n for n, i in enumerate(ids)}


def _rows(index, names) -> np.ndarray:
    try:
        return np.array([index[n] for n in names], dtype=np.int64)
    except KeyError as exc:
        raise KeyError(f"split refers to unknown id {exc.args[0]!r}") from None


def _classification_score(metric: str, n_classes: int, proba, pred, y) -> tuple[str, float]:
    if metric == "auto":
        metric = "auc" if n_classes == 2 else "balanced_accuracy"
    if metric == "auc":
        return metric, macro_auc(proba if n_classes > 2 else proba[:, 1], y)
    if metric == "balanced_accuracy":
        return metric, balanced_accuracy(pred, y)
    if metric == "kappa":
        return metric, quadratic_weighted_kappa(pred, y, n_classes)
    raise ValueError(f"unknown metric {metric!r}")


def _single_fold_ci(metric_fn, arrays, n_boot: int, seed: int):
    return bootstrap_ci(metric_fn, *arrays, n=n_boot, seed=seed)


def run_probe(embeddings, labels, ids, splits: Sequence[Split], task: str = "probe", scheme: str = "",
              metric: str = "auto", C: float = 0.5, max_iter: int = 10_000, n_boot: int = 100,
              seed: int = 0) -> dict:
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = int(y.max()) + 1
    index = _index(ids)
    folds, last = [], None
    for s in splits:
        tr, te = _rows(index, s.train), _rows(index, s.test)
        probe = fit_logistic_probe(X[tr], y[tr], C=C, max_iter=max_iter)
        proba = np.zeros((len(te), n_classes))
        proba[:, probe.classes] = probe.predict_proba(X[te])
        pred = np.argmax(proba, axis=1)
        name, value = _classification_score(metric, n_classes, proba, pred, y[te])
        folds.append({"fold": s.name, "metric": name, "value": value})
        last = (name, proba, pred, y[te])
    ci = None
    if len(splits) == 1:
        name, proba, pred, yt = last
        ci = _single_fold_ci(lambda p, q, t: _classification_score(name, n_classes, p, q, t)[1],
                             (proba, pred, yt), n_boot, seed)
    return summarize(task, scheme, folds, ci)


def run_survival(embeddings, times, events, ids, splits: Sequence[Split], alpha: float = 0.07,
                 task: str = "survival", scheme: str = "", n_boot: int = 100, seed: int = 0) -> dict:
    X = np.asarray(embeddings, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events, dtype=np.int64)
    index = _index(ids)
    folds, last = [], None
    for s in splits:
        tr, te = _rows(index, s.train), _rows(index, s.test)
        model = fit_coxnet(X[tr], t[tr], e[tr], alpha=alpha)
        risk = model.risk(X[te])
        folds.append({"fold": s.name, "metric": "c_index", "value": concordance_index(risk, t[te], e[te])})
        last = (risk, t[te], e[te])
    ci = _single_fold_ci(concordance_index, last, n_boot, seed) if len(splits) == 1 else None
    return summarize(task, scheme, folds, ci)


def run_retrieval(embeddings, labels, ids, splits: Sequence[Split], ks=(1, 5, 10), task: str = "retrieval",
                  scheme: str = "") -> dict:
    X = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    index = _index(ids)
    folds = []
    for s in splits:
        tr, te = _rows(index, s.train), _rows(index, s.test)
        for k in ks:
            if k <= len(tr):
                folds.append({"fold": s.name, "metric": f"map@{k}",
                              "value": map_at_k(X[te], y[te], X[tr], y[tr], k)})
    out = summarize(task, scheme, folds)
    out["by_k"] = {f"map@{k}": float(np.mean([f["value"] for f in folds if f["metric"] == f"map@{k}"]))
                   for k in ks if any(f["metric"] == f"map@{k}" for f in folds)}
    return out


def run_prompt_classification(slide_emb, mol_emb, labels, ids, splits: Sequence[Split], normalize: bool = True,
                              metric: str = "balanced_accuracy", task: str = "prompt", scheme: str = "") -> dict:
    """Prompts from training-fold molecular embeddings; queries are test-fold slides."""
    S = np.asarray(slide_emb, dtype=np.float64)
    M = np.asarray(mol_emb, dtype=np.float64)
    if normalize:
        S, M = l2_normalize(S), l2_normalize(M)
    y = np.asarray(labels, dtype=np.int64)
    n_classes = int(y.max()) + 1
    index = _index(ids)
    folds = []
    for s in splits:
        tr, te = _rows(index, s.train), _rows(index, s.test)
        prompts = build_prompts(M[tr], y[tr], n_classes)
        pred = prompt_classify(S[te], prompts)
        value = balanced_accuracy(pred, y[te]) if metric == "balanced_accuracy" else float(np.mean(pred == y[te]))
        folds.append({"fold": s.name, "metric": metric, "value": value})
    return summarize(task, scheme, folds)


def run_prompt_survival(slide_emb, mol_emb, times, events, ids, splits: Sequence[Split], normalize: bool = True,
                        task: str = "prompt_survival", scheme: str = "") -> dict:
    S = np.asarray(slide_emb, dtype=np.float64)
    M = np.asarray(mol_emb, dtype=np.float64)
    if normalize:
        S, M = l2_normalize(S), l2_normalize(M)
    t = np.asarray(times, dtype=np.float64)
    e = np.asarray(events, dtype=np.int64)
    index = _index(ids)
    folds = []
    for s in splits:
        tr, te = _rows(index, s.train), _rows(index, s.test)
        prompts = build_survival_prompts(M[tr], t[tr], e[tr])
        score = prompt_risk_score(S[te], prompts)
        folds.append({"fold": s.name, "metric": "c_index", "value": concordance_index(score, t[te], e[te])})
    return summarize(task, scheme, folds)


def run_clustering(embeddings, labels, k: int | None = None, seed: int = 0, task: str = "cluster") -> dict:
    y = np.asarray(labels)
    k = k or len(np.unique(y))
    clusters = kmeans(embeddings, k, seed)
    agree = clustering_agreement(y, clusters.labels)
    folds = [{"fold": "all", "metric": "ari", "value": agree["ari"]},
             {"fold": "all", "metric": "mi", "value": agree["mi"]}]
    out = {"task": task, "scheme": "all", "folds": folds, "mean": agree["ari"], "k": k,
           "inertia": clusters.inertia, "ari": agree["ari"], "mi": agree["mi"]}
    return out
