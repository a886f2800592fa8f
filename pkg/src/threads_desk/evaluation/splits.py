"""Label-stratified, patient-grouped train/test splits and few-shot subsets."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..numerics import make_rng

SCHEMES = ("kfold", "montecarlo", "official-single")
FEWSHOT_K = (1, 2, 4, 8, 16, 32)
DEFAULT_FOLDS = {"kfold": 5, "montecarlo": 50}


class InfeasibleSplit(ValueError):
    pass


@dataclass
class SplitSpec:
    scheme: str = "kfold"
    folds: int | None = None
    test_fraction: float = 0.2
    stratify: bool = True
    group_by_patient: bool = True
    fewshot_k: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown split scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == "official-single":
            self.folds = 1
        elif self.folds is None:
            self.folds = DEFAULT_FOLDS[self.scheme]
        if self.fewshot_k is not None and self.fewshot_k < 1:
            raise ValueError("fewshot_k must be >= 1")
        if self.folds < 1:
            raise ValueError("folds must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass
class Split:
    train: list[str]
    test: list[str]
    name: str = ""
    meta: dict = field(default_factory=dict)


def _groups(ids, labels, patients, spec: SplitSpec):
    members: dict[str, list[int]] = defaultdict(list)
    for i, pid in enumerate(patients if (spec.group_by_patient and patients is not None) else ids):
        members[str(pid)].append(i)
    strata: dict[int, list[str]] = defaultdict(list)
    for g, idx in members.items():
        if spec.stratify:
            counts = Counter(int(labels[i]) for i in idx)
            top = max(counts.values())
            stratum = min(c for c, v in counts.items() if v == top)
        else:
            stratum = 0
        strata[stratum].append(g)
    return members, strata


def _order(groups: list[str], members, rng) -> list[str]:
    groups = sorted(groups)
    shuffled = [groups[i] for i in rng.permutation(len(groups))]
    return sorted(shuffled, key=lambda g: -len(members[g]))


def make_splits(ids: Sequence[str], labels, spec: SplitSpec, patients: Sequence[str] | None = None) -> list[Split]:
    ids = [str(i) for i in ids]
    labels = np.asarray(labels)
    if len(ids) != len(labels) or (patients is not None and len(patients) != len(ids)):
        raise ValueError("ids, labels and patients must be aligned")
    members, strata = _groups(ids, labels, patients, spec)
    splits = []
    if spec.scheme == "kfold":
        fold_of: dict[str, int] = {}
        for stratum in sorted(strata):
            groups = strata[stratum]
            if len(groups) < spec.folds:
                raise InfeasibleSplit(
                    f"class {stratum} has {len(groups)} patient groups, fewer than {spec.folds} folds")
            load = np.zeros(spec.folds)
            for g in _order(groups, members, make_rng(spec.seed, 11, stratum)):
                f = int(np.argmin(load))
                fold_of[g] = f
                load[f] += len(members[g])
        for f in range(spec.folds):
            test = sorted(i for g, fo in fold_of.items() if fo == f for i in members[g])
            splits.append(_make(ids, test, f"fold{f}"))
    else:
        for r in range(spec.folds):
            rng = make_rng(spec.seed, 13, r)
            test = []
            for stratum in sorted(strata):
                groups = strata[stratum]
                if len(groups) < 2:
                    raise InfeasibleSplit(f"class {stratum} needs >= 2 patient groups for a held-out split")
                n_items = sum(len(members[g]) for g in groups)
                quota = max(1, int(round(spec.test_fraction * n_items)))
                taken = 0
                for g in _order(groups, members, rng)[::-1]:
                    if taken >= quota:
                        break
                    test.extend(members[g])
                    taken += len(members[g])
            splits.append(_make(ids, sorted(test), f"{spec.scheme}{r}"))
    for s in splits:
        if not s.train or not s.test:
            raise InfeasibleSplit(f"split {s.name} has an empty side")
    if spec.fewshot_k is not None:
        splits = make_fewshot(splits, dict(zip(ids, labels)), spec.fewshot_k, spec.seed)
    return splits


def _make(ids, test_idx, name) -> Split:
    test_set = set(test_idx)
    return Split([ids[i] for i in range(len(ids)) if i not in test_set], [ids[i] for i in test_idx], name)


def make_fewshot(splits: Sequence[Split], labels_by_id: dict, k: int, seed: int = 0,
                 repeats: int | None = None) -> list[Split]:
    """Keep exactly ``k`` training items per class in each split; tests are untouched.

    With a single parent split and ``repeats``, that many independent draws are made.
    """
    if k < 1:
        raise ValueError("few-shot k must be >= 1")
    parents = list(splits)
    draws = repeats if (repeats and len(parents) == 1) else 1
    out = []
    for f, parent in enumerate(parents):
        by_class: dict[int, list[str]] = defaultdict(list)
        for i in parent.train:
            by_class[int(labels_by_id[i])].append(i)
        for r in range(draws):
            rng = make_rng(seed, 17, f, r, k)
            train = []
            for c in sorted(by_class):
                pool = by_class[c]
                if len(pool) < k:
                    raise InfeasibleSplit(f"{parent.name}: class {c} has {len(pool)} training items, k={k}")
                train.extend(pool[j] for j in sorted(rng.choice(len(pool), size=k, replace=False)))
            name = f"{parent.name}-k{k}" + (f"-r{r}" if draws > 1 else "")
            out.append(Split(train, list(parent.test), name, {"k": k, "parent": parent.name}))
    return out


def splits_to_json(splits: Sequence[Split]) -> str:
    return json.dumps([asdict(s) for s in splits], indent=1, sort_keys=True)


def splits_from_json(text: str) -> list[Split]:
    raw = json.loads(text)
    if not isinstance(raw, list):
        raise ValueError("splits file must hold a JSON list")
    out = []
    for i, s in enumerate(raw):
        for key in ("train", "test"):
            if key not in s:
                raise ValueError(f"split {i}: missing field {key!r}")
        out.append(Split(list(s["train"]), list(s["test"]), s.get("name", f"split{i}"), s.get("meta", {})))
    return out
