"""``threads-desk`` command line: data generation, pretraining, embedding and evaluation."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import MANIFEST, load_dataset, save_dataset
from .evaluation import tasks
from .evaluation.results import dumps, report_tsv
from .evaluation.splits import InfeasibleSplit, make_fewshot, make_splits, splits_from_json, splits_to_json
from .model import ModelState, encode_molecular, init_model
from .slide_encoder import encode_many
from .store import StoreFormatError, atomic_write_text, read_store, write_store
from .synthetic import config_dict, generate_dataset
from .train import log_lines, pretrain_fit

log = logging.getLogger("threads_desk")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class ValidationError(ValueError):
    """Bad user input: reported with exit code 2."""


VALIDATION_ERRORS = (ValidationError, ConfigError, StoreFormatError, FileNotFoundError, InfeasibleSplit)


# ------------------------------------------------------------ helpers


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or (),
                       getattr(args, "seed", None))


def _write_json(path, obj) -> None:
    text = obj if isinstance(obj, str) else dumps(obj)
    atomic_write_text(path, text)


def _load_embeddings(path, need: str | None = None):
    X, meta = read_store(path)
    if need == "labels" and meta.get("labels") is None:
        raise ValidationError(f"{path}: sidecar field 'labels' missing (labels missing)")
    if need == "survival" and meta.get("survival") is None:
        raise ValidationError(f"{path}: sidecar field 'survival' missing")
    return X.astype(np.float64), meta


def _survival_arrays(meta, path):
    surv = meta["survival"]
    try:
        times = np.array([s["time"] for s in surv], dtype=np.float64)
        events = np.array([s["event"] for s in surv], dtype=np.int64)
    except (KeyError, TypeError):
        raise ValidationError(f"{path}: sidecar field 'survival' must hold {{time, event}} records") from None
    if np.any(times <= 0) or not np.all(np.isin(events, (0, 1))):
        raise ValidationError(f"{path}: survival times must be positive and events 0/1")
    return times, events


def _splits(args, cfg: RunConfig, ids, labels, patients):
    if args.splits:
        p = Path(args.splits)
        if not p.exists():
            raise FileNotFoundError(f"{p}: splits file not found")
        try:
            splits = splits_from_json(p.read_text())
        except (ValueError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{p}: {exc}") from None
        known = set(ids)
        for s in splits:
            missing = [i for i in (*s.train, *s.test) if i not in known]
            if missing:
                raise ValidationError(f"{p}: split {s.name!r} refers to unknown id {missing[0]!r}")
        return splits, "file"
    spec = cfg.splits if args.spec is None else replace(cfg.splits, scheme=args.spec, folds=None)
    if labels is None:
        labels = np.zeros(len(ids), dtype=np.int64)
        spec = replace(spec, stratify=False)
    return make_splits(ids, labels, spec, patients), spec.scheme


def _add_common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
    if seed:
        p.add_argument("--seed", type=int, help="seed for every seeded component")


def _add_eval(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", required=True, help="embedding store (.thds)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--splits", help="splits JSON file")
    group.add_argument("--spec", choices=("kfold", "montecarlo", "official-single"),
                       help="split scheme generated on the fly (default from config)")
    p.add_argument("--out", required=True, help="result JSON")
    _add_common(p)


# ------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    samples = generate_dataset(cfg.generator)
    save_dataset(samples, args.out, extra=config_dict(cfg.generator))
    log.info("wrote %d samples to %s", len(samples), args.out)
    return EXIT_OK


def _model_for(cfg: RunConfig, manifest: dict) -> ModelState:
    slide = cfg.slide
    if slide.input_dim != manifest["patch_dim"]:
        raise ValidationError(f"slide.input_dim={slide.input_dim} but the dataset has patch_dim={manifest['patch_dim']}")
    if manifest["mode"] == "genomic":
        g = cfg.genomic
        if g.n_genes != manifest["n_genes"]:
            raise ValidationError(f"genomic.n_genes={g.n_genes} but the dataset has n_genes={manifest['n_genes']}")
        return init_model(slide, genomic_cfg=g, seed=cfg.seed)
    t = cfg.transcriptomic
    if t.vocab_size < manifest["vocab_size"]:
        raise ValidationError(f"transcriptomic.vocab_size={t.vocab_size} is below the dataset's {manifest['vocab_size']}")
    return init_model(slide, transcriptomic_cfg=t, seed=cfg.seed)


def _manifest(data_dir) -> dict:
    p = Path(data_dir) / MANIFEST
    if not p.exists():
        raise FileNotFoundError(f"{p}: dataset manifest missing")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}: {exc}") from None


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    manifest = _manifest(args.data)
    samples = load_dataset(args.data)
    state = _model_for(cfg, manifest)
    out = Path(args.out_checkpoints)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": cfg.seed, "train": cfg.to_dict()["train"]}
    state.save(out / "model_init.npz", {**meta, "epoch": 0})
    result = pretrain_fit(samples, state, cfg.train)
    for ck in result.checkpoints:
        ck.state.save(out / f"checkpoint_e{ck.epoch:03d}.npz", {**meta, "epoch": ck.epoch, "rankme": ck.rankme})
    best = result.checkpoints[-1] if result.checkpoints else None
    if best is None:
        result.state.save(out / "best.npz", {**meta, "epoch": cfg.train.max_epochs, "rankme": None})
    else:
        best.state.save(out / "best.npz", {**meta, "epoch": best.epoch, "rankme": best.rankme})
    result.state.save(out / "final.npz", {**meta, "epoch": cfg.train.max_epochs})
    atomic_write_text(out / "train_log.jsonl", log_lines(result.log))
    atomic_write_text(out / "config.json", cfg.dumps())
    return EXIT_OK


def cmd_embed(args) -> int:
    p = Path(args.checkpoint)
    if not p.exists():
        raise FileNotFoundError(f"{p}: checkpoint not found")
    state = ModelState.load(p)
    manifest = _manifest(args.data)
    if state.slide_cfg.input_dim != manifest["patch_dim"]:
        raise ValidationError(f"{p}: encoder expects {state.slide_cfg.input_dim}-d patches, "
                              f"dataset has {manifest['patch_dim']}")
    samples = load_dataset(args.data)
    sidecar = {
        "ids": [s.id for s in samples],
        "labels": [int(s.label) for s in samples],
        "patients": [s.patient or s.id for s in samples],
    }
    if all(s.survival is not None for s in samples):
        sidecar["survival"] = [{"time": s.survival.time, "event": s.survival.event} for s in samples]
    write_store(args.out, encode_many([s.bag for s in samples], state.slide, state.slide_cfg), sidecar)
    if args.molecular_out:
        M = np.stack([encode_molecular(s.molecular, state) for s in samples])
        write_store(args.molecular_out, M, sidecar)
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = _config(args)
    X, meta = _load_embeddings(args.embeddings, "labels")
    splits, scheme = _splits(args, cfg, meta["ids"], meta["labels"], meta.get("patients"))
    e = cfg.eval
    res = tasks.run_probe(X, meta["labels"], meta["ids"], splits, scheme=scheme, metric=e.probe_metric,
                          C=e.probe_C, max_iter=e.probe_max_iter, n_boot=e.bootstrap_replicates, seed=e.seed)
    _write_json(args.out, res)
    return EXIT_OK


def cmd_survival(args) -> int:
    cfg = _config(args)
    X, meta = _load_embeddings(args.embeddings, "survival")
    times, events = _survival_arrays(meta, args.embeddings)
    splits, scheme = _splits(args, cfg, meta["ids"], events, meta.get("patients"))
    e = cfg.eval
    res = tasks.run_survival(X, times, events, meta["ids"], splits, alpha=e.coxnet_alpha, scheme=scheme,
                             n_boot=e.bootstrap_replicates, seed=e.seed)
    _write_json(args.out, res)
    return EXIT_OK


def cmd_retrieve(args) -> int:
    cfg = _config(args)
    X, meta = _load_embeddings(args.embeddings, "labels")
    splits, scheme = _splits(args, cfg, meta["ids"], meta["labels"], meta.get("patients"))
    res = tasks.run_retrieval(X, meta["labels"], meta["ids"], splits, ks=cfg.eval.retrieval_k, scheme=scheme)
    _write_json(args.out, res)
    return EXIT_OK


def cmd_prompt(args) -> int:
    cfg = _config(args)
    need = "survival" if args.task == "survival" else "labels"
    S, meta = _load_embeddings(args.embeddings, need)
    M, mmeta = _load_embeddings(args.molecular)
    if mmeta["ids"] != meta["ids"]:
        raise ValidationError(f"{args.molecular}: ids do not match {args.embeddings}")
    if M.shape[1] != S.shape[1]:
        raise ValidationError(f"{args.molecular}: dim {M.shape[1]} differs from slide dim {S.shape[1]}")
    norm = cfg.eval.prompt_normalize
    if args.task == "survival":
        times, events = _survival_arrays(meta, args.embeddings)
        splits, scheme = _splits(args, cfg, meta["ids"], events, meta.get("patients"))
        res = tasks.run_prompt_survival(S, M, times, events, meta["ids"], splits, normalize=norm, scheme=scheme)
    else:
        splits, scheme = _splits(args, cfg, meta["ids"], meta["labels"], meta.get("patients"))
        res = tasks.run_prompt_classification(S, M, meta["labels"], meta["ids"], splits, normalize=norm,
                                              scheme=scheme)
    _write_json(args.out, res)
    return EXIT_OK


def cmd_cluster(args) -> int:
    cfg = _config(args)
    X, meta = _load_embeddings(args.embeddings, "labels")
    res = tasks.run_clustering(X, meta["labels"], k=args.k, seed=cfg.eval.seed)
    _write_json(args.out, res)
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = _config(args)
    _, meta = _load_embeddings(args.embeddings)
    splits, _ = _splits(args, cfg, meta["ids"], meta.get("labels"), meta.get("patients"))
    atomic_write_text(args.out, splits_to_json(splits) + "\n")
    return EXIT_OK


def cmd_fewshot(args) -> int:
    p = Path(args.splits)
    if not p.exists():
        raise FileNotFoundError(f"{p}: splits file not found")
    parents = splits_from_json(p.read_text())
    _, meta = _load_embeddings(args.embeddings, "labels")
    labels_by_id = dict(zip(meta["ids"], meta["labels"]))
    seed = 0 if args.seed is None else args.seed
    out = make_fewshot(parents, labels_by_id, args.k, seed, args.repeats)
    atomic_write_text(args.out, splits_to_json(out) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    results = []
    for path in args.results:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"{p}: result file not found")
        try:
            r = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{p}: {exc}") from None
        for key in ("task", "scheme", "folds", "mean"):
            if key not in r:
                raise ValidationError(f"{p}: result field {key!r} missing")
        results.append(r)
    table = report_tsv(results)
    if args.out:
        atomic_write_text(args.out, table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="threads-desk", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", help="contrastive pretraining with RankMe checkpointing")
    p.add_argument("--data", required=True)
    p.add_argument("--out-checkpoints", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", help="slide (and optionally molecular) embeddings from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--molecular-out", help="also write molecular embeddings here")
    p.set_defaults(func=cmd_embed)

    for name, func, help_ in (("probe", cmd_probe, "logistic linear probe"),
                              ("survival", cmd_survival, "CoxNet survival prediction"),
                              ("retrieve", cmd_retrieve, "slide-to-slide retrieval mAP@k")):
        p = sub.add_parser(name, help=help_)
        _add_eval(p)
        p.set_defaults(func=func)

    p = sub.add_parser("prompt", help="molecular prompting of slide embeddings")
    _add_eval(p)
    p.add_argument("--molecular", required=True, help="molecular embedding store aligned with --embeddings")
    p.add_argument("--task", choices=("classify", "survival"), default="classify")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("cluster", help="k-means agreement with labels (ARI, MI)")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, help="number of clusters (default: number of labels)")
    _add_common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("split", help="write splits for an embedding store")
    _add_eval(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fewshot", help="derive k-shot training sets from splits")
    p.add_argument("--splits", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--embeddings", required=True, help="store whose sidecar supplies labels")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, help="independent draws when there is a single parent split")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("report", help="aggregate result JSON files into a TSV table")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def _thread_limit():
    raw = os.environ.get("THREADS_DESK_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"THREADS_DESK_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError("THREADS_DESK_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"threads-desk {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        log.debug("runtime failure", exc_info=True)
        print(f"threads-desk {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
