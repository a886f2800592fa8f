"""Paired samples and their on-disk layout (patch store, molecular store, manifest)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .molecular import GenomicProfile, TranscriptomicProfile
from .slide_encoder import PatchBag
from .store import atomic_write_text, read_store, write_store


@dataclass
class SurvivalRecord:
    time: float
    event: int

    def __post_init__(self):
        if not self.time > 0:
            raise ValueError(f"survival time must be positive, got {self.time}")
        if self.event not in (0, 1):
            raise ValueError(f"event must be 0 or 1, got {self.event}")


@dataclass
class PairedSample:
    id: str
    bag: PatchBag
    molecular: GenomicProfile | TranscriptomicProfile
    label: int
    survival: SurvivalRecord | None = None
    patient: str | None = None


MANIFEST = "manifest.json"
PATCHES = "patches.thds"
MOLECULAR = "molecular.thds"


def save_dataset(samples: Sequence[PairedSample], out_dir, extra: dict | None = None) -> None:
    """Write patches, dense molecular vectors and a manifest into ``out_dir``.

    Transcriptomic profiles are stored densely over the vocabulary; genes absent
    from a profile are recorded in the manifest's ``present`` masks only when a
    profile does not cover the whole vocabulary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not samples:
        raise ValueError("empty dataset")
    first = samples[0].molecular
    mode = "genomic" if isinstance(first, GenomicProfile) else "transcriptomic"

    patches = np.concatenate([s.bag.X for s in samples], axis=0)
    patch_ids = [s.id for s in samples for _ in range(s.bag.n_patches)]
    write_store(out / PATCHES, patches, {"ids": patch_ids})

    entries = []
    if mode == "genomic":
        mol = np.stack([s.molecular.vector for s in samples])
        mode_meta = {"n_genes": first.n_genes}
    else:
        vocab = 1 + max(int(s.molecular.gene_ids.max()) for s in samples)
        mol = np.zeros((len(samples), vocab))
        for i, s in enumerate(samples):
            mol[i, s.molecular.gene_ids] = s.molecular.values
        mode_meta = {"vocab_size": vocab}
    offset = 0
    for s in samples:
        e = {"id": s.id, "label": int(s.label), "offset": offset, "n_patches": s.bag.n_patches,
             "patient": s.patient or s.id}
        if mode == "transcriptomic" and len(s.molecular) != mode_meta["vocab_size"]:
            e["genes"] = s.molecular.gene_ids.tolist()
        if s.survival is not None:
            e["time"] = float(s.survival.time)
            e["event"] = int(s.survival.event)
        entries.append(e)
        offset += s.bag.n_patches
    write_store(out / MOLECULAR, mol, {"ids": [s.id for s in samples]})
    manifest = {"mode": mode, **mode_meta, "patch_dim": int(patches.shape[1]), "samples": entries}
    if extra:
        manifest["generator"] = extra
    atomic_write_text(out / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True))


def load_dataset(data_dir) -> list[PairedSample]:
    d = Path(data_dir)
    manifest_path = d / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path}: dataset manifest missing")
    manifest = json.loads(manifest_path.read_text())
    patches, _ = read_store(d / PATCHES)
    mol, _ = read_store(d / MOLECULAR)
    samples = []
    for i, e in enumerate(manifest["samples"]):
        X = patches[e["offset"]:e["offset"] + e["n_patches"]].astype(np.float64)
        row = mol[i].astype(np.float64)
        if manifest["mode"] == "genomic":
            profile = GenomicProfile(row, manifest["n_genes"])
        else:
            genes = np.array(e["genes"]) if "genes" in e else np.arange(manifest["vocab_size"])
            profile = TranscriptomicProfile(genes, row[genes])
        surv = SurvivalRecord(e["time"], e["event"]) if "time" in e else None
        samples.append(PairedSample(e["id"], PatchBag(e["id"], X), profile, e["label"], surv, e.get("patient")))
    return samples
