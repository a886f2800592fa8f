"""Molecular encoders: genomic variant profiles and bulk transcriptomes.

Genomic profiles are 7-slot multi-hot blocks per gene (four copy-number
states, three mutation classes) passed through a 4-layer MLP. Transcriptomes
are token sets: each expressed gene contributes a gene-identity embedding
plus an embedding of its log2-normalized value; a learned CLS token is
prepended, optional transformer blocks mix the tokens, and the token mean
is projected into the shared space.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import tape as T
from .numerics import ShapeError
from .params import Params, init_layer_norm, init_linear
from .tape import GradTape, Var

CNV_CLASSES = ("two-copy-deletion", "loss", "gain", "amplification")
MUT_CLASSES = ("small-coding", "large-coding", "non-coding")
SLOTS = CNV_CLASSES + MUT_CLASSES
SLOTS_PER_GENE = len(SLOTS)


@dataclass(frozen=True)
class VariantCall:
    gene: int
    cnv: str = "none"
    muts: tuple[str, ...] = ()

    def __post_init__(self):
        if self.cnv != "none" and self.cnv not in CNV_CLASSES:
            raise ValueError(f"unknown CNV class {self.cnv!r}")
        bad = [m for m in self.muts if m not in MUT_CLASSES]
        if bad:
            raise ValueError(f"unknown mutation classes {bad}")
        object.__setattr__(self, "muts", tuple(self.muts))


@dataclass
class GenomicProfile:
    vector: np.ndarray
    n_genes: int

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (SLOTS_PER_GENE * self.n_genes,):
            raise ShapeError(f"genomic vector length {self.vector.shape} != 7 x {self.n_genes}")


@dataclass
class TranscriptomicProfile:
    gene_ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.gene_ids = np.asarray(self.gene_ids, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.gene_ids.shape != self.values.shape or self.gene_ids.ndim != 1:
            raise ShapeError("gene_ids and values must be aligned 1-d arrays")
        if len(np.unique(self.gene_ids)) != len(self.gene_ids):
            raise ValueError("duplicate gene ids in transcriptomic profile")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite expression values")

    def __len__(self):
        return len(self.gene_ids)


def build_variant_vector(calls: Iterable[VariantCall], n_genes: int = 239) -> GenomicProfile:
    vec = np.zeros((n_genes, SLOTS_PER_GENE))
    for call in calls:
        if not 0 <= call.gene < n_genes:
            raise IndexError(f"gene index {call.gene} outside panel of {n_genes} genes")
        if call.cnv != "none":
            vec[call.gene, SLOTS.index(call.cnv)] = 1.0
        for m in call.muts:
            vec[call.gene, SLOTS.index(m)] = 1.0
    return GenomicProfile(vec.reshape(-1), n_genes)


def log2_tpm_normalize(tpm):
    """``log2(tpm + 1)``; the pseudocount keeps zero expression finite."""
    tpm = np.asarray(tpm, dtype=np.float64)
    if np.any(tpm < 0):
        raise ValueError("TPM values must be nonnegative")
    out = np.log2(tpm + 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- genomic


@dataclass
class GenomicEncoderConfig:
    n_genes: int = 239
    hidden_dim: int | None = None  # None: same as the input width
    output_dim: int = 1024
    dropout: float = 0.2
    layer_norm: bool = True
    ln_eps: float = 1e-5

    @property
    def input_dim(self) -> int:
        return SLOTS_PER_GENE * self.n_genes

    def layer_widths(self) -> list[tuple[int, int]]:
        h = self.hidden_dim or self.input_dim
        return [(self.input_dim, h), (h, h), (h, h), (h, self.output_dim)]


def init_genomic_params(cfg: GenomicEncoderConfig, rng: np.random.Generator) -> Params:
    p: Params = {}
    for i, (fan_in, fan_out) in enumerate(cfg.layer_widths()):
        init_linear(p, f"mlp.{i}", fan_in, fan_out, rng)
        if cfg.layer_norm:
            init_layer_norm(p, f"mlp.{i}.ln", fan_out)
    return p


def genomic_param_count(cfg: GenomicEncoderConfig) -> int:
    total = 0
    for fan_in, fan_out in cfg.layer_widths():
        total += fan_in * fan_out + fan_out
        if cfg.layer_norm:
            total += 2 * fan_out
    return total


def _bind(params: Mapping) -> tuple[dict[str, Var], GradTape, bool]:
    first = next(iter(params.values()))
    if isinstance(first, Var):
        return dict(params), first.tape, True
    tape = GradTape(enabled=False)
    return {k: tape.const(v) for k, v in params.items()}, tape, False


def _genomic(x: Var, p, cfg: GenomicEncoderConfig, rng, training: bool) -> Var:
    n_layers = len(cfg.layer_widths())
    h = x
    for i in range(n_layers):
        h = T.linear(h, p[f"mlp.{i}.W"], p[f"mlp.{i}.b"])
        if cfg.layer_norm:
            h = T.layer_norm(h, p[f"mlp.{i}.ln.g"], p[f"mlp.{i}.ln.beta"], cfg.ln_eps)
        if i < n_layers - 1:
            h = T.relu(h)
            h = T.dropout(h, cfg.dropout, rng, training)
    return h


def encode_genomic(profile, params, cfg: GenomicEncoderConfig, rng=None, training: bool = False):
    vec = profile.vector if isinstance(profile, GenomicProfile) else np.asarray(profile, dtype=np.float64)
    if vec.shape != (cfg.input_dim,):
        raise ShapeError(f"genomic profile length {vec.shape[0]} != expected {cfg.input_dim}")
    p, tape, diff = _bind(params)
    out = _genomic(tape.const(vec[None, :]), p, cfg, rng, training)
    return out if diff else out.value[0]


# ---------------------------------------------------------- transcriptomic


@dataclass
class TranscriptomicEncoderConfig:
    vocab_size: int = 2000
    d_model: int = 64
    depth: int = 1
    heads: int = 4
    ff_dim: int | None = None
    value_dropout: float = 0.2
    output_dim: int = 1024
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")


def init_transcriptomic_params(cfg: TranscriptomicEncoderConfig, rng: np.random.Generator) -> Params:
    d = cfg.d_model
    p: Params = {"gene_table": rng.normal(0.0, 1.0, size=(cfg.vocab_size, d)),
                 "cls": rng.normal(0.0, 0.02, size=(1, d))}
    init_layer_norm(p, "gene_ln", d)
    init_linear(p, "value.0", 1, d, rng)
    init_linear(p, "value.1", d, d, rng)
    init_layer_norm(p, "value_ln", d)
    ff = cfg.ff_dim or d
    for i in range(cfg.depth):
        for name in ("q", "k", "v", "o"):
            init_linear(p, f"block.{i}.{name}", d, d, rng)
        init_layer_norm(p, f"block.{i}.ln1", d)
        init_linear(p, f"block.{i}.ff1", d, ff, rng)
        init_linear(p, f"block.{i}.ff2", ff, d, rng)
        init_layer_norm(p, f"block.{i}.ln2", d)
    init_linear(p, "proj.0", d, d, rng)
    init_linear(p, "proj.1", d, cfg.output_dim, rng)
    return p


def _block(x: Var, p, i: int, cfg: TranscriptomicEncoderConfig) -> Var:
    d = cfg.d_model
    dh = d // cfg.heads
    q = T.linear(x, p[f"block.{i}.q.W"], p[f"block.{i}.q.b"])
    k = T.linear(x, p[f"block.{i}.k.W"], p[f"block.{i}.k.b"])
    v = T.linear(x, p[f"block.{i}.v.W"], p[f"block.{i}.v.b"])
    outs = []
    for h in range(cfg.heads):
        sl = slice(h * dh, (h + 1) * dh)
        att = T.softmax(T.scale(q[:, sl] @ T.transpose(k[:, sl]), 1.0 / np.sqrt(dh)), axis=1)
        outs.append(att @ v[:, sl])
    o = outs[0] if cfg.heads == 1 else T.concat(outs, axis=1)
    o = T.linear(o, p[f"block.{i}.o.W"], p[f"block.{i}.o.b"])
    x = T.layer_norm(x + o, p[f"block.{i}.ln1.g"], p[f"block.{i}.ln1.beta"], cfg.ln_eps)
    f = T.relu(T.linear(x, p[f"block.{i}.ff1.W"], p[f"block.{i}.ff1.b"]))
    f = T.linear(f, p[f"block.{i}.ff2.W"], p[f"block.{i}.ff2.b"])
    return T.layer_norm(x + f, p[f"block.{i}.ln2.g"], p[f"block.{i}.ln2.beta"], cfg.ln_eps)


def _transcriptome(ids: np.ndarray, values: np.ndarray, p, cfg: TranscriptomicEncoderConfig,
                   rng, training: bool, tape: GradTape) -> Var:
    g = T.take_rows(p["gene_table"], ids)
    g = T.layer_norm(g, p["gene_ln.g"], p["gene_ln.beta"], cfg.ln_eps)
    v = T.dropout(tape.const(values[:, None]), cfg.value_dropout, rng, training)
    e = T.relu(T.linear(v, p["value.0.W"], p["value.0.b"]))
    e = T.linear(e, p["value.1.W"], p["value.1.b"])
    e = T.layer_norm(e, p["value_ln.g"], p["value_ln.beta"], cfg.ln_eps)
    x = T.concat([p["cls"], g + e], axis=0)
    for i in range(cfg.depth):
        x = _block(x, p, i, cfg)
    pooled = T.mean(x, axis=0, keepdims=True)
    h = T.gelu(T.linear(pooled, p["proj.0.W"], p["proj.0.b"]))
    return T.linear(h, p["proj.1.W"], p["proj.1.b"])


def encode_transcriptome(profile: TranscriptomicProfile, params, cfg: TranscriptomicEncoderConfig,
                         rng=None, training: bool = False):
    if len(profile) == 0:
        raise ValueError("empty transcriptomic profile")
    if profile.gene_ids.min() < 0 or profile.gene_ids.max() >= cfg.vocab_size:
        raise KeyError(f"gene id outside vocabulary of size {cfg.vocab_size}")
    p, tape, diff = _bind(params)
    out = _transcriptome(profile.gene_ids, profile.values, p, cfg, rng, training, tape)
    return out if diff else out.value[0]


# --------------------------------------------------------------- file io


def read_tpm_tsv(path, vocab: Mapping[str, int] | None = None) -> TranscriptomicProfile:
    """Read ``gene_id<TAB>tpm`` lines; values come back log2(TPM + 1) normalized.

    Gene ids are looked up in ``vocab`` when given, otherwise parsed as integers.
    """
    ids, vals = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated fields, got {len(row)}")
            gene, tpm = row
            if lineno == 1 and gene.lower() in ("gene_id", "gene"):
                continue
            try:
                gid = vocab[gene] if vocab is not None else int(gene)
            except (KeyError, ValueError):
                raise KeyError(f"{path}:{lineno}: unknown gene id {gene!r}") from None
            ids.append(gid)
            vals.append(log2_tpm_normalize(float(tpm)))
    return TranscriptomicProfile(np.array(ids, dtype=np.int64), np.array(vals))


def write_tpm_tsv(path, gene_ids: Sequence, tpm: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["gene_id", "tpm"])
        for g, t in zip(gene_ids, tpm):
            w.writerow([g, repr(float(t))])


def read_variant_json(path, gene_index: Mapping[str, int] | None = None) -> list[VariantCall]:
    """Read a JSON list of ``{"gene": ..., "cnv": ..., "muts": [...]}`` records."""
    with open(path) as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise ValueError(f"{path}: expected a JSON list of variant calls")
    calls = []
    for i, rec in enumerate(records):
        if "gene" not in rec:
            raise ValueError(f"{path}[{i}]: missing field 'gene'")
        gene = rec["gene"]
        if isinstance(gene, str):
            if gene_index is None or gene not in gene_index:
                raise KeyError(f"{path}[{i}]: unknown gene {gene!r}")
            gene = gene_index[gene]
        calls.append(VariantCall(int(gene), rec.get("cnv", "none") or "none", tuple(rec.get("muts", []))))
    return calls


def write_variant_json(path, calls: Sequence[VariantCall]) -> None:
    with open(path, "w") as fh:
        json.dump([{"gene": c.gene, "cnv": c.cnv, "muts": list(c.muts)} for c in calls], fh, indent=1)


def variant_calls_from_vector(vector: np.ndarray, n_genes: int) -> list[VariantCall]:
    """Inverse of :func:`build_variant_vector` (one call per altered gene)."""
    block = np.asarray(vector).reshape(n_genes, SLOTS_PER_GENE)
    calls = []
    for g in np.flatnonzero(block.any(axis=1)):
        cnv_hits = [CNV_CLASSES[j] for j in range(4) if block[g, j]]
        muts = tuple(MUT_CLASSES[j] for j in range(3) if block[g, 4 + j])
        for k, cnv in enumerate(cnv_hits or ["none"]):
            calls.append(VariantCall(int(g), cnv, muts if k == 0 else ()))
    return calls
