"""Synthetic paired (patch bag, molecular profile) data with planted structure.

Every sample has a latent factor ``z = class_mean + noise * eps``. Patch
features, molecular profiles and survival times are all functions of ``z``,
so the class label, the cross-modal pairing and the risk are recoverable
from either modality.

Two knobs make the slide side harder than the molecular side, as in real
slides: only ``signal_fraction`` of patches carry ``z`` (the rest are
background tissue), and each slide gets a random ``nuisance`` offset shared
by all its patches (scanner / stain style), which the molecular profile
does not see. The offset lives in a ``nuisance_rank``-dimensional subspace.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import PairedSample, SurvivalRecord
from .molecular import SLOTS_PER_GENE, GenomicProfile, TranscriptomicProfile
from .numerics import make_rng, sigmoid
from .slide_encoder import PatchBag


@dataclass
class GeneratorConfig:
    n_samples: int = 200
    n_classes: int = 4
    latent_dim: int = 8
    patch_dim: int = 768
    bag_min: int = 16
    bag_max: int = 64
    mode: str = "genomic"
    n_genes: int = 239
    vocab_size: int = 200
    noise: float = 0.5
    class_sep: float = 3.0
    signal_fraction: float = 1.0
    nuisance: float = 0.0
    nuisance_rank: int = 4
    label_noise: float = 0.0
    censor_rate: float = 0.3
    survival_strength: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.n_samples >= self.n_classes >= 1:
            raise ValueError("need n_samples >= n_classes >= 1")
        if self.latent_dim < 1 or self.patch_dim < 1:
            raise ValueError("latent_dim and patch_dim must be >= 1")
        if not 1 <= self.bag_min <= self.bag_max:
            raise ValueError("need 1 <= bag_min <= bag_max")
        if self.mode not in ("genomic", "transcriptomic"):
            raise ValueError(f"unknown molecular mode {self.mode!r}")
        if self.noise < 0 or self.nuisance < 0:
            raise ValueError("noise scales must be nonnegative")
        for name in ("label_noise", "censor_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if not 0.0 < self.signal_fraction <= 1.0:
            raise ValueError("signal_fraction must lie in (0, 1]")
        if self.nuisance_rank < 1:
            raise ValueError("nuisance_rank must be >= 1")
        if self.n_genes < 1 or self.vocab_size < 1:
            raise ValueError("molecular panel sizes must be >= 1")


@dataclass
class _World:
    means: np.ndarray        # n_classes x latent
    patch_proj: np.ndarray   # latent x patch_dim
    background: np.ndarray   # latent x patch_dim
    mol_proj: np.ndarray     # latent x n_molecular
    mol_bias: np.ndarray
    beta: np.ndarray         # latent
    stain: np.ndarray        # nuisance_rank x patch_dim


def _world(cfg: GeneratorConfig) -> _World:
    rng = make_rng(cfg.seed, 0)
    L = cfg.latent_dim
    means = rng.normal(size=(cfg.n_classes, L))
    means *= cfg.class_sep / np.linalg.norm(means, axis=1, keepdims=True)
    patch_proj = rng.normal(size=(L, cfg.patch_dim)) / np.sqrt(L)
    background = rng.normal(size=(L, cfg.patch_dim)) / np.sqrt(L)
    if cfg.mode == "genomic":
        width = SLOTS_PER_GENE * cfg.n_genes
        mol_proj = rng.normal(size=(L, width)) * 1.5 / np.sqrt(L)
        mol_bias = np.full(width, -2.0)
    else:
        mol_proj = rng.normal(size=(L, cfg.vocab_size)) / np.sqrt(L)
        mol_bias = rng.normal(size=cfg.vocab_size)
    # hazard direction inside the span of the class means so risk differs by class
    beta = rng.normal(size=cfg.n_classes) @ means + 0.5 * rng.normal(size=L)
    beta *= cfg.survival_strength / np.linalg.norm(beta)
    stain = rng.normal(size=(cfg.nuisance_rank, cfg.patch_dim)) / np.sqrt(cfg.patch_dim)
    return _World(means, patch_proj, background, mol_proj, mol_bias, beta, stain)


def _f32(x: np.ndarray) -> np.ndarray:
    # values are made exactly representable at the f32 storage boundary
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def _labels(cfg: GeneratorConfig) -> np.ndarray:
    rng = make_rng(cfg.seed, 1)
    return rng.permutation(np.arange(cfg.n_samples) % cfg.n_classes)


def _sample(i: int, label: int, cfg: GeneratorConfig, world: _World) -> PairedSample:
    rng = make_rng(cfg.seed, 2, i)
    z = world.means[label] + cfg.noise * rng.normal(size=cfg.latent_dim)

    n = int(rng.integers(cfg.bag_min, cfg.bag_max + 1))
    informative = rng.random(n) < cfg.signal_fraction
    informative[0] = True
    tissue = np.where(informative[:, None], z[None, :], rng.normal(size=(n, cfg.latent_dim)))
    proj = np.where(informative[:, None, None], world.patch_proj[None], world.background[None])
    X = np.einsum("nl,nld->nd", tissue, proj)
    X += cfg.noise * rng.normal(size=X.shape)
    X += cfg.nuisance * rng.normal(size=cfg.nuisance_rank) @ world.stain
    bag = PatchBag(f"s{i:05d}", _f32(X))

    logits = z @ world.mol_proj + world.mol_bias
    if cfg.mode == "genomic":
        hits = rng.random(logits.shape) < sigmoid(logits)
        profile = GenomicProfile(hits.astype(np.float64), cfg.n_genes)
    else:
        tpm = 10.0 * np.logaddexp(0.0, logits + cfg.noise * rng.normal(size=logits.shape))
        profile = TranscriptomicProfile(np.arange(cfg.vocab_size), _f32(np.log2(tpm + 1.0)))

    rate = 0.1 * np.exp(z @ world.beta)
    t = rng.exponential(1.0 / rate)
    event = 1
    if rng.random() < cfg.censor_rate:
        t *= 1.0 - rng.random()
        event = 0
    t = max(float(_f32(t)), float(np.finfo(np.float32).tiny))

    observed = label
    if cfg.label_noise and rng.random() < cfg.label_noise and cfg.n_classes > 1:
        observed = int((label + rng.integers(1, cfg.n_classes)) % cfg.n_classes)
    return PairedSample(bag.id, bag, profile, int(observed), SurvivalRecord(t, event))


def generate_dataset(cfg: GeneratorConfig) -> list[PairedSample]:
    world = _world(cfg)
    labels = _labels(cfg)
    return [_sample(i, int(labels[i]), cfg, world) for i in range(cfg.n_samples)]


def latent_risk(cfg: GeneratorConfig, samples) -> np.ndarray:
    """Not observable from data; the true log-hazard used by the generator (for tests)."""
    world = _world(cfg)
    labels = _labels(cfg)
    out = []
    for i in range(len(samples)):
        rng = make_rng(cfg.seed, 2, i)
        z = world.means[labels[i]] + cfg.noise * rng.normal(size=cfg.latent_dim)
        out.append(float(z @ world.beta))
    return np.array(out)


def config_dict(cfg: GeneratorConfig) -> dict:
    return asdict(cfg)


def pair_recall(slide_emb, mol_emb, labels, k: int = 1) -> float:
    """Share of slides whose k nearest molecular embeddings include one of the same class.

    Nearness is cosine similarity, the geometry the contrastive loss shapes.
    """
    S = np.asarray(slide_emb, dtype=np.float64)
    M = np.asarray(mol_emb, dtype=np.float64)
    labels = np.asarray(labels)
    if len(S) < 2 or len(S) != len(M) or len(labels) != len(S):
        raise ValueError("need >= 2 aligned held-out pairs")
    S = S / np.maximum(np.linalg.norm(S, axis=1, keepdims=True), 1e-12)
    M = M / np.maximum(np.linalg.norm(M, axis=1, keepdims=True), 1e-12)
    sim = S @ M.T
    top = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    return float(np.mean([(labels[top[i]] == labels[i]).any() for i in range(len(S))]))


def holdout_pair_recall(state, samples, k: int = 1) -> float:
    from .model import encode_molecular, encode_slide

    if len(samples) < 2:
        raise ValueError("need >= 2 held-out pairs")
    S = np.stack([encode_slide(s.bag, state) for s in samples])
    M = np.stack([encode_molecular(s.molecular, state) for s in samples])
    return pair_recall(S, M, [s.label for s in samples], k)
