"""Contrastive pretraining, RankMe model selection and supervised fine-tuning."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import slide_encoder as se
from . import tape as T
from .model import ModelState, encode_molecular, encode_slide
from .numerics import make_rng, singular_values
from .params import Params, bind, collect_grads, init_linear
from .slide_encoder import PatchBag
from .tape import GradTape, Var

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    patches_per_slide: int = 512
    peak_lr: float = 1e-5
    final_lr: float = 1e-8
    warmup_epochs: int = 5
    max_epochs: int = 101
    weight_decay: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    temperature: float = 0.07
    rankme_eps: float = 1e-7
    rankme_max_slides: int = 2048
    seed: int = 0

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for a contrastive batch")
        if self.max_epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.max_epochs > 0 and self.warmup_epochs >= self.max_epochs:
            raise ValueError("warmup_epochs must be smaller than max_epochs")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        for name in ("patches_per_slide", "peak_lr", "adam_eps", "rankme_eps", "rankme_max_slides"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class FinetuneConfig:
    epochs: int = 5
    lr: float = 2.5e-5
    patches_per_slide: int = 2048
    warmup_epochs: int = 1
    weight_decay: float = 0.0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0


class TrainingDiverged(RuntimeError):
    pass


# ------------------------------------------------------------ primitives


def sample_patches(bag: PatchBag, n: int, rng: np.random.Generator) -> PatchBag:
    """Draw ``n`` patches: without replacement when the bag is large enough."""
    if n < 1:
        raise ValueError("need n >= 1 patches")
    N = bag.X.shape[0]
    if N == 0:
        raise ValueError(f"bag {bag.id!r} is empty")
    idx = rng.choice(N, size=n, replace=N < n)
    return PatchBag(bag.id, bag.X[idx])


def infonce(slide: Var, mol: Var, temperature: float) -> Var:
    """Symmetric InfoNCE on a B x D pair of embedding batches (tape version)."""
    B = slide.shape[0]
    if B < 2 or mol.shape[0] != B:
        raise ValueError(f"InfoNCE needs matching batches with B >= 2, got {slide.shape} and {mol.shape}")
    u = T.l2_normalize_rows(slide)
    v = T.l2_normalize_rows(mol)
    logits = T.scale(u @ T.transpose(v), 1.0 / temperature)
    diag = (np.arange(B), np.arange(B))
    rows = T.log_softmax(logits, axis=1)[diag]
    cols = T.log_softmax(logits, axis=0)[diag]
    return T.scale(rows.sum() + cols.sum(), -0.5 / B)


def infonce_loss(slide, mol, temperature: float = 0.07) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss value plus gradients with respect to both embedding batches."""
    tape = GradTape()
    s, m = tape.param(slide), tape.param(mol)
    loss = infonce(s, m, temperature)
    tape.backward(loss)
    return float(loss.value), s.grad, m.grad


def lr_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``peak_lr``, then cosine decay to ``final_lr``."""
    warm = cfg.warmup_epochs * steps_per_epoch
    total = cfg.max_epochs * steps_per_epoch
    if step < warm:
        return cfg.peak_lr * step / warm
    if total <= warm:
        return cfg.final_lr
    progress = min(1.0, (step - warm) / (total - warm))
    return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


def half_cycle_lr(step: int, steps_per_epoch: int, base_lr: float, warmup_epochs: int, epochs: int,
                  min_lr: float = 0.0) -> float:
    """One-epoch-style linear warmup followed by a half-cycle cosine to ``min_lr``."""
    warm = warmup_epochs * steps_per_epoch
    total = epochs * steps_per_epoch
    if step < warm:
        return base_lr * step / warm
    progress = min(1.0, (step - warm) / max(1, total - warm))
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamW:
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def step(self, params: Params, grads: Params, lr: float) -> None:
        """Update ``params`` in place (decoupled weight decay, bias-corrected moments)."""
        if set(grads) - set(params):
            raise KeyError(f"gradients for unknown parameters: {sorted(set(grads) - set(params))[:3]}")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, theta in params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(theta)
            if g.shape != theta.shape:
                raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {theta.shape}")
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(theta)
                self.v[k] = np.zeros_like(theta)
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                theta *= 1.0 - lr * self.weight_decay
            theta -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adamw_step(params: Params, grads: Params, opt: AdamW, lr: float) -> Params:
    opt.step(params, grads, lr)
    return params


def rankme(H, eps: float = 1e-7) -> float:
    """exp of the entropy of the L1-normalized singular values of ``H``."""
    s = singular_values(H)
    total = np.sum(np.abs(s))
    if total == 0:
        raise ValueError("rankme: all-zero matrix has no normalizable spectrum")
    p = s / total + eps
    return float(np.exp(-np.sum(p * np.log(p))))


# ---------------------------------------------------------- pretraining


@dataclass
class CheckpointRecord:
    epoch: int
    rankme: float
    state: ModelState


@dataclass
class PretrainResult:
    state: ModelState
    checkpoints: list[CheckpointRecord]
    log: list[dict]


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    out = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        # a singleton batch has no negatives; fold it into the previous one
        out[-2] = np.concatenate([out[-2], out.pop()])
    return out


def embed_slides(bags: Sequence[PatchBag], state: ModelState) -> np.ndarray:
    return se.encode_many(bags, state.slide, state.slide_cfg)


def contrastive_step(batch, state: ModelState, flat: Params, cfg: TrainConfig, rng) -> tuple[float, Params]:
    """Forward + backward for one batch; returns the loss and flat gradients."""
    tape = GradTape()
    bound = bind(tape, flat)
    s_rows, m_rows = [], []
    for sample in batch:
        bag = sample_patches(sample.bag, cfg.patches_per_slide, rng)
        s_rows.append(encode_slide(bag, state, bound, rng, training=True))
        m_rows.append(encode_molecular(sample.molecular, state, bound, rng, training=True))
    loss = infonce(T.concat(s_rows, axis=0), T.concat(m_rows, axis=0), cfg.temperature)
    tape.backward(loss)
    return float(loss.value), collect_grads(bound)


def pretrain_fit(samples: Sequence, state: ModelState, cfg: TrainConfig,
                 on_epoch: Callable[[dict], None] | None = None) -> PretrainResult:
    """Align slide and molecular encoders on paired samples.

    ``state`` is updated in place. After every post-warmup epoch the RankMe of
    the training slide embeddings is computed and a checkpoint kept whenever it
    strictly improves.
    """
    if len(samples) < 2:
        raise ValueError("pretraining needs at least 2 paired samples")
    flat = state.flat()
    opt = AdamW(cfg.adam_betas, cfg.adam_eps, cfg.weight_decay)
    n = len(samples)
    steps_per_epoch = len(_batches(np.arange(n), cfg.batch_size))
    monitor_rng = make_rng(cfg.seed, 0xA11CE)
    monitor_idx = np.sort(monitor_rng.choice(n, size=min(n, cfg.rankme_max_slides), replace=False))
    checkpoints: list[CheckpointRecord] = []
    records: list[dict] = []
    best = -np.inf
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        rng = make_rng(cfg.seed, epoch)
        losses = []
        lr = 0.0
        for batch_idx in _batches(rng.permutation(n), cfg.batch_size):
            lr = lr_at(step, steps_per_epoch, cfg)
            loss, grads = contrastive_step([samples[i] for i in batch_idx], state, flat, cfg, rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            opt.step(flat, grads, lr)
            losses.append(loss)
            step += 1
        rec = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr": lr,
               "rankme": None, "checkpointed": False}
        if epoch > cfg.warmup_epochs:
            H = embed_slides([samples[i].bag for i in monitor_idx], state)
            r = rankme(H, cfg.rankme_eps)
            rec["rankme"] = r
            if r > best:
                best = r
                checkpoints.append(CheckpointRecord(epoch, r, state.copy()))
                rec["checkpointed"] = True
        records.append(rec)
        log.info("epoch %d loss %.5f rankme %s", epoch, rec["mean_loss"], rec["rankme"])
        if on_epoch is not None:
            on_epoch(rec)
    return PretrainResult(state, checkpoints, records)


def log_lines(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


# ------------------------------------------------------------ finetuning


@dataclass
class SlideClassifier:
    slide_cfg: se.SlideEncoderConfig
    slide: Params
    head: Params
    n_classes: int

    def logits(self, bag) -> np.ndarray:
        e = se.encode_bag(bag, self.slide, self.slide_cfg)
        return e @ self.head["W"] + self.head["b"]

    def predict(self, bags: Sequence) -> np.ndarray:
        return np.array([int(np.argmax(self.logits(b))) for b in bags])


def class_weights(labels, n_classes: int) -> np.ndarray:
    """``n / (k * n_c)`` per class."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    if np.any(counts == 0):
        raise ValueError("every class needs at least one example")
    return len(labels) / (n_classes * counts)


def finetune_classifier(state: ModelState, bags: Sequence[PatchBag], labels, n_classes: int,
                        cfg: FinetuneConfig | None = None) -> SlideClassifier:
    """Slide encoder + linear head trained with class-weighted cross-entropy, batch size 1."""
    cfg = cfg or FinetuneConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("fine-tuning needs at least two classes")
    if len(bags) != len(labels):
        raise ValueError("bags and labels differ in length")
    weights = class_weights(labels, n_classes)
    head: Params = {}
    init_linear(head, "head", state.slide_cfg.output_dim, n_classes, make_rng(cfg.seed, 7))
    head = {"W": head.pop("head.W"), "b": head.pop("head.b")}
    flat = {"slide/" + k: v.copy() for k, v in state.slide.items()}
    flat.update({"head/" + k: v for k, v in head.items()})
    opt = AdamW(cfg.adam_betas, cfg.adam_eps, cfg.weight_decay)
    n = len(bags)
    step = 0
    for epoch in range(cfg.epochs):
        rng = make_rng(cfg.seed, 1000 + epoch)
        for i in rng.permutation(n):
            lr = half_cycle_lr(step, n, cfg.lr, cfg.warmup_epochs, cfg.epochs)
            tape = GradTape()
            bound = bind(tape, flat)
            slide_p = {k[6:]: v for k, v in bound.items() if k.startswith("slide/")}
            bag = sample_patches(bags[i], cfg.patches_per_slide, rng)
            emb = se.encode_bag(bag, slide_p, state.slide_cfg, rng, training=True)
            logits = T.linear(emb, bound["head/W"], bound["head/b"])
            loss = T.scale(T.log_softmax(logits, axis=1)[0, int(labels[i])], -weights[labels[i]])
            tape.backward(loss)
            opt.step(flat, collect_grads(bound), lr)
            step += 1
    return SlideClassifier(
        state.slide_cfg,
        {k[6:]: v for k, v in flat.items() if k.startswith("slide/")},
        {k[5:]: v for k, v in flat.items() if k.startswith("head/")},
        n_classes,
    )
