"""Gated multi-head attention-MIL slide encoder.

A patch bag ``X`` (N x input_dim) goes through a pre-attention stack of
affine -> layer norm -> GELU -> dropout stages. The last stage widens to
``heads * hidden_dim`` columns, which are chunked into one block per head.
Each head scores its patches with a gated attention network,

    alpha = c(tanh(a h) * sigmoid(b h)),

pools ``softmax(alpha)^T h``, and the pooled head outputs are concatenated
and projected to ``output_dim``.

Functions accept either plain parameter arrays (inference, returns numpy)
or parameters bound on a :class:`~threads_desk.tape.GradTape` (returns
``Var`` so the result can be differentiated).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tape as T
from .numerics import ShapeError
from .params import Params, init_layer_norm, init_linear
from .tape import GradTape, Var


@dataclass
class SlideEncoderConfig:
    input_dim: int = 768
    hidden_dim: int = 1024
    heads: int = 2
    pre_attention_layers: int = 3
    attention_dim: int | None = None  # defaults to hidden_dim
    pre_dropout: float = 0.1
    attention_dropout: float = 0.25
    output_dim: int = 1024
    ln_eps: float = 1e-5

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "heads", "pre_attention_layers", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"SlideEncoderConfig.{name} must be >= 1")
        if self.attention_dim is not None and self.attention_dim < 1:
            raise ValueError("SlideEncoderConfig.attention_dim must be >= 1")
        for name in ("pre_dropout", "attention_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"SlideEncoderConfig.{name} must lie in [0, 1)")

    @property
    def gate_dim(self) -> int:
        return self.attention_dim or self.hidden_dim

    def layer_widths(self) -> list[tuple[int, int]]:
        widths = []
        fan_in = self.input_dim
        for i in range(self.pre_attention_layers):
            last = i == self.pre_attention_layers - 1
            fan_out = self.heads * self.hidden_dim if last else self.hidden_dim
            widths.append((fan_in, fan_out))
            fan_in = fan_out
        return widths


@dataclass
class PatchBag:
    id: str
    X: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError(f"bag {self.id!r}: need an N x d patch matrix with N >= 1, got {self.X.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError(f"bag {self.id!r}: non-finite patch features")

    @property
    def n_patches(self) -> int:
        return self.X.shape[0]


def init_params(cfg: SlideEncoderConfig, rng: np.random.Generator) -> Params:
    p: Params = {}
    for i, (fan_in, fan_out) in enumerate(cfg.layer_widths()):
        init_linear(p, f"pre.{i}", fan_in, fan_out, rng)
        init_layer_norm(p, f"pre.{i}.ln", fan_out)
    for m in range(cfg.heads):
        init_linear(p, f"head.{m}.a", cfg.hidden_dim, cfg.gate_dim, rng)
        init_linear(p, f"head.{m}.b", cfg.hidden_dim, cfg.gate_dim, rng)
        init_linear(p, f"head.{m}.c", cfg.gate_dim, 1, rng)
    init_linear(p, "post", cfg.heads * cfg.hidden_dim, cfg.output_dim, rng)
    return p


def _bind(params: Mapping) -> tuple[dict[str, Var], GradTape, bool]:
    first = next(iter(params.values()))
    if isinstance(first, Var):
        return dict(params), first.tape, True
    tape = GradTape(enabled=False)
    return {k: tape.const(v) for k, v in params.items()}, tape, False


def _matrix(x, tape: GradTape) -> Var:
    if isinstance(x, PatchBag):
        x = x.X
    return tape.lift(x)


def _pre_attention(x: Var, p: Mapping[str, Var], cfg: SlideEncoderConfig, rng, training: bool) -> Var:
    if x.shape[1] != cfg.input_dim:
        raise ShapeError(f"patch features have {x.shape[1]} columns, encoder expects {cfg.input_dim}")
    h = x
    for i in range(cfg.pre_attention_layers):
        h = T.linear(h, p[f"pre.{i}.W"], p[f"pre.{i}.b"])
        h = T.layer_norm(h, p[f"pre.{i}.ln.g"], p[f"pre.{i}.ln.beta"], cfg.ln_eps)
        h = T.gelu(h)
        h = T.dropout(h, cfg.pre_dropout, rng, training)
    return h


def _gated_scores(h: Var, p: Mapping[str, Var], m: int, p_drop: float, rng, training: bool) -> Var:
    gate_in = p[f"head.{m}.a.W"].shape[0]
    if h.shape[1] != gate_in:
        raise ShapeError(f"head {m}: features have {h.shape[1]} columns, gate expects {gate_in}")
    a = T.tanh(T.linear(h, p[f"head.{m}.a.W"], p[f"head.{m}.a.b"]))
    b = T.sigmoid(T.linear(h, p[f"head.{m}.b.W"], p[f"head.{m}.b.b"]))
    a = T.dropout(a, p_drop, rng, training)
    b = T.dropout(b, p_drop, rng, training)
    return T.linear(a * b, p[f"head.{m}.c.W"], p[f"head.{m}.c.b"])


def _pool(h: Var, scores: Var) -> Var:
    if h.shape[0] == 0:
        raise ValueError("attention_pool: empty bag")
    if scores.shape[0] != h.shape[0]:
        raise ShapeError(f"attention_pool: {scores.shape[0]} scores for {h.shape[0]} rows")
    w = T.softmax(scores, axis=0)
    return T.matmul(T.transpose(w), h)


def _encode(x: Var, p, cfg: SlideEncoderConfig, rng, training: bool) -> tuple[Var, list[Var]]:
    h = _pre_attention(x, p, cfg, rng, training)
    pooled, weights = [], []
    d = cfg.hidden_dim
    for m in range(cfg.heads):
        hm = h if cfg.heads == 1 else h[:, m * d:(m + 1) * d]
        scores = _gated_scores(hm, p, m, cfg.attention_dropout, rng, training)
        weights.append(scores)
        pooled.append(_pool(hm, scores))
    s = pooled[0] if cfg.heads == 1 else T.concat(pooled, axis=1)
    return T.linear(s, p["post.W"], p["post.b"]), weights


def _out(v: Var, differentiable: bool):
    return v if differentiable else v.value


def pre_attention(bag, params, cfg: SlideEncoderConfig, rng=None, training: bool = False):
    p, tape, diff = _bind(params)
    return _out(_pre_attention(_matrix(bag, tape), p, cfg, rng, training), diff)


def gated_attention_scores(h, params, head: int = 0, rng=None, training: bool = False,
                           dropout: float = 0.25):
    """Raw (pre-softmax) attention scores, one per row of ``h``."""
    p, tape, diff = _bind(params)
    return _out(_gated_scores(tape.lift(h), p, head, dropout, rng, training), diff)


def attention_pool(h, scores):
    """``softmax(scores)^T h`` for a single head."""
    if isinstance(h, Var) or isinstance(scores, Var):
        tape = (h if isinstance(h, Var) else scores).tape
        s = scores if isinstance(scores, Var) else tape.const(np.reshape(scores, (-1, 1)))
        return _pool(tape.lift(h), s)
    tape = GradTape(enabled=False)
    h = np.asarray(h, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, 1)
    if h.ndim != 2:
        raise ShapeError("attention_pool: h must be a matrix")
    return _pool(tape.const(h), tape.const(scores)).value[0]


def encode_bag(bag, params, cfg: SlideEncoderConfig, rng=None, training: bool = False):
    """Slide embedding of one bag: a length-``output_dim`` vector.

    With tape-bound parameters a 1 x output_dim ``Var`` is returned instead.
    """
    p, tape, diff = _bind(params)
    out, _ = _encode(_matrix(bag, tape), p, cfg, rng, training)
    return out if diff else out.value[0]


def attention_weights(bag, params, cfg: SlideEncoderConfig) -> np.ndarray:
    """Inference-mode softmax attention, shape (heads, N)."""
    p, tape, _ = _bind({k: (v.value if isinstance(v, Var) else v) for k, v in params.items()})
    _, scores = _encode(_matrix(bag, tape), p, cfg, None, False)
    return np.stack([T.softmax(s, axis=0).value[:, 0] for s in scores])


def merge_bags(bags: Sequence[PatchBag], id: str | None = None) -> PatchBag:
    if not bags:
        raise ValueError("encode_patient: no bags given")
    return PatchBag(id or bags[0].id, np.concatenate([b.X for b in bags], axis=0))


def encode_patient(bags: Sequence[PatchBag], params, cfg: SlideEncoderConfig, rng=None,
                   training: bool = False):
    """Patient embedding from the union of all patches of the patient's slides."""
    return encode_bag(merge_bags(bags), params, cfg, rng, training)


def encode_many(bags: Sequence[PatchBag], params: Params, cfg: SlideEncoderConfig) -> np.ndarray:
    """Inference embeddings for a list of bags, one row per bag."""
    if not bags:
        return np.zeros((0, cfg.output_dim))
    return np.stack([encode_bag(b, params, cfg) for b in bags])
