"""Run configuration: a TOML file with one table per component, plus CLI overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .evaluation.splits import SplitSpec
from .molecular import GenomicEncoderConfig, TranscriptomicEncoderConfig
from .slide_encoder import SlideEncoderConfig
from .synthetic import GeneratorConfig
from .train import FinetuneConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    probe_C: float = 0.5
    probe_max_iter: int = 10_000
    probe_tol: float = 1e-6
    probe_metric: str = "auto"
    coxnet_alpha: float = 0.07
    coxnet_max_iter: int = 10_000
    bootstrap_replicates: int = 100
    retrieval_k: list[int] = field(default_factory=lambda: [1, 5, 10])
    prompt_normalize: bool = True
    cluster_restarts: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.probe_C <= 0 or self.coxnet_alpha < 0:
            raise ValueError("probe_C must be positive and coxnet_alpha nonnegative")
        if self.probe_max_iter < 1 or self.bootstrap_replicates < 1:
            raise ValueError("iteration and replicate counts must be >= 1")
        if not self.retrieval_k or min(self.retrieval_k) < 1:
            raise ValueError("retrieval_k must list positive integers")
        self.retrieval_k = [int(k) for k in self.retrieval_k]


SECTIONS: dict[str, type] = {
    "generator": GeneratorConfig,
    "slide": SlideEncoderConfig,
    "genomic": GenomicEncoderConfig,
    "transcriptomic": TranscriptomicEncoderConfig,
    "train": TrainConfig,
    "finetune": FinetuneConfig,
    "splits": SplitSpec,
    "eval": EvalConfig,
}
SEEDED = ("generator", "train", "finetune", "splits", "eval")


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    slide: SlideEncoderConfig = field(default_factory=SlideEncoderConfig)
    genomic: GenomicEncoderConfig = field(default_factory=GenomicEncoderConfig)
    transcriptomic: TranscriptomicEncoderConfig = field(default_factory=TranscriptomicEncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    splits: SplitSpec = field(default_factory=SplitSpec)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        out: dict[str, Any] = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out["seed"] = self.seed
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def with_seed(self, seed: int) -> "RunConfig":
        raw = self.to_dict()
        raw["seed"] = seed
        for name in SEEDED:
            raw[name]["seed"] = seed
        return from_dict(raw)


def _build(section: str, cls: type, values: dict) -> Any:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"[{section}]: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    unknown = sorted(set(raw) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown config section(s) {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in SECTIONS.items():
        values = raw.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"[{name}] must be a table")
        kwargs[name] = _build(name, cls, {k: v for k, v in values.items() if v is not None})
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    return RunConfig(**kwargs, seed=seed)


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_override(item: str) -> tuple[str, str | None, Any]:
    """``section.key=value`` (or ``seed=value``) with a TOML-typed value."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    lhs, value = item.split("=", 1)
    lhs = lhs.strip()
    if lhs == "seed":
        return "seed", None, _parse_value(value.strip())
    if "." not in lhs:
        raise ConfigError(f"override {item!r} needs a section prefix")
    section, key = lhs.split(".", 1)
    return section, key, _parse_value(value.strip())


def load_config(path=None, overrides: Iterable[str] = (), seed: int | None = None) -> RunConfig:
    """Defaults, then the TOML file, then ``--set`` overrides, then ``--seed``.

    A top-level ``seed`` (from the file, an override or ``--seed``) is
    propagated to every seeded section.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"{p}: config file not found")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    for item in overrides:
        section, key, value = parse_override(item)
        if key is None:
            raw["seed"] = value
        else:
            raw.setdefault(section, {})[key] = value
    if seed is not None:
        raw["seed"] = seed
    cfg = from_dict(raw)
    if "seed" in raw:
        cfg = cfg.with_seed(cfg.seed)
    return cfg
