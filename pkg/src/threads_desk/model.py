"""The three encoders bundled as one trainable state, with npz persistence."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import molecular as mol
from . import slide_encoder as se
from .numerics import make_rng
from .params import Params, count
from .store import atomic_write_bytes

PREFIXES = {"slide": "slide/", "genomic": "genomic/", "transcriptomic": "rna/"}


@dataclass
class ModelState:
    slide_cfg: se.SlideEncoderConfig
    slide: Params
    genomic_cfg: mol.GenomicEncoderConfig | None = None
    genomic: Params = field(default_factory=dict)
    transcriptomic_cfg: mol.TranscriptomicEncoderConfig | None = None
    transcriptomic: Params = field(default_factory=dict)

    def flat(self) -> Params:
        """All parameters keyed ``<encoder prefix><name>``; arrays are shared, not copied."""
        out = {}
        for part, prefix in PREFIXES.items():
            for k, v in getattr(self, part).items():
                out[prefix + k] = v
        return out

    def load_flat(self, flat: Params) -> None:
        for part, prefix in PREFIXES.items():
            setattr(self, part, {k[len(prefix):]: v for k, v in flat.items() if k.startswith(prefix)})

    def copy(self) -> "ModelState":
        new = ModelState(self.slide_cfg, {}, self.genomic_cfg, {}, self.transcriptomic_cfg, {})
        new.load_flat({k: v.copy() for k, v in self.flat().items()})
        return new

    def param_counts(self) -> dict[str, int]:
        return {part: count(getattr(self, part)) for part in PREFIXES}

    def output_dim(self) -> int:
        return self.slide_cfg.output_dim

    def configs_json(self) -> dict:
        return {
            "slide": asdict(self.slide_cfg),
            "genomic": None if self.genomic_cfg is None else asdict(self.genomic_cfg),
            "transcriptomic": None if self.transcriptomic_cfg is None else asdict(self.transcriptomic_cfg),
        }

    def save(self, path, meta: dict | None = None) -> None:
        """Write an ``.npz`` archive; entries carry a fixed timestamp so equal states give equal bytes."""
        header = {"configs": self.configs_json(), "meta": meta or {}}
        arrays = {"__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
        arrays.update(sorted(self.flat().items()))
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w", force_zip64=True) as fh:
                    np.lib.format.write_array(fh, np.ascontiguousarray(arr), allow_pickle=False)
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path) -> "ModelState":
        with np.load(path) as z:
            header = json.loads(bytes(z["__header__"]).decode())
            flat = {k: z[k].astype(np.float64) for k in z.files if k != "__header__"}
        cfgs = header["configs"]
        state = cls(
            se.SlideEncoderConfig(**cfgs["slide"]),
            {},
            None if cfgs["genomic"] is None else mol.GenomicEncoderConfig(**cfgs["genomic"]),
            {},
            None if cfgs["transcriptomic"] is None else mol.TranscriptomicEncoderConfig(**cfgs["transcriptomic"]),
            {},
        )
        state.load_flat(flat)
        return state


def init_model(slide_cfg: se.SlideEncoderConfig,
               genomic_cfg: mol.GenomicEncoderConfig | None = None,
               transcriptomic_cfg: mol.TranscriptomicEncoderConfig | None = None,
               seed: int = 0) -> ModelState:
    for cfg in (genomic_cfg, transcriptomic_cfg):
        if cfg is not None and cfg.output_dim != slide_cfg.output_dim:
            raise ValueError("molecular and slide encoders must share the output dimension")
    return ModelState(
        slide_cfg,
        se.init_params(slide_cfg, make_rng(seed, 1)),
        genomic_cfg,
        {} if genomic_cfg is None else mol.init_genomic_params(genomic_cfg, make_rng(seed, 2)),
        transcriptomic_cfg,
        {} if transcriptomic_cfg is None else mol.init_transcriptomic_params(transcriptomic_cfg, make_rng(seed, 3)),
    )


def encode_molecular(profile, state: ModelState, params=None, rng=None, training: bool = False):
    """Dispatch to the encoder matching the profile type.

    ``params`` may be a flat, tape-bound parameter dict (keys carry the
    encoder prefixes); by default the state's own arrays are used.
    """
    if isinstance(profile, mol.GenomicProfile):
        if state.genomic_cfg is None:
            raise ValueError("model has no genomic encoder")
        p = state.genomic if params is None else _strip(params, PREFIXES["genomic"])
        return mol.encode_genomic(profile, p, state.genomic_cfg, rng, training)
    if isinstance(profile, mol.TranscriptomicProfile):
        if state.transcriptomic_cfg is None:
            raise ValueError("model has no transcriptomic encoder")
        p = state.transcriptomic if params is None else _strip(params, PREFIXES["transcriptomic"])
        return mol.encode_transcriptome(profile, p, state.transcriptomic_cfg, rng, training)
    raise TypeError(f"unsupported molecular profile type {type(profile).__name__}")


def encode_slide(bag, state: ModelState, params=None, rng=None, training: bool = False):
    p = state.slide if params is None else _strip(params, PREFIXES["slide"])
    return se.encode_bag(bag, p, state.slide_cfg, rng, training)


def _strip(params, prefix: str) -> dict:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
