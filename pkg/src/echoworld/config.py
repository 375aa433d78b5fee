"""Experiment configuration: presets, canonical serialization, stable hashes.

A config file is JSON; an empty object is runnable at toy scale because
every field has a default. The ``preset`` key ("toy" or "paper") selects a
base parameterization, and explicit section fields override it. The
canonical text form (sorted keys, fixed separators) hashes stably, and that
hash is stamped into every artifact so downstream commands can refuse
mismatched inputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ConfigError",
    "PhantomSection",
    "EncoderSection",
    "PretrainSection",
    "FinetuneSection",
    "ProtocolSection",
    "ExperimentConfig",
    "load_config",
    "canonical_json",
    "config_hash",
    "section_hash",
]


class ConfigError(Exception):
    """Invalid or incompatible experiment configuration."""


@dataclass
class PhantomSection:
    resolution: int = 128
    extent_mm: float = 160.0
    base_intensity: float = 0.28
    smooth_sigma_vox: float = 1.0
    image_extent_mm: float = 110.0
    noise: float = 0.25
    scan_duration: int = 400
    scan_fps: float = 30.0
    jitter_trans_mm: float = 1.2
    jitter_rot_deg: float = 1.0
    smoothing_window: int = 9


@dataclass
class EncoderSection:
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 96
    depth: int = 4
    num_heads: int = 4
    predictor_depth: int = 6
    predictor_heads: int = 4
    motion_hidden: int = 384


@dataclass
class PretrainSection:
    objective: str = "joint"  # joint | spatial | motion
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_epochs: int = 4
    ema_decay_start: float = 0.996
    lambda_motion: float = 0.1
    temperature: float = 0.1
    symmetrize_infonce: bool = False
    data_fps: float | None = 3.0  # None keeps the native scan rate
    mask_blocks: int = 4
    mask_scale_min: float = 0.15
    mask_scale_max: float = 0.2
    mask_aspect_min: float = 0.75
    mask_aspect_max: float = 1.5
    mask_extra_drop: float = 0.15


@dataclass
class FinetuneSection:
    iterations: int = 2000
    batch_single: int = 32
    batch_seq: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    warmup_iters: int = 100
    drop_path: float = 0.1
    layer_decay: float = 0.65
    brightness: float = 0.2
    contrast: float = 0.2
    attention_width: int = 96
    attention_heads: int = 4
    attention_blocks: int = 1
    head_hidden: int = 96
    val_every: int = 200
    val_batch: int = 64


@dataclass
class ProtocolSection:
    history_len: int = 8
    alpha: float = 0.4
    single_fps: float = 6.0
    sequential_fps: float = 3.0


_PAPER_OVERRIDES: dict[str, dict] = {
    "encoder": {
        "image_size": 224,
        "patch_size": 16,
        "embed_dim": 384,
        "depth": 12,
        "num_heads": 6,
    },
    "pretrain": {
        "epochs": 300,
        "batch_size": 1024,
        "warmup_epochs": 40,
        "data_fps": None,
    },
    "finetune": {
        "iterations": 15000,
        "batch_single": 256,
        "batch_seq": 64,
        "warmup_iters": 500,
        "attention_width": 384,
        "head_hidden": 384,
    },
}

_SECTION_TYPES = {
    "phantom": PhantomSection,
    "encoder": EncoderSection,
    "pretrain": PretrainSection,
    "finetune": FinetuneSection,
    "protocol": ProtocolSection,
}


@dataclass
class ExperimentConfig:
    preset: str = "toy"
    seed: int = 0
    data_root: str = "data"
    phantom: PhantomSection = field(default_factory=PhantomSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)

    def __post_init__(self):
        if self.encoder.image_size % self.encoder.patch_size != 0:
            raise ConfigError("image_size must be divisible by patch_size")
        if self.pretrain.objective not in ("joint", "spatial", "motion"):
            raise ConfigError(f"unknown pretrain objective {self.pretrain.objective!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        preset = raw.pop("preset", "toy")
        if preset not in ("toy", "paper"):
            raise ConfigError(f"unknown preset {preset!r}")
        sections: dict[str, object] = {}
        for name, section_cls in _SECTION_TYPES.items():
            values = {}
            if preset == "paper":
                values.update(_PAPER_OVERRIDES.get(name, {}))
            overrides = raw.pop(name, {})
            if not isinstance(overrides, dict):
                raise ConfigError(f"section {name!r} must be an object")
            known = {f.name for f in dataclasses.fields(section_cls)}
            unknown = set(overrides) - known
            if unknown:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
            values.update(overrides)
            sections[name] = section_cls(**values)
        seed = raw.pop("seed", 0)
        data_root = raw.pop("data_root", "data")
        if raw:
            raise ConfigError(f"unknown top-level config keys: {sorted(raw)}")
        return cls(preset=preset, seed=int(seed), data_root=str(data_root), **sections)


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Load a config file; missing path or empty file means all defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text().strip()
    if not text:
        return ExperimentConfig()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def canonical_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def section_hash(cfg: ExperimentConfig, *names: str) -> str:
    """Hash of a subset of sections, for cross-artifact compatibility checks."""
    subset = {name: dataclasses.asdict(getattr(cfg, name)) for name in names}
    return hashlib.sha256(
        json.dumps(subset, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
