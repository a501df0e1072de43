"""Run configuration: typed sections, strict YAML loading, extraction hash.

A run config is a YAML file with nested sections mirroring the dataclasses
below. Loading is strict: unknown keys are rejected rather than ignored, so a
typo like ``hopp_s`` fails loudly instead of silently using a default.

The extraction hash covers every knob that changes cached feature contents
(audio analysis, pitch tracking, posteriorgram setup). Model and trainer
settings are deliberately excluded: retuning the model must not invalidate
extracted features.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError


@dataclass
class AudioSection:
    """Frame-level analysis settings (shared by every feature extractor)."""

    sample_rate: int = 16000
    hop_s: float = 0.010
    win_s: float = 0.025
    fft_size: int = 512
    n_mels: int = 80
    n_bark: int = 30


@dataclass
class PitchSection:
    f0_min: float = 50.0
    f0_max: float = 600.0
    vuv_threshold: float = 0.3
    median_width: int = 5


@dataclass
class PpgSection:
    """Posteriorgram source: a bundled toy classifier or externally provided files."""

    source: str = "toy"  # "toy" | "external"
    n_classes: int = 40
    context_frames: int = 5
    hidden_units: int = 256
    external_dir: str | None = None


@dataclass
class ModelSection:
    mode: str = "proposed"  # "baseline" (no prosody input) | "proposed"
    prosody_dim: int = 1
    conv_bank_size: int = 16
    conv_channels: int = 128
    highway_units: int = 64
    highway_layers: int = 4
    gru_units: int = 64
    ref_enc_filters: tuple[int, ...] = (32, 32, 64, 64, 128, 128)
    ref_enc_batch_norm: bool = False
    out_dim: int = 32


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_steps: int = 20000
    grad_clip_norm: float = 1.0
    checkpoint_every: int = 1000
    log_every: int = 10


@dataclass
class AugmentSection:
    factors: tuple[float, ...] = ()
    frame_s: float = 0.020
    search_s: float = 0.005
    min_factor: float = 0.25
    max_factor: float = 4.0


@dataclass
class VocoderSection:
    lpc_order: int = 16
    voicing_threshold: float = 0.3
    subframes_per_hop: int = 4


@dataclass
class EvalSection:
    """Aggregate thresholds for ``eval --check``; None disables a check."""

    max_mcd_db: float | None = None
    max_f0_rmse_hz: float | None = None
    max_vuv_error: float | None = None


@dataclass
class RunConfig:
    seed: int = 0
    audio: AudioSection = field(default_factory=AudioSection)
    pitch: PitchSection = field(default_factory=PitchSection)
    ppg: PpgSection = field(default_factory=PpgSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    vocoder: VocoderSection = field(default_factory=VocoderSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> None:
        if self.audio.sample_rate <= 0:
            raise ConfigError("audio.sample_rate must be positive")
        if self.audio.hop_s <= 0 or self.audio.win_s <= 0:
            raise ConfigError("audio.hop_s and audio.win_s must be positive")
        if self.audio.fft_size < int(round(self.audio.win_s * self.audio.sample_rate)):
            raise ConfigError("audio.fft_size must cover the analysis window")
        if not 0 < self.pitch.f0_min < self.pitch.f0_max:
            raise ConfigError("pitch range must satisfy 0 < f0_min < f0_max")
        if self.pitch.median_width % 2 != 1 or self.pitch.median_width < 1:
            raise ConfigError("pitch.median_width must be a positive odd integer")
        if self.ppg.source not in ("toy", "external"):
            raise ConfigError(f"ppg.source must be 'toy' or 'external', got {self.ppg.source!r}")
        if self.model.mode not in ("baseline", "proposed"):
            raise ConfigError(f"model.mode must be 'baseline' or 'proposed', got {self.model.mode!r}")
        if self.model.prosody_dim < 1:
            raise ConfigError("model.prosody_dim must be >= 1")
        if self.train.grad_clip_norm <= 0:
            raise ConfigError("train.grad_clip_norm must be positive")
        if self.train.batch_size < 1 or self.train.max_steps < 1:
            raise ConfigError("train.batch_size and train.max_steps must be >= 1")
        if len(set(self.augment.factors)) != len(self.augment.factors):
            raise ConfigError("augment.factors contains duplicates")
        for f in self.augment.factors:
            if not self.augment.min_factor <= f <= self.augment.max_factor:
                raise ConfigError(
                    f"augment factor {f} outside [{self.augment.min_factor}, {self.augment.max_factor}]"
                )
        if self.vocoder.lpc_order < 1:
            raise ConfigError("vocoder.lpc_order must be >= 1")
        if self.vocoder.subframes_per_hop < 1:
            raise ConfigError("vocoder.subframes_per_hop must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return _as_plain_dict(dataclasses.asdict(self))

    def extraction_hash(self) -> bytes:
        """16-byte digest of every setting that affects cached feature contents."""
        relevant = {
            "audio": dataclasses.asdict(self.audio),
            "pitch": dataclasses.asdict(self.pitch),
            "ppg": dataclasses.asdict(self.ppg),
        }
        blob = json.dumps(_as_plain_dict(relevant), sort_keys=True).encode("utf-8")
        return hashlib.md5(blob).digest()

    def write_resolved(self, path: Path | str) -> None:
        """Dump the fully resolved config (defaults filled in) as YAML."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")


def _as_plain_dict(obj: Any) -> Any:
    """Recursively convert tuples to lists so YAML/JSON dumps are canonical."""
    if isinstance(obj, dict):
        return {k: _as_plain_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_as_plain_dict(v) for v in obj]
    return obj


_SECTION_TYPES = {
    "audio": AudioSection,
    "pitch": PitchSection,
    "ppg": PpgSection,
    "model": ModelSection,
    "train": TrainSection,
    "augment": AugmentSection,
    "vocoder": VocoderSection,
    "eval": EvalSection,
}


def _build_section(cls: type, data: dict[str, Any], prefix: str) -> Any:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {prefix}{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in section {prefix.rstrip('.')}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run config must be a mapping")
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError("seed must be an integer")
            kwargs["seed"] = value
        elif key in _SECTION_TYPES:
            if value is None:
                value = {}
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key} must be a mapping")
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, prefix=f"{key}.")
        else:
            raise ConfigError(f"unknown config key {key}")
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def load_run_config(path: Path | str) -> RunConfig:
    """Load and validate a YAML run config; missing file or bad keys raise ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)
