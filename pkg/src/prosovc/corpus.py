"""Corpus plumbing: wav I/O, utterance manifests, feature cache, checkpoints.

Manifests are plain text, one utterance per line::

    <id>|<speaker>|<wav path>|<duration seconds>

Cached features live one file per (utterance, kind) under a cache directory,
with a small binary header so stale or mismatched records are detected on
read instead of silently reused.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np
import torch

from .errors import CacheMissError, ConfigMismatchError, DataError, StaleCacheError

# ---------------------------------------------------------------------------
# Audio


@dataclass
class Waveform:
    """Mono PCM audio as float32 in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise DataError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise DataError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def load_wav(path: Path | str) -> Waveform:
    """Read a mono 16-bit PCM wav file.

    Anything else (missing file, stereo, 8/24/32-bit, non-RIFF) raises
    DataError -- resampling and format conversion are out of scope here.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"audio file not found: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            sample_rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a readable wav file ({exc})") from exc
    if n_channels != 1:
        raise DataError(f"{path}: expected mono audio, got {n_channels} channels")
    if sampwidth != 2:
        raise DataError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return Waveform(samples, sample_rate)


def save_wav(path: Path | str, waveform: Waveform) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1] first."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = np.clip(waveform.samples, -1.0, 1.0)
    pcm = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# Manifests

_ID_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-")


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    speaker: str
    audio_path: str
    duration: float

    def __post_init__(self) -> None:
        if not self.utt_id or not set(self.utt_id) <= _ID_OK:
            raise DataError(f"bad utterance id {self.utt_id!r} (letters/digits/_.- only)")
        if not self.speaker:
            raise DataError(f"utterance {self.utt_id}: empty speaker")
        if self.duration <= 0:
            raise DataError(f"utterance {self.utt_id}: non-positive duration {self.duration}")


@dataclass
class Manifest:
    utterances: list[Utterance] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for utt in self.utterances:
            if utt.utt_id in seen:
                raise DataError(f"duplicate utterance id {utt.utt_id!r} in manifest")
            seen.add(utt.utt_id)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def __len__(self) -> int:
        return len(self.utterances)

    def speakers(self) -> list[str]:
        return sorted({u.speaker for u in self.utterances})

    def for_speaker(self, speaker: str) -> "Manifest":
        return Manifest([u for u in self.utterances if u.speaker == speaker])

    def shuffled(self, seed: int) -> "Manifest":
        """Deterministically permuted copy (same seed, same order)."""
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(self.utterances))
        return Manifest([self.utterances[i] for i in order])


def load_manifest(path: Path | str, check_files: bool = False) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    utts: list[Utterance] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("|")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 '|'-separated fields, got {len(parts)}")
        utt_id, speaker, audio_path, dur_s = (p.strip() for p in parts)
        try:
            duration = float(dur_s)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad duration {dur_s!r}") from exc
        utt = Utterance(utt_id, speaker, audio_path, duration)
        if check_files and not Path(utt.audio_path).exists():
            raise DataError(f"{path}:{lineno}: audio file missing: {utt.audio_path}")
        utts.append(utt)
    if not utts:
        raise DataError(f"manifest is empty: {path}")
    return Manifest(utts)


def save_manifest(path: Path | str, manifest: Manifest) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{u.utt_id}|{u.speaker}|{u.audio_path}|{u.duration:.6f}" for u in manifest]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Feature cache

FEATURE_KINDS = {
    "mel": 1,
    "bfcc_acoustic": 2,
    "f0vuv": 3,
    "ppg": 4,
    "prosody": 5,
}
_KIND_BY_CODE = {v: k for k, v in FEATURE_KINDS.items()}

_MAGIC = b"VCF1"
_HEADER = struct.Struct("<4sBII16s")


@dataclass
class FeatureRecord:
    """One utterance's worth of frame-synchronous features (T x D float32)."""

    utterance_id: str
    kind: str
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in FEATURE_KINDS:
            raise DataError(f"unknown feature kind {self.kind!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise DataError(
                f"{self.utterance_id}/{self.kind}: data must be 2-D, got shape {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise DataError(f"{self.utterance_id}/{self.kind}: non-finite feature values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


class FeatureCache:
    """Binary per-(utterance, kind) feature store, keyed by extraction config.

    Each file starts with a fixed header (magic, kind code, T, D, 16-byte
    config hash) followed by row-major little-endian float32 data. A get()
    against a record written under a different extraction config raises
    StaleCacheError so callers re-extract instead of training on mismatched
    features.
    """

    def __init__(self, root: Path | str, config_hash: bytes) -> None:
        if len(config_hash) != 16:
            raise DataError(f"config hash must be 16 bytes, got {len(config_hash)}")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config_hash = bytes(config_hash)

    def _path(self, utt_id: str, kind: str) -> Path:
        return self.root / f"{utt_id}.{kind}.vcf"

    def put(self, record: FeatureRecord) -> Path:
        path = self._path(record.utterance_id, record.kind)
        t, d = record.data.shape
        header = _HEADER.pack(_MAGIC, FEATURE_KINDS[record.kind], t, d, self.config_hash)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(record.data.astype("<f4").tobytes(order="C"))
        return path

    def get(self, utt_id: str, kind: str) -> FeatureRecord:
        if kind not in FEATURE_KINDS:
            raise DataError(f"unknown feature kind {kind!r}")
        path = self._path(utt_id, kind)
        if not path.exists():
            raise CacheMissError(f"no cached {kind} for utterance {utt_id!r}")
        blob = path.read_bytes()
        if len(blob) < _HEADER.size:
            raise DataError(f"{path}: truncated feature file")
        magic, kind_code, t, d, stored_hash = _HEADER.unpack_from(blob)
        if magic != _MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if kind_code != FEATURE_KINDS[kind]:
            raise DataError(
                f"{path}: kind mismatch (file says {_KIND_BY_CODE.get(kind_code, kind_code)!r})"
            )
        if stored_hash != self.config_hash:
            raise StaleCacheError(
                f"cached {kind} for {utt_id!r} was extracted under a different config"
            )
        expected = _HEADER.size + 4 * t * d
        if len(blob) != expected:
            raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
        data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(t, d)
        return FeatureRecord(utt_id, kind, data.copy())

    def has(self, utt_id: str, kind: str) -> bool:
        """True only if a record exists AND matches the current config hash."""
        try:
            self.get(utt_id, kind)
        except DataError:
            return False
        return True


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_FORMAT = "prosovc-checkpoint-v1"


def save_checkpoint(
    path: Path | str,
    config: dict[str, Any],
    step: int,
    model_state: dict[str, Any],
    optimizer_state: dict[str, Any] | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": config,
        "step": int(step),
        "model_state": model_state,
        "optimizer_state": optimizer_state,
    }
    torch.save(payload, path)


def load_checkpoint(path: Path | str, expected_config: dict[str, Any] | None = None) -> dict[str, Any]:
    """Load a checkpoint; optionally verify it matches the current model config.

    Differing config keys are all listed in the ConfigMismatchError message so
    a user can see at a glance what changed between training and now.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises various things on corrupt files
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if expected_config is not None:
        stored = payload.get("config", {})
        keys = sorted(set(stored) | set(expected_config))
        diffs = [
            f"{k}: checkpoint={stored.get(k)!r} current={expected_config.get(k)!r}"
            for k in keys
            if stored.get(k) != expected_config.get(k)
        ]
        if diffs:
            raise ConfigMismatchError(
                "checkpoint/config mismatch: " + "; ".join(diffs)
            )
    return payload
