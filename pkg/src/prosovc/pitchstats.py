"""Speaker-level log-f0 statistics and the pitch conversion between speakers.

Conversion is a linear transform in the natural-log-f0 domain: center by the
source mean, rescale by the ratio of target to source standard deviation,
re-center at the target mean. Unvoiced frames pass through untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import PitchTrack
from .errors import DataError


@dataclass(frozen=True)
class SpeakerPitchStats:
    """Mean and standard deviation of voiced log-f0, plus the frame count
    they were estimated from."""

    mean_log_f0: float
    std_log_f0: float
    n_voiced_frames: int

    def __post_init__(self) -> None:
        if self.std_log_f0 <= 0.0:
            raise DataError(f"std_log_f0 must be positive, got {self.std_log_f0}")
        if self.n_voiced_frames <= 0:
            raise DataError("stats must come from at least one voiced frame")

    def to_dict(self) -> dict:
        return {
            "mean_log_f0": self.mean_log_f0,
            "std_log_f0": self.std_log_f0,
            "n_voiced_frames": self.n_voiced_frames,
        }


def estimate_stats(
    tracks: list[PitchTrack] | list[np.ndarray],
    min_voiced_frames: int = 100,
) -> SpeakerPitchStats:
    """Pool voiced f0 values across utterances and fit log-domain stats.

    Accepts PitchTracks or bare f0 arrays (zeros meaning unvoiced). Raises
    DataError when fewer than min_voiced_frames voiced frames are available
    or when the voiced f0 is degenerate (zero variance).
    """
    if not tracks:
        raise DataError("no pitch tracks given")
    voiced: list[np.ndarray] = []
    for tr in tracks:
        f0 = tr.f0 if isinstance(tr, PitchTrack) else np.asarray(tr, dtype=np.float64)
        voiced.append(f0[f0 > 0.0])
    pooled = np.concatenate(voiced).astype(np.float64)
    if len(pooled) < min_voiced_frames:
        raise DataError(
            f"not enough voiced frames for pitch statistics: "
            f"{len(pooled)} < {min_voiced_frames}"
        )
    log_f0 = np.log(pooled)
    mean = float(np.mean(log_f0))
    std = float(np.std(log_f0))
    if std <= 1e-6:
        raise DataError("voiced f0 is degenerate (zero spread); cannot fit stats")
    return SpeakerPitchStats(mean, std, len(pooled))


def convert_f0(
    f0: np.ndarray,
    source: SpeakerPitchStats,
    target: SpeakerPitchStats,
) -> np.ndarray:
    """Map an f0 contour from the source speaker's range to the target's.

    log f0_out = (log f0_in - mu_src) * (sigma_tgt / sigma_src) + mu_tgt,
    applied to voiced frames only; unvoiced frames stay exactly 0.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    if np.any(f0 < 0.0) or not np.all(np.isfinite(f0)):
        raise DataError("f0 contour must be finite and non-negative")
    out = np.zeros_like(f0)
    voiced = f0 > 0.0
    scale = target.std_log_f0 / source.std_log_f0
    out[voiced] = np.exp(
        (np.log(f0[voiced]) - source.mean_log_f0) * scale + target.mean_log_f0
    )
    return out.astype(np.float32)


def convert_track(
    track: PitchTrack,
    source: SpeakerPitchStats,
    target: SpeakerPitchStats,
    sample_rate: int,
) -> PitchTrack:
    """convert_f0 lifted to a whole PitchTrack; periods are recomputed and
    voicing/correlation carried over unchanged."""
    f0 = convert_f0(track.f0, source, target)
    period = np.where(f0 > 0.0, sample_rate / np.maximum(f0, 1e-9), 0.0)
    return PitchTrack(f0, track.vuv.copy(), period, track.correlation.copy())


def save_stats(path: Path | str, stats: SpeakerPitchStats) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(stats.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_stats(path: Path | str) -> SpeakerPitchStats:
    path = Path(path)
    if not path.exists():
        raise DataError(f"pitch stats file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return SpeakerPitchStats(
            float(data["mean_log_f0"]),
            float(data["std_log_f0"]),
            int(data["n_voiced_frames"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: not a valid pitch stats file ({exc})") from exc
