"""Tempo augmentation: pitch-preserving time stretching and manifest expansion.

Stretching is waveform-similarity overlap-add: synthesis frames advance by a
fixed half-window hop while analysis frames advance by hop * factor, each one
nudged within a small search radius to best continue the previous frame.
Overlap-add with a periodic Hann window then reassembles the signal at the
new rate without touching pitch. Augmented copies are never written as wav
files; the expanded manifest carries a factor suffix in the utterance id and
extraction stretches on the fly.
"""

from __future__ import annotations

import numpy as np

from .corpus import Manifest, Utterance, Waveform
from .errors import DataError

AUGMENT_TAG = "__sp"


def time_stretch(
    waveform: Waveform,
    factor: float,
    frame_s: float = 0.020,
    search_s: float = 0.005,
    min_factor: float = 0.25,
    max_factor: float = 4.0,
) -> Waveform:
    """Change tempo by `factor` (>1 is faster/shorter) at constant pitch.

    factor == 1.0 is an exact bypass returning a copy of the input samples.
    Output length is round(len(input) / factor). Requires at least 100 ms of
    audio; factors outside [min_factor, max_factor] are refused.
    """
    if not np.isfinite(factor) or not min_factor <= factor <= max_factor:
        raise DataError(f"stretch factor {factor} outside [{min_factor}, {max_factor}]")
    x = np.asarray(waveform.samples, dtype=np.float64)
    sr = waveform.sample_rate
    if len(x) < int(0.1 * sr):
        raise DataError(f"need at least 100 ms of audio to stretch, got {len(x) / sr:.3f} s")
    if factor == 1.0:
        return Waveform(waveform.samples.copy(), sr)

    frame_len = int(round(frame_s * sr))
    frame_len += frame_len % 2  # even, so half-window hops tile exactly
    syn_hop = frame_len // 2
    ana_hop = syn_hop * factor
    search = int(round(search_s * sr))
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(frame_len) / frame_len)

    n_out = int(round(len(x) / factor))
    out = np.zeros(n_out + frame_len)
    wsum = np.zeros(n_out + frame_len)

    prev_sel = 0
    out[:frame_len] += window * x[:frame_len]
    wsum[:frame_len] += window
    k = 1
    while k * syn_hop < n_out:
        out_pos = k * syn_hop
        nominal = int(round(k * ana_hop))
        lo = max(0, nominal - search)
        hi = min(len(x) - frame_len, nominal + search)
        if hi < 0:
            break
        if hi < lo:
            lo = hi
        # the natural continuation of what we just wrote
        target = x[prev_sel + syn_hop : prev_sel + syn_hop + frame_len]
        if len(target) < frame_len or lo == hi:
            sel = max(0, min(nominal, len(x) - frame_len))
        else:
            scores = np.correlate(x[lo : hi + frame_len], target, mode="valid")
            # normalize by candidate energy so amplitude ramps don't win
            sq = np.concatenate(([0.0], np.cumsum(x[lo : hi + frame_len] ** 2)))
            energies = sq[frame_len:] - sq[:-frame_len]
            sel = lo + int(np.argmax(scores / (np.sqrt(energies) + 1e-9)))
        out[out_pos : out_pos + frame_len] += window * x[sel : sel + frame_len]
        wsum[out_pos : out_pos + frame_len] += window
        prev_sel = sel
        k += 1

    out = out[:n_out] / np.maximum(wsum[:n_out], 1e-6)
    return Waveform(out.astype(np.float32), sr)


def augmented_id(utt_id: str, factor: float) -> str:
    return f"{utt_id}{AUGMENT_TAG}{factor:g}"


def split_augmented_id(utt_id: str) -> tuple[str, float]:
    """Recover (base id, stretch factor) from a manifest id; plain ids map to 1.0."""
    if AUGMENT_TAG not in utt_id:
        return utt_id, 1.0
    base, _, tag = utt_id.rpartition(AUGMENT_TAG)
    try:
        factor = float(tag)
    except ValueError as exc:
        raise DataError(f"malformed augmented utterance id {utt_id!r}") from exc
    if not base:
        raise DataError(f"malformed augmented utterance id {utt_id!r}")
    return base, factor


def expand_manifest(manifest: Manifest, factors: tuple[float, ...] | list[float]) -> Manifest:
    """One entry per (utterance, factor). Factor 1.0 keeps the original id and
    duration; other factors get a deterministic ``__sp<factor>`` id suffix and
    duration scaled by 1/factor. An empty factor list returns the manifest
    unchanged."""
    factors = tuple(factors)
    if not factors:
        return manifest
    if len(set(factors)) != len(factors):
        raise DataError(f"duplicate augmentation factors in {factors}")
    for f in factors:
        if f <= 0 or not np.isfinite(f):
            raise DataError(f"bad augmentation factor {f}")
    utts: list[Utterance] = []
    for utt in manifest:
        if AUGMENT_TAG in utt.utt_id:
            raise DataError(f"manifest already contains augmented ids ({utt.utt_id!r})")
        for f in factors:
            if f == 1.0:
                utts.append(utt)
            else:
                utts.append(
                    Utterance(
                        augmented_id(utt.utt_id, f),
                        utt.speaker,
                        utt.audio_path,
                        utt.duration / f,
                    )
                )
    return Manifest(utts)
