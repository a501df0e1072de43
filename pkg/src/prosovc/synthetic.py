"""Deterministic speech-like test signals.

Real recordings are deliberately not part of this repository; instead these
generators produce seeded utterances with the structure the pipeline cares
about -- voiced segments (pulse trains through formant resonators with
wandering f0), fricative-like noise bursts, and silences -- plus per-frame
phone labels for the toy posteriorgram classifier. The same seed always
yields the same samples, so tests and the acceptance suite are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter

from .corpus import Manifest, Utterance, Waveform, save_manifest, save_wav

# label inventory: 0 silence, 1..5 vowels, 6 fricative
SILENCE = 0
VOWELS = {
    1: (730.0, 1090.0, 2440.0),   # a
    2: (270.0, 2290.0, 3010.0),   # i
    3: (300.0, 870.0, 2240.0),    # u
    4: (530.0, 1840.0, 2480.0),   # e
    5: (570.0, 840.0, 2410.0),    # o
}
FRICATIVE = 6
N_PHONES = 7

_FORMANT_BW = (80.0, 100.0, 140.0)


def _resonator_cascade(x: np.ndarray, formants: tuple[float, ...], sr: int) -> np.ndarray:
    y = x
    for freq, bw in zip(formants, _FORMANT_BW):
        r = np.exp(-np.pi * bw / sr)
        w = 2.0 * np.pi * freq / sr
        y = lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(w), r * r], y)
    return y


def _pulse_train(f0_per_sample: np.ndarray, sr: int) -> np.ndarray:
    phase = np.cumsum(f0_per_sample / sr)
    out = np.zeros(len(f0_per_sample))
    ticks = np.floor(phase).astype(np.int64)
    onsets = np.nonzero(np.diff(np.concatenate(([0], ticks))) > 0)[0]
    out[onsets] = 1.0
    return out


def _ramp(n: int, edge: int) -> np.ndarray:
    env = np.ones(n)
    e = min(edge, n // 2)
    if e > 0:
        env[:e] = np.linspace(0.0, 1.0, e)
        env[-e:] = np.linspace(1.0, 0.0, e)
    return env


@dataclass
class SpeakerSpec:
    """Control knobs that make synthetic speakers distinguishable."""

    f0_base: float = 150.0
    formant_scale: float = 1.0
    level: float = 0.25


def make_utterance(
    duration_s: float,
    sample_rate: int = 16000,
    speaker: SpeakerSpec | None = None,
    seed: int = 0,
    hop_s: float = 0.010,
) -> tuple[Waveform, np.ndarray]:
    """One speech-like utterance plus its per-frame phone labels.

    Returns (waveform, labels) where labels has 1 + n_samples // hop entries,
    matching the frame count of every extractor in this package.
    """
    if speaker is None:
        speaker = SpeakerSpec()
    sr = sample_rate
    rng = np.random.default_rng(seed)
    n_total = int(round(duration_s * sr))

    samples = np.zeros(n_total)
    phone_per_sample = np.zeros(n_total, dtype=np.int64)

    pos = int(round(rng.uniform(0.04, 0.08) * sr))  # leading silence
    # slow sentence declination over the utterance
    declination = np.linspace(1.04, 0.96, n_total)
    while pos < n_total - int(0.05 * sr):
        if rng.uniform() < 0.22:
            # fricative-like burst
            n = int(round(rng.uniform(0.08, 0.14) * sr))
            n = min(n, n_total - pos)
            noise = rng.standard_normal(n)
            b, a = butter(4, 3000.0 / (sr / 2.0), btype="high")
            burst = lfilter(b, a, noise)
            burst *= 0.25 * speaker.level / max(np.std(burst), 1e-9)
            samples[pos : pos + n] += burst * _ramp(n, int(0.005 * sr))
            phone_per_sample[pos : pos + n] = FRICATIVE
        else:
            # voiced vowel segment with wandering f0
            n = int(round(rng.uniform(0.18, 0.34) * sr))
            n = min(n, n_total - pos)
            phone = int(rng.integers(1, len(VOWELS) + 1))
            walk = np.cumsum(rng.normal(0.0, 0.015, n))
            walk -= np.linspace(walk[0], walk[-1], n) * 0.5  # keep the drift bounded
            semitones = np.clip(walk + rng.normal(0.0, 0.6), -2.0, 2.0)
            f0 = speaker.f0_base * 2.0 ** (semitones / 12.0) * declination[pos : pos + n]
            voiced = _pulse_train(f0, sr)
            formants = tuple(f * speaker.formant_scale for f in VOWELS[phone])
            seg = _resonator_cascade(voiced, formants, sr)
            seg /= max(np.std(seg), 1e-9)  # resonators attenuate heavily; renormalize
            seg += 0.01 * rng.standard_normal(n)  # breath noise, -40 dB
            seg *= speaker.level
            samples[pos : pos + n] += seg * _ramp(n, int(0.01 * sr))
            phone_per_sample[pos : pos + n] = phone
        pos += n
        gap = int(round(rng.uniform(0.01, 0.06) * sr))
        pos += gap

    samples += 1e-4 * rng.standard_normal(n_total)  # room-tone floor
    peak = np.max(np.abs(samples))
    if peak > 0.98:
        samples *= 0.98 / peak

    hop = int(round(hop_s * sr))
    n_frames = 1 + n_total // hop
    centers = np.minimum(np.arange(n_frames) * hop, n_total - 1)
    labels = phone_per_sample[centers]
    return Waveform(samples.astype(np.float32), sr), labels


def make_corpus(
    root: Path | str,
    speakers: dict[str, SpeakerSpec],
    utterances_per_speaker: int = 4,
    duration_s: float = 2.0,
    sample_rate: int = 16000,
    seed: int = 0,
) -> Path:
    """Write a small wav corpus + manifest + per-utterance label files.

    Layout: <root>/<speaker>_<k>.wav, matching <id>.labels.npy, and
    <root>/manifest.txt. Returns the manifest path.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    utts = []
    for s_idx, (name, spk) in enumerate(sorted(speakers.items())):
        for k in range(utterances_per_speaker):
            utt_id = f"{name}_{k}"
            wave, labels = make_utterance(
                duration_s,
                sample_rate,
                spk,
                seed=seed + 1000 * s_idx + k,
            )
            wav_path = root / f"{utt_id}.wav"
            save_wav(wav_path, wave)
            np.save(root / f"{utt_id}.labels.npy", labels)
            utts.append(Utterance(utt_id, name, str(wav_path), wave.duration))
    manifest_path = root / "manifest.txt"
    save_manifest(manifest_path, Manifest(utts))
    return manifest_path


def load_labels(root: Path | str, utt_id: str) -> np.ndarray:
    path = Path(root) / f"{utt_id}.labels.npy"
    return np.load(path)
