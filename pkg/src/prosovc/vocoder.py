"""Deterministic LPC vocoder.

Each acoustic frame (30 cepstral coefficients + normalized pitch period +
pitch correlation) becomes one hop of audio: the cepstra are inverted to a
16th-order all-pole envelope, a mixed pulse/noise excitation is shaped by
the frame's pitch and correlation, and the filter runs with its memory
carried across frames. Filter coefficients are interpolated in the
reflection-coefficient domain over sub-blocks inside every hop, which keeps
the filter stable and avoids frame-rate zipper artifacts.

The streaming synthesizer is the real implementation; batch synthesis just
drives it frame by frame and applies the final peak normalization. Both
paths therefore produce bit-identical waveforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.signal import lfilter

from .dsp import FrameSpec, bfcc_to_lpc, period_scale, reflection_to_lpc
from .errors import DataError

PEAK_LEVEL = 0.89
NOISE_SEED = 0x5EED

# two-tap lowpass gives the pulse train a gentle glottal-like tilt;
# unit energy so the voiced/unvoiced mix stays power-balanced
_PULSE_SHAPE = np.array([1.0, 0.6]) / np.sqrt(1.0 + 0.36)


@dataclass
class SynthesisConfig:
    lpc_order: int = 16
    f0_min: float = 50.0
    voicing_threshold: float = 0.3
    subframes_per_hop: int = 4
    n_bands: int = 30

    def __post_init__(self) -> None:
        if self.lpc_order < 1:
            raise DataError("lpc_order must be >= 1")
        if self.subframes_per_hop < 1:
            raise DataError("subframes_per_hop must be >= 1")


class StreamingSynthesizer:
    """Feed acoustic frames in order; get one hop of raw audio back per frame.

    Blocks come out before peak normalization (a whole-signal operation);
    finish() returns the scale factor to apply to everything emitted. State
    carried between frames: filter memory, previous frame's reflection
    coefficients and gain, pulse phase, pulse-shaping tap, noise generator.
    """

    def __init__(self, spec: FrameSpec, config: SynthesisConfig | None = None) -> None:
        self.spec = spec
        self.config = config or SynthesisConfig()
        if spec.hop_length % self.config.subframes_per_hop != 0:
            raise DataError(
                f"hop length {spec.hop_length} not divisible by "
                f"{self.config.subframes_per_hop} subframes"
            )
        self._rng = np.random.default_rng(NOISE_SEED)
        self._zi = np.zeros(self.config.lpc_order)
        self._prev_k: np.ndarray | None = None
        self._prev_gain = 0.0
        self._pulse_phase = 0.0
        self._pulse_tap = 0.0
        self._peak = 0.0
        self.next_index = 0

    def _excitation(self, period: float, corr: float, voiced: bool) -> np.ndarray:
        hop = self.spec.hop_length
        noise = self._rng.standard_normal(hop)
        if not voiced:
            self._pulse_phase = 0.0
            self._pulse_tap = 0.0
            return noise
        pulses = np.zeros(hop)
        phase = self._pulse_phase
        amp = np.sqrt(period)  # unit average power for an impulse train
        while phase < hop:
            pulses[int(phase)] = amp
            phase += period
        self._pulse_phase = phase - hop
        shaped = _PULSE_SHAPE[0] * pulses
        shaped[0] += _PULSE_SHAPE[1] * self._pulse_tap
        shaped[1:] += _PULSE_SHAPE[1] * pulses[:-1]
        self._pulse_tap = pulses[-1]
        return corr * shaped + np.sqrt(max(1.0 - corr * corr, 0.0)) * noise

    def feed(self, index: int, frame: np.ndarray) -> np.ndarray:
        """Synthesize one hop from acoustic frame `index` (must be in order)."""
        if index != self.next_index:
            raise DataError(
                f"streaming frames out of order: got {index}, expected {self.next_index}"
            )
        frame = np.asarray(frame, dtype=np.float64)
        cfg = self.config
        if frame.ndim != 1 or len(frame) != cfg.n_bands + 2:
            raise DataError(
                f"acoustic frame must have {cfg.n_bands + 2} values, got shape {frame.shape}"
            )
        if not np.all(np.isfinite(frame)):
            raise DataError(f"acoustic frame {index} contains non-finite values")

        lpc = bfcc_to_lpc(frame[: cfg.n_bands], self.spec, cfg.lpc_order)
        period = float(frame[cfg.n_bands]) * period_scale(self.spec.sample_rate, cfg.f0_min)
        corr = float(np.clip(frame[cfg.n_bands + 1], 0.0, 1.0))
        voiced = corr >= cfg.voicing_threshold and period > 2.0

        exc = self._excitation(period, corr, voiced)

        prev_k = self._prev_k if self._prev_k is not None else lpc.reflection
        prev_gain = self._prev_gain if self._prev_k is not None else lpc.gain
        hop = self.spec.hop_length
        sub = hop // cfg.subframes_per_hop
        block = np.empty(hop)
        for j in range(cfg.subframes_per_hop):
            alpha = (j + 1) / cfg.subframes_per_hop
            k = prev_k + alpha * (lpc.reflection - prev_k)
            gain = prev_gain + alpha * (lpc.gain - prev_gain)
            a = reflection_to_lpc(k)
            denom = np.concatenate(([1.0], -a))
            seg, self._zi = lfilter(
                [1.0], denom, gain * exc[j * sub : (j + 1) * sub], zi=self._zi
            )
            block[j * sub : (j + 1) * sub] = seg

        self._prev_k = lpc.reflection
        self._prev_gain = lpc.gain
        self._peak = max(self._peak, float(np.max(np.abs(block))))
        self.next_index = index + 1
        return block

    def finish(self) -> float:
        """Scale factor that peak-normalizes everything emitted so far."""
        if self._peak <= 0.0:
            return 1.0
        return PEAK_LEVEL / self._peak


def synthesize(
    features: np.ndarray,
    spec: FrameSpec,
    config: SynthesisConfig | None = None,
) -> np.ndarray:
    """Acoustic features (T, 32) -> float32 waveform of exactly T * hop samples,
    peak-normalized to 0.89."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise DataError(f"acoustic features must be 2-D, got shape {features.shape}")
    synth = StreamingSynthesizer(spec, config)
    blocks = [synth.feed(t, features[t]) for t in range(features.shape[0])]
    scale = synth.finish()
    if not blocks:
        return np.zeros(0, dtype=np.float32)
    return (np.concatenate(blocks) * scale).astype(np.float32)


def synthesize_streaming(
    frames: Iterator[np.ndarray] | np.ndarray,
    spec: FrameSpec,
    config: SynthesisConfig | None = None,
) -> Iterator[tuple[str, int, np.ndarray | float]]:
    """Generator protocol for streaming consumers.

    Yields ("block", index, raw_block) per frame as soon as the frame is
    available, then one final ("scale", n_frames, scale) event; applying the
    scale to the collected blocks reproduces the batch output bit for bit.
    """
    synth = StreamingSynthesizer(spec, config)
    index = 0
    for frame in frames:
        yield "block", index, synth.feed(index, np.asarray(frame))
        index += 1
    yield "scale", index, synth.finish()
