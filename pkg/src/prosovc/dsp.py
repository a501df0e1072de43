"""Deterministic signal analysis.

Framing / STFT / mel and Bark filterbank energies / Bark-frequency cepstra,
a normalized-autocorrelation pitch tracker, Levinson-Durbin recursion, and
the cepstrum-to-LPC conversion the vocoder runs on. Everything here is pure
numpy/scipy with no learned state, so the same input always produces the
same output bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
from scipy.signal import medfilt

from .errors import DataError

LOG_FLOOR = 1e-10

# ---------------------------------------------------------------------------
# Frame geometry


@dataclass(frozen=True)
class FrameSpec:
    """Analysis frame geometry. All extractors share one of these so their
    frame counts line up exactly."""

    sample_rate: int = 16000
    hop_s: float = 0.010
    win_s: float = 0.025
    fft_size: int = 512

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.hop_s <= 0 or self.win_s <= 0:
            raise DataError("hop_s and win_s must be positive")
        if self.win_s < self.hop_s:
            raise DataError("analysis window must be at least one hop long")
        if self.fft_size < self.win_length:
            raise DataError(
                f"fft_size {self.fft_size} shorter than window ({self.win_length} samples)"
            )

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_s * self.sample_rate))

    @property
    def win_length(self) -> int:
        return int(round(self.win_s * self.sample_rate))

    def n_frames(self, n_samples: int) -> int:
        """Frame count for a signal of n_samples (center-padded analysis)."""
        return 1 + n_samples // self.hop_length


def _frame_signal(
    x: np.ndarray, frame_length: int, hop: int, pad_mode: str = "reflect"
) -> np.ndarray:
    """Slice a center-padded signal into overlapping frames.

    The signal is padded by frame_length // 2 on both sides so frame t is
    centered on sample t * hop, giving 1 + len(x) // hop frames. Spectral
    analysis reflects at the edges; pitch analysis zero-pads instead, because
    a mirrored waveform correlates with itself at bogus lags.
    """
    pad = frame_length // 2
    if len(x) <= pad:
        raise DataError(f"signal too short to frame: {len(x)} samples, window {frame_length}")
    xp = np.pad(x, pad, mode=pad_mode)
    n = 1 + len(x) // hop
    idx = np.arange(frame_length)[None, :] + hop * np.arange(n)[:, None]
    return xp[idx]


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the variant whose 50%-overlap sum is exactly flat
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


# ---------------------------------------------------------------------------
# Filterbanks


def hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hz_to_bark(f: np.ndarray | float) -> np.ndarray | float:
    """Traunmueller's critical-band rate."""
    f = np.asarray(f, dtype=np.float64)
    return 26.81 * f / (1960.0 + f) - 0.53


def bark_to_hz(z: np.ndarray | float) -> np.ndarray | float:
    z = np.asarray(z, dtype=np.float64)
    return 1960.0 * (z + 0.53) / (26.28 - z)


def _triangle_bank(edges_hz: np.ndarray, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular filters over rfft bins from a vector of n_bands + 2 edge
    frequencies. Each row is normalized to unit weight sum so a flat power
    spectrum yields flat band energies."""
    n_bands = len(edges_hz) - 2
    freqs = np.arange(fft_size // 2 + 1) * (sample_rate / fft_size)
    bank = np.zeros((n_bands, len(freqs)))
    for m in range(n_bands):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        up = (freqs - lo) / max(center - lo, 1e-9)
        down = (hi - freqs) / max(hi - center, 1e-9)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
        s = bank[m].sum()
        if s <= 0.0:
            raise DataError(
                f"filter band {m} catches no spectrum bins; increase fft_size"
            )
        bank[m] /= s
    return bank


@lru_cache(maxsize=8)
def mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """(n_mels, fft_size // 2 + 1) triangular filters, mel-spaced over [0, sr/2]."""
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2))
    return _triangle_bank(np.asarray(edges), fft_size, sample_rate)


@lru_cache(maxsize=8)
def bark_filterbank(n_bands: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """(n_bands, fft_size // 2 + 1) triangular filters, Bark-spaced over [0, sr/2]."""
    edges = bark_to_hz(np.linspace(hz_to_bark(0.0), hz_to_bark(sample_rate / 2.0), n_bands + 2))
    return _triangle_bank(np.asarray(edges), fft_size, sample_rate)


@lru_cache(maxsize=8)
def bark_band_centers(n_bands: int, sample_rate: int) -> np.ndarray:
    """Center frequencies (Hz) of the Bark bands, for envelope interpolation."""
    edges = bark_to_hz(np.linspace(hz_to_bark(0.0), hz_to_bark(sample_rate / 2.0), n_bands + 2))
    return np.asarray(edges)[1:-1]


# ---------------------------------------------------------------------------
# Spectrogram features


def power_spectrogram(x: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """(T, fft_size // 2 + 1) Hann-windowed power spectrogram."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"expected 1-D signal, got shape {x.shape}")
    if len(x) < spec.win_length:
        raise DataError(
            f"signal too short: {len(x)} samples < window {spec.win_length}"
        )
    frames = _frame_signal(x, spec.win_length, spec.hop_length)
    frames = frames * _hann(spec.win_length)
    spectrum = np.fft.rfft(frames, n=spec.fft_size, axis=1)
    return np.abs(spectrum) ** 2


def mel_spectrogram(x: np.ndarray, spec: FrameSpec, n_mels: int = 80) -> np.ndarray:
    """(T, n_mels) log mel-band energies, floored before the log."""
    power = power_spectrogram(x, spec)
    bank = mel_filterbank(n_mels, spec.fft_size, spec.sample_rate)
    energies = power @ bank.T
    return np.log(np.maximum(energies, LOG_FLOOR)).astype(np.float32)


def bark_band_energies(x: np.ndarray, spec: FrameSpec, n_bands: int = 30) -> np.ndarray:
    """(T, n_bands) log Bark-band energies."""
    power = power_spectrogram(x, spec)
    bank = bark_filterbank(n_bands, spec.fft_size, spec.sample_rate)
    energies = power @ bank.T
    return np.log(np.maximum(energies, LOG_FLOOR))


def bfcc(x: np.ndarray, spec: FrameSpec, n_bands: int = 30) -> np.ndarray:
    """(T, n_bands) Bark-frequency cepstral coefficients.

    Orthonormal DCT-II of the log Bark-band energies; keeping all n_bands
    coefficients makes the transform exactly invertible, which the vocoder
    relies on.
    """
    log_e = bark_band_energies(x, spec, n_bands)
    return scipy.fft.dct(log_e, type=2, norm="ortho", axis=1).astype(np.float32)


def bfcc_to_band_energies(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of the cepstral transform: coefficients back to log band energies."""
    return scipy.fft.idct(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho", axis=-1)


# ---------------------------------------------------------------------------
# Pitch


@dataclass
class PitchTrack:
    """Per-frame f0 (Hz, 0 when unvoiced), voicing flag, pitch period in
    samples (0 when unvoiced), and clamped peak autocorrelation."""

    f0: np.ndarray
    vuv: np.ndarray
    period: np.ndarray
    correlation: np.ndarray

    def __post_init__(self) -> None:
        self.f0 = np.asarray(self.f0, dtype=np.float32)
        self.vuv = np.asarray(self.vuv, dtype=np.float32)
        self.period = np.asarray(self.period, dtype=np.float32)
        self.correlation = np.asarray(self.correlation, dtype=np.float32)
        n = len(self.f0)
        for name in ("vuv", "period", "correlation"):
            if len(getattr(self, name)) != n:
                raise DataError(f"pitch track field {name} length mismatch")
        if np.any((self.vuv != 0.0) & (self.vuv != 1.0)):
            raise DataError("vuv flags must be 0 or 1")
        if np.any((self.vuv == 1.0) != (self.f0 > 0.0)):
            raise DataError("voiced flag must match f0 > 0")
        if np.any(self.correlation < 0.0) or np.any(self.correlation > 1.0):
            raise DataError("correlation must lie in [0, 1]")

    @property
    def n_frames(self) -> int:
        return len(self.f0)


def track_pitch(
    x: np.ndarray,
    spec: FrameSpec,
    f0_min: float = 50.0,
    f0_max: float = 600.0,
    vuv_threshold: float = 0.3,
    median_width: int = 5,
) -> PitchTrack:
    """Normalized-autocorrelation pitch tracker.

    Per frame: mean removal, FFT autocorrelation normalized by the energies
    of the two lag-shifted segments, peak search over the lag range
    [sr/f0_max, sr/f0_min]. To dodge octave errors the chosen peak is the
    *shortest* lag among local maxima within 90% of the global peak (a
    doubled-period peak matches the true one, so prefer the true one).
    Sub-sample lag via parabolic interpolation, then a median filter over the
    f0 track; voicing is wherever the filtered track is nonzero.
    """
    x = np.asarray(x, dtype=np.float64)
    sr = spec.sample_rate
    lag_min = max(2, int(sr / f0_max))
    lag_max = int(np.ceil(sr / f0_min))
    window = max(spec.win_length, 2 * lag_max)
    if len(x) < window:
        raise DataError(
            f"signal too short for pitch analysis: need {window} samples, got {len(x)}"
        )
    frames = _frame_signal(x, window, spec.hop_length, pad_mode="constant")
    n = frames.shape[0]
    nfft = scipy.fft.next_fast_len(2 * window)

    f0_raw = np.zeros(n)
    corr = np.zeros(n)
    for t in range(n):
        seg = frames[t] - frames[t].mean()
        energy = float(seg @ seg)
        if energy / window < 1e-10:  # silence
            continue
        spectrum = np.fft.rfft(seg, nfft)
        ac = np.fft.irfft(np.abs(spectrum) ** 2, nfft)[: lag_max + 2]
        csum = np.concatenate(([0.0], np.cumsum(seg * seg)))
        lags = np.arange(lag_max + 2)
        e_head = csum[window - lags]           # energy of seg[: window - l]
        e_tail = csum[window] - csum[lags]     # energy of seg[l :]
        nccf = ac / (np.sqrt(e_head * e_tail) + 1e-12)

        region = nccf[lag_min : lag_max + 1]
        pmax = float(region.max())
        corr[t] = min(max(pmax, 0.0), 1.0)
        if pmax < vuv_threshold:
            continue
        # local maxima strictly inside the searchable range
        interior = nccf[1:-1]
        is_peak = (interior >= nccf[:-2]) & (interior >= nccf[2:])
        peak_lags = np.nonzero(is_peak)[0] + 1
        peak_lags = peak_lags[(peak_lags >= lag_min) & (peak_lags <= lag_max)]
        strong = peak_lags[nccf[peak_lags] >= 0.9 * pmax]
        lag0 = int(strong.min()) if len(strong) else int(lag_min + np.argmax(region))
        y1, y2, y3 = nccf[lag0 - 1], nccf[lag0], nccf[lag0 + 1]
        denom = y1 - 2.0 * y2 + y3
        delta = 0.0 if abs(denom) < 1e-12 else 0.5 * (y1 - y3) / denom
        delta = min(max(delta, -0.5), 0.5)
        lag = lag0 + delta
        peak = y2 - 0.25 * (y1 - y3) * delta
        f0_raw[t] = min(max(sr / lag, f0_min), f0_max)
        corr[t] = min(max(peak, 0.0), 1.0)

    f0_med = medfilt(f0_raw, kernel_size=median_width)
    vuv = (f0_med > 0.0).astype(np.float32)
    f0 = np.where(vuv > 0, f0_med, 0.0)
    period = np.where(vuv > 0, sr / np.maximum(f0, 1e-9), 0.0)
    return PitchTrack(f0, vuv, period, corr)


def period_scale(sample_rate: int, f0_min: float) -> float:
    """Longest trackable pitch period in samples; features store period / this."""
    return sample_rate / f0_min


# ---------------------------------------------------------------------------
# Linear prediction


@dataclass
class LpcCoefficients:
    """Predictor coefficients a with x_hat[n] = sum_i a[i] x[n - i - 1],
    residual gain, and the reflection coefficients from the recursion."""

    order: int
    coeffs: np.ndarray
    gain: float
    reflection: np.ndarray

    def __post_init__(self) -> None:
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.reflection = np.asarray(self.reflection, dtype=np.float64)
        if len(self.coeffs) != self.order or len(self.reflection) != self.order:
            raise DataError("LPC coefficient array length must equal order")


def levinson_durbin(autocorr: np.ndarray, order: int = 16) -> LpcCoefficients:
    """Solve the Toeplitz normal equations by Levinson-Durbin recursion.

    Raises DataError on non-positive zero-lag energy or on a reflection
    coefficient reaching magnitude 1 (an unstable filter); no silent
    clamping, callers must condition their autocorrelations.
    """
    r = np.asarray(autocorr, dtype=np.float64)
    if r.ndim != 1 or len(r) < order + 1:
        raise DataError(f"need {order + 1} autocorrelation lags, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise DataError("autocorrelation contains non-finite values")
    if r[0] <= 0.0:
        raise DataError(f"autocorrelation r[0] must be positive, got {r[0]}")
    a = np.zeros(order)
    k = np.zeros(order)
    err = float(r[0])
    for i in range(order):
        acc = r[i + 1] - np.dot(a[:i], r[i:0:-1])
        ki = acc / err
        if not np.isfinite(ki) or abs(ki) >= 1.0:
            raise DataError(f"unstable reflection coefficient k[{i + 1}] = {ki:.6g}")
        k[i] = ki
        a[:i] = a[:i] - ki * a[:i][::-1]
        a[i] = ki
        err *= 1.0 - ki * ki
    return LpcCoefficients(order, a, float(np.sqrt(err)), k)


def reflection_to_lpc(k: np.ndarray) -> np.ndarray:
    """Step-up recursion: reflection coefficients to predictor coefficients."""
    k = np.asarray(k, dtype=np.float64)
    a = np.zeros(len(k))
    for i, ki in enumerate(k):
        a[:i] = a[:i] - ki * a[:i][::-1]
        a[i] = ki
    return a


def bfcc_to_lpc(
    coeffs: np.ndarray,
    spec: FrameSpec,
    order: int = 16,
    n_bands: int | None = None,
) -> LpcCoefficients:
    """Convert one frame of cepstral coefficients to an all-pole envelope.

    Inverse DCT recovers the Bark-band log energies; linear interpolation
    against the band center frequencies resamples them onto the linear rfft
    grid; exponentiation gives a power spectral density whose inverse FFT is
    an autocorrelation sequence for the Levinson recursion. A tiny noise
    floor on r[0] and a Gaussian-ish lag window keep the recursion away from
    |k| = 1 on razor-flat or spiky envelopes.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1:
        raise DataError(f"expected one frame of coefficients, got shape {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise DataError("cepstral frame contains non-finite values")
    if n_bands is None:
        n_bands = len(coeffs)
    log_e = bfcc_to_band_energies(coeffs)
    centers = bark_band_centers(n_bands, spec.sample_rate)
    bins = np.arange(spec.fft_size // 2 + 1) * (spec.sample_rate / spec.fft_size)
    log_psd = np.interp(bins, centers, log_e)
    psd = np.exp(np.minimum(log_psd, 60.0))  # cap keeps exp finite on garbage input
    r = np.fft.irfft(psd)[: order + 1]
    lags = np.arange(order + 1)
    r = r * (1.0 - 6e-5 * lags * lags)
    r[0] *= 1.0 + 1e-4
    return levinson_durbin(r, order)


def lpc_envelope_db(lpc: LpcCoefficients, spec: FrameSpec) -> np.ndarray:
    """All-pole magnitude envelope in dB over the rfft grid (for tests/eval)."""
    a = np.concatenate(([1.0], -lpc.coeffs))
    spectrum = np.fft.rfft(a, spec.fft_size)
    mag = lpc.gain / np.maximum(np.abs(spectrum), 1e-12)
    return 20.0 * np.log10(np.maximum(mag, 1e-12))


# ---------------------------------------------------------------------------
# Acoustic feature assembly


def assemble_acoustic(
    cepstra: np.ndarray,
    pitch: PitchTrack,
    spec: FrameSpec,
    f0_min: float = 50.0,
) -> np.ndarray:
    """Stack vocoder features: n_bands cepstra + normalized pitch period +
    peak correlation, (T, n_bands + 2) float32.

    The period column is period / (sr / f0_min), clipped to [0, 1] so the
    longest trackable period maps to 1 and unvoiced frames to 0.
    """
    cepstra = np.asarray(cepstra, dtype=np.float32)
    if cepstra.ndim != 2:
        raise DataError(f"cepstra must be 2-D, got shape {cepstra.shape}")
    if cepstra.shape[0] != pitch.n_frames:
        raise DataError(
            f"frame count mismatch: {cepstra.shape[0]} cepstral vs {pitch.n_frames} pitch"
        )
    norm = np.clip(pitch.period / period_scale(spec.sample_rate, f0_min), 0.0, 1.0)
    return np.column_stack([cepstra, norm.astype(np.float32), pitch.correlation]).astype(
        np.float32
    )
