"""Shared fixtures: frame geometry, synthetic utterances, analysis cache.

Synthetic audio and its analysis are expensive on this box, so everything
derived from a (seed, duration) pair is computed once per session and shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
import torch

from prosovc import dsp
from prosovc.config import RunConfig
from prosovc.corpus import Waveform
from prosovc.synthetic import SpeakerSpec, make_utterance

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def spec() -> dsp.FrameSpec:
    return dsp.FrameSpec()


@pytest.fixture()
def run_config() -> RunConfig:
    return RunConfig()


@dataclass
class AnalyzedUtterance:
    wave: Waveform
    labels: np.ndarray
    mel: np.ndarray
    pitch: dsp.PitchTrack
    cepstra: np.ndarray
    acoustic: np.ndarray


class UtteranceBank:
    """Memoized synthetic utterances plus their frame-level analysis."""

    def __init__(self, spec: dsp.FrameSpec) -> None:
        self.spec = spec
        self._store: dict[tuple, AnalyzedUtterance] = {}

    def get(
        self,
        seed: int,
        duration_s: float = 2.0,
        f0_base: float = 150.0,
        formant_scale: float = 1.0,
    ) -> AnalyzedUtterance:
        key = (seed, duration_s, f0_base, formant_scale)
        if key not in self._store:
            speaker = SpeakerSpec(f0_base=f0_base, formant_scale=formant_scale)
            wave, labels = make_utterance(duration_s, self.spec.sample_rate, speaker, seed)
            mel = dsp.mel_spectrogram(wave.samples, self.spec)
            pitch = dsp.track_pitch(wave.samples, self.spec)
            cepstra = dsp.bfcc(wave.samples, self.spec)
            acoustic = dsp.assemble_acoustic(cepstra, pitch, self.spec)
            self._store[key] = AnalyzedUtterance(wave, labels, mel, pitch, cepstra, acoustic)
        return self._store[key]


@pytest.fixture(scope="session")
def utts(spec: dsp.FrameSpec) -> UtteranceBank:
    return UtteranceBank(spec)
