"""End-to-end plumbing that connects analysis, caching, models, and synthesis.

These functions are what the CLI calls; tests use them directly too. They
take a RunConfig plus explicit inputs and never reach into global state.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .augment import split_augmented_id, time_stretch
from .config import RunConfig
from .corpus import FeatureCache, FeatureRecord, Manifest, Waveform, load_wav
from .errors import DataError
from .nets import ConversionModel, ModelConfig, assemble_input
from .pitchstats import SpeakerPitchStats, convert_track, estimate_stats
from .ppg import FramePhoneClassifier, extract_ppg, load_external_ppg
from .training import TrainingSample
from .vocoder import SynthesisConfig, synthesize


def frame_spec(cfg: RunConfig) -> dsp.FrameSpec:
    a = cfg.audio
    return dsp.FrameSpec(a.sample_rate, a.hop_s, a.win_s, a.fft_size)


def synthesis_config(cfg: RunConfig) -> SynthesisConfig:
    return SynthesisConfig(
        lpc_order=cfg.vocoder.lpc_order,
        f0_min=cfg.pitch.f0_min,
        voicing_threshold=cfg.vocoder.voicing_threshold,
        subframes_per_hop=cfg.vocoder.subframes_per_hop,
        n_bands=cfg.audio.n_bark,
    )


def model_config(cfg: RunConfig, ppg_dim: int | None = None) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        mode=m.mode,
        ppg_dim=ppg_dim if ppg_dim is not None else cfg.ppg.n_classes,
        prosody_dim=m.prosody_dim,
        n_mels=cfg.audio.n_mels,
        out_dim=m.out_dim,
        conv_bank_size=m.conv_bank_size,
        conv_channels=m.conv_channels,
        highway_units=m.highway_units,
        highway_layers=m.highway_layers,
        gru_units=m.gru_units,
        ref_enc_filters=m.ref_enc_filters,
        ref_enc_batch_norm=m.ref_enc_batch_norm,
    )


def pitch_track_from_record(record: FeatureRecord) -> dsp.PitchTrack:
    data = record.data
    if data.shape[1] != 4:
        raise DataError(f"{record.utterance_id}: f0vuv record must have 4 columns")
    return dsp.PitchTrack(data[:, 0], data[:, 1], data[:, 2], data[:, 3])


@dataclass
class UtteranceFeatures:
    mel: np.ndarray
    pitch: dsp.PitchTrack
    acoustic: np.ndarray


def analyze(wave: Waveform, cfg: RunConfig) -> UtteranceFeatures:
    """All frame-synchronous analysis for one waveform."""
    spec = frame_spec(cfg)
    if wave.sample_rate != spec.sample_rate:
        raise DataError(
            f"sample rate {wave.sample_rate} does not match config {spec.sample_rate}; "
            "resample offline first"
        )
    mel = dsp.mel_spectrogram(wave.samples, spec, cfg.audio.n_mels)
    pitch = dsp.track_pitch(
        wave.samples,
        spec,
        cfg.pitch.f0_min,
        cfg.pitch.f0_max,
        cfg.pitch.vuv_threshold,
        cfg.pitch.median_width,
    )
    cepstra = dsp.bfcc(wave.samples, spec, cfg.audio.n_bark)
    acoustic = dsp.assemble_acoustic(cepstra, pitch, spec, cfg.pitch.f0_min)
    return UtteranceFeatures(mel, pitch, acoustic)


def load_utterance_audio(utt_audio_path: str, utt_id: str, cfg: RunConfig) -> Waveform:
    """Load a manifest entry's audio, applying its stretch factor if the id
    carries one (augmented copies are synthesized on the fly, never stored)."""
    _, factor = split_augmented_id(utt_id)
    wave = load_wav(utt_audio_path)
    if factor != 1.0:
        wave = time_stretch(
            wave,
            factor,
            cfg.augment.frame_s,
            cfg.augment.search_s,
            cfg.augment.min_factor,
            cfg.augment.max_factor,
        )
    return wave


def extract_corpus(
    cfg: RunConfig,
    manifest: Manifest,
    cache: FeatureCache,
    classifier: FramePhoneClassifier | None = None,
    skip_existing: bool = True,
) -> list[tuple[str, str]]:
    """Extract and cache mel / pitch / acoustic / posteriorgram features.

    Re-extracts anything missing or stale; already-valid records are left
    alone, so reruns are idempotent. Per-utterance failures don't abort the
    run -- they come back as (utt_id, message) pairs for the caller to report.
    """
    wants_ppg = classifier is not None or cfg.ppg.source == "external"
    kinds = ["mel", "f0vuv", "bfcc_acoustic"] + (["ppg"] if wants_ppg else [])
    failures: list[tuple[str, str]] = []
    for utt in manifest:
        try:
            if skip_existing and all(cache.has(utt.utt_id, k) for k in kinds):
                continue
            wave = load_utterance_audio(utt.audio_path, utt.utt_id, cfg)
            feats = analyze(wave, cfg)
            pitch_mat = np.column_stack(
                [feats.pitch.f0, feats.pitch.vuv, feats.pitch.period, feats.pitch.correlation]
            )
            cache.put(FeatureRecord(utt.utt_id, "mel", feats.mel))
            cache.put(FeatureRecord(utt.utt_id, "f0vuv", pitch_mat))
            cache.put(FeatureRecord(utt.utt_id, "bfcc_acoustic", feats.acoustic))
            if classifier is not None:
                probs = extract_ppg(classifier, feats.mel)
                cache.put(FeatureRecord(utt.utt_id, "ppg", probs))
            elif cfg.ppg.source == "external":
                if not cfg.ppg.external_dir:
                    raise DataError("ppg.source is 'external' but ppg.external_dir is unset")
                probs = load_external_ppg(
                    Path(cfg.ppg.external_dir) / f"{utt.utt_id}.npy",
                    expected_frames=feats.mel.shape[0],
                )
                cache.put(FeatureRecord(utt.utt_id, "ppg", probs))
        except DataError as exc:
            failures.append((utt.utt_id, str(exc)))
    return failures


def build_training_samples(
    manifest: Manifest, cache: FeatureCache
) -> list[TrainingSample]:
    """Assemble cached features into training samples (posteriorgram + pitch
    base inputs; the model adds its own prosody embedding from the mel)."""
    samples = []
    for utt in manifest:
        ppg_rec = cache.get(utt.utt_id, "ppg")
        pitch = pitch_track_from_record(cache.get(utt.utt_id, "f0vuv"))
        mel = cache.get(utt.utt_id, "mel").data
        target = cache.get(utt.utt_id, "bfcc_acoustic").data
        base = assemble_input(ppg_rec.data, pitch.f0, pitch.vuv, None, "baseline")
        samples.append(TrainingSample(utt.utt_id, base, mel, target))
    if not samples:
        raise DataError("manifest produced no training samples")
    return samples


def speaker_stats_from_cache(
    manifest: Manifest,
    cache: FeatureCache,
    speaker: str | None = None,
    min_voiced_frames: int = 100,
) -> SpeakerPitchStats:
    subset = manifest.for_speaker(speaker) if speaker else manifest
    if len(subset) == 0:
        raise DataError(f"no utterances for speaker {speaker!r}")
    tracks = [pitch_track_from_record(cache.get(u.utt_id, "f0vuv")) for u in subset]
    return estimate_stats(tracks, min_voiced_frames)


@dataclass
class ConversionResult:
    acoustic: np.ndarray
    waveform: Waveform
    source_pitch: dsp.PitchTrack
    converted_pitch: dsp.PitchTrack


def convert_waveform(
    wave: Waveform,
    cfg: RunConfig,
    model: ConversionModel,
    source_stats: SpeakerPitchStats,
    target_stats: SpeakerPitchStats,
    classifier: FramePhoneClassifier | None = None,
    ppg_matrix: np.ndarray | None = None,
) -> ConversionResult:
    """Full any-to-one conversion of a single utterance.

    Pitch is remapped to the target speaker's log-f0 distribution, the
    posteriorgram comes from the classifier (or is passed in precomputed),
    the prosody embedding is derived from the source mel when the model uses
    one, and the predicted acoustic features drive the vocoder. The output
    waveform has exactly T * hop samples for T input frames.
    """
    feats = analyze(wave, cfg)
    if ppg_matrix is not None:
        probs = np.asarray(ppg_matrix, dtype=np.float32)
        if probs.shape[0] != feats.mel.shape[0]:
            raise DataError(
                f"posteriorgram frames {probs.shape[0]} != audio frames {feats.mel.shape[0]}"
            )
    elif classifier is not None:
        probs = extract_ppg(classifier, feats.mel)
    else:
        raise DataError("conversion needs a classifier or a precomputed posteriorgram")
    if probs.shape[1] != model.config.ppg_dim:
        raise DataError(
            f"posteriorgram width {probs.shape[1]} != model ppg_dim {model.config.ppg_dim}"
        )
    converted = convert_track(feats.pitch, source_stats, target_stats, wave.sample_rate)
    prosody = model.encode_prosody(feats.mel) if model.config.mode == "proposed" else None
    features = assemble_input(probs, converted.f0, converted.vuv, prosody, model.config.mode)
    acoustic = model.infer(features)
    out = synthesize(acoustic, frame_spec(cfg), synthesis_config(cfg))
    return ConversionResult(
        acoustic, Waveform(out, wave.sample_rate), feats.pitch, converted
    )
