"""Conversion model architecture tests: shapes, masking, determinism."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from prosovc.errors import DataError
from prosovc.nets import (
    CbhgBlock,
    ConversionModel,
    Highway,
    ModelConfig,
    ReferenceEncoder,
    assemble_input,
    build_model,
    conv_output_length,
    encode_f0,
)

TINY = dict(
    conv_bank_size=4,
    conv_channels=16,
    highway_units=16,
    gru_units=16,
    ref_enc_filters=(4, 4, 8, 8, 16, 16),
)


# ---------------------------------------------------------------------------
# input assembly


def test_encode_f0_range_and_anchors():
    f0 = np.array([0.0, 50.0, 600.0, 173.2, 40.0, 700.0])
    vuv = np.array([0.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    out = encode_f0(f0, vuv)
    assert out[0] == 0.0          # unvoiced
    assert out[1] == 0.0          # floor of the voiced range
    assert out[2] == 1.0          # ceiling
    assert 0.0 < out[3] < 1.0
    assert out[4] == 0.0 and out[5] == 1.0  # clipped outside the range


def test_encode_f0_midpoint():
    # geometric mean of 50 and 600 sits exactly at 0.5
    mid = np.sqrt(50.0 * 600.0)
    out = encode_f0(np.array([mid]), np.array([1.0]))
    assert out[0] == pytest.approx(0.5, abs=1e-6)


def test_assemble_input_widths():
    t, d_p = 7, 40
    ppg = np.full((t, d_p), 1.0 / d_p, np.float32)
    f0 = np.full(t, 120.0)
    vuv = np.ones(t)
    base = assemble_input(ppg, f0, vuv, None, "baseline")
    assert base.shape == (t, d_p + 2)
    pros = np.zeros((t, 3), np.float32)
    full = assemble_input(ppg, f0, vuv, pros, "proposed")
    assert full.shape == (t, d_p + 2 + 3)
    # layout: ppg block, then f0, then vuv, then prosody
    np.testing.assert_array_equal(full[:, :d_p], ppg)
    assert np.all(full[:, d_p + 1] == 1.0)


def test_assemble_input_mode_mismatches():
    ppg = np.full((3, 4), 0.25, np.float32)
    f0, vuv = np.zeros(3), np.zeros(3)
    with pytest.raises(DataError, match="requires"):
        assemble_input(ppg, f0, vuv, None, "proposed")
    with pytest.raises(DataError, match="baseline"):
        assemble_input(ppg, f0, vuv, np.zeros((3, 1), np.float32), "baseline")
    with pytest.raises(DataError, match="mismatch"):
        assemble_input(ppg, np.zeros(4), vuv, None, "baseline")


# ---------------------------------------------------------------------------
# reference encoder


def test_conv_output_length_chain():
    # 80 mel bins halve (ceil) through six stride-2 layers: 40 20 10 5 3 2
    lengths = [80]
    for _ in range(6):
        lengths.append(conv_output_length(lengths[0], len(lengths)))
    assert lengths == [80, 40, 20, 10, 5, 3, 2]


def test_reference_encoder_shapes_and_gru_width():
    enc = ReferenceEncoder(n_mels=80, embedding_dim=1)
    assert enc.gru_in_dim == 128 * 2  # last conv channels x remaining bins
    mel = torch.randn(3, 17, 80)
    out = enc(mel)
    assert out.shape == (3, 17, 1)


def test_reference_encoder_output_is_bounded(utts):
    enc = ReferenceEncoder(n_mels=80, embedding_dim=2)
    mel = torch.from_numpy(utts.get(seed=90, duration_s=1.3).mel).unsqueeze(0)
    out = enc(mel)
    assert out.abs().max().item() < 1.0  # GRU states live in (-1, 1)


def test_reference_encoder_batch_norm_toggle():
    plain = ReferenceEncoder(batch_norm=False)
    normed = ReferenceEncoder(batch_norm=True)
    has_bn = lambda m: any(isinstance(x, torch.nn.BatchNorm2d) for x in m.modules())
    assert not has_bn(plain)
    assert has_bn(normed)


def test_reference_encoder_rejects_wrong_width():
    enc = ReferenceEncoder(n_mels=80)
    with pytest.raises(DataError):
        enc(torch.randn(1, 5, 64))


# ---------------------------------------------------------------------------
# CBHG


@settings(max_examples=10, deadline=None)
@given(st.integers(3, 40))
def test_cbhg_preserves_sequence_length(t):
    torch.manual_seed(0)
    block = CbhgBlock(6, bank_size=4, channels=8, highway_units=8, gru_units=8)
    out = block(torch.randn(2, t, 6))
    assert out.shape == (2, t, 16)


def test_cbhg_rejects_wrong_width():
    block = CbhgBlock(6, 2, 4, 4, 1, 4)
    with pytest.raises(DataError):
        block(torch.randn(1, 5, 7))


def test_highway_gate_starts_near_identity():
    torch.manual_seed(0)
    layer = Highway(16)
    x = torch.randn(4, 16)
    # with the gate bias at -1 the layer output stays close to its input
    assert (layer(x) - x).abs().mean().item() < 0.5


def test_padding_does_not_leak_into_real_frames(utts):
    """A short utterance's outputs must be identical whether it is padded to
    a longer batch or run alone (eval mode, so batch-norm uses running
    statistics)."""
    torch.manual_seed(0)
    cfg = ModelConfig(mode="proposed", ppg_dim=8, **TINY)
    model = build_model(cfg, seed=1).eval()
    t_short, t_long = 20, 33
    base_short = torch.randn(1, t_short, 10)
    mel_short = torch.randn(1, t_short, 80)
    with torch.no_grad():
        alone = model(base_short, mel_short)

    base_pad = torch.zeros(2, t_long, 10)
    mel_pad = torch.zeros(2, t_long, 80)
    base_pad[0, :t_short] = base_short[0]
    mel_pad[0, :t_short] = mel_short[0]
    base_pad[1] = torch.randn(t_long, 10)
    mel_pad[1] = torch.randn(t_long, 80)
    lengths = torch.tensor([t_short, t_long])
    with torch.no_grad():
        batched = model(base_pad, mel_pad, lengths)
    assert torch.allclose(alone[0], batched[0, :t_short], atol=1e-5)


# ---------------------------------------------------------------------------
# full model


def test_model_dims_baseline_and_proposed():
    base_cfg = ModelConfig(mode="baseline", ppg_dim=512, prosody_dim=1)
    prop_cfg = ModelConfig(mode="proposed", ppg_dim=512, prosody_dim=1)
    assert base_cfg.in_dim == 514
    assert prop_cfg.in_dim == 515


def test_model_forward_shapes():
    cfg = ModelConfig(mode="proposed", ppg_dim=12, **TINY)
    model = build_model(cfg, 0)
    base = torch.randn(2, 9, 14)
    mel = torch.randn(2, 9, 80)
    out = model(base, mel)
    assert out.shape == (2, 9, 32)


def test_model_baseline_needs_no_mel():
    cfg = ModelConfig(mode="baseline", ppg_dim=12, **TINY)
    model = build_model(cfg, 0)
    out = model(torch.randn(1, 6, 14))
    assert out.shape == (1, 6, 32)
    prop = build_model(ModelConfig(mode="proposed", ppg_dim=12, **TINY), 0)
    with pytest.raises(DataError, match="mel"):
        prop(torch.randn(1, 6, 14))


def test_build_model_is_seed_deterministic():
    cfg = ModelConfig(mode="proposed", ppg_dim=6, **TINY)
    m1 = build_model(cfg, 42)
    m2 = build_model(cfg, 42)
    m3 = build_model(cfg, 43)
    s1, s2, s3 = m1.state_dict(), m2.state_dict(), m3.state_dict()
    assert all(torch.equal(s1[k], s2[k]) for k in s1)
    assert any(not torch.equal(s1[k], s3[k]) for k in s1)


def test_infer_matches_forward_features():
    cfg = ModelConfig(mode="baseline", ppg_dim=6, **TINY)
    model = build_model(cfg, 0)
    feats = np.random.default_rng(0).standard_normal((11, 8)).astype(np.float32)
    out1 = model.infer(feats)
    out2 = model.infer(feats)
    np.testing.assert_array_equal(out1, out2)  # inference is bit-stable
    assert out1.shape == (11, 32)


def test_encode_prosody_shape_and_bounds(utts):
    cfg = ModelConfig(mode="proposed", ppg_dim=6, prosody_dim=1, **TINY)
    model = build_model(cfg, 0)
    mel = utts.get(seed=90, duration_s=1.3).mel
    emb = model.encode_prosody(mel)
    assert emb.shape == (mel.shape[0], 1)
    assert np.all(np.abs(emb) < 1.0)
    baseline = build_model(ModelConfig(mode="baseline", ppg_dim=6, **TINY), 0)
    with pytest.raises(DataError):
        baseline.encode_prosody(mel)


def test_gradients_reach_reference_encoder():
    cfg = ModelConfig(mode="proposed", ppg_dim=6, **TINY)
    model = build_model(cfg, 0)
    base = torch.randn(2, 12, 8)
    mel = torch.randn(2, 12, 80)
    model(base, mel).abs().mean().backward()
    grads = [
        p.grad.abs().sum().item()
        for p in model.ref_encoder.parameters()
        if p.grad is not None
    ]
    assert grads and sum(grads) > 0


def test_model_config_round_trip():
    cfg = ModelConfig(mode="baseline", ppg_dim=17, conv_bank_size=8)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
