"""Conversion model: prosody reference encoder + CBHG feature mapper.

The reference encoder compresses a mel spectrogram into a per-frame,
low-dimensional prosody embedding (six strided 2-D convolutions over the
frequency axis, then a tanh-state GRU, so outputs live strictly in (-1, 1)).
The mapper is a CBHG stack -- a bank of width-1..K convolutions, max pooling
over time, projection convolutions with a residual connection, highway
layers, and a bidirectional GRU -- reading the concatenated posteriorgram /
pitch / prosody features and emitting vocoder features frame by frame.
Time resolution is preserved end to end: T frames in, T frames out.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, DataError

F0_FLOOR_HZ = 50.0
F0_CEIL_HZ = 600.0


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to rebuild a conversion model with matching shapes."""

    mode: str = "proposed"
    ppg_dim: int = 512
    prosody_dim: int = 1
    n_mels: int = 80
    out_dim: int = 32
    conv_bank_size: int = 16
    conv_channels: int = 128
    highway_units: int = 64
    highway_layers: int = 4
    gru_units: int = 64
    ref_enc_filters: tuple[int, ...] = (32, 32, 64, 64, 128, 128)
    ref_enc_batch_norm: bool = False

    def __post_init__(self) -> None:
        if self.mode not in ("baseline", "proposed"):
            raise ConfigError(f"mode must be 'baseline' or 'proposed', got {self.mode!r}")
        if self.ppg_dim < 1 or self.prosody_dim < 1:
            raise ConfigError("ppg_dim and prosody_dim must be >= 1")

    @property
    def in_dim(self) -> int:
        """Width of the assembled per-frame input: posteriorgram + f0 + vuv,
        plus the prosody embedding in proposed mode."""
        base = self.ppg_dim + 2
        return base + self.prosody_dim if self.mode == "proposed" else base

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ref_enc_filters"] = list(d["ref_enc_filters"])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        if "ref_enc_filters" in data:
            data["ref_enc_filters"] = tuple(data["ref_enc_filters"])
        return cls(**data)


def encode_f0(f0: np.ndarray, vuv: np.ndarray) -> np.ndarray:
    """Map f0 (Hz) to a bounded network input: voiced frames become
    (log f0 - log 50) / (log 600 - log 50) clipped to [0, 1], unvoiced frames
    are exactly 0; the vuv column disambiguates true 50 Hz from unvoiced."""
    f0 = np.asarray(f0, dtype=np.float64)
    vuv = np.asarray(vuv, dtype=np.float64)
    span = np.log(F0_CEIL_HZ) - np.log(F0_FLOOR_HZ)
    scaled = np.zeros_like(f0)
    voiced = (vuv > 0) & (f0 > 0)
    scaled[voiced] = np.clip(
        (np.log(f0[voiced]) - np.log(F0_FLOOR_HZ)) / span, 0.0, 1.0
    )
    return scaled.astype(np.float32)


def assemble_input(
    ppg: np.ndarray,
    f0: np.ndarray,
    vuv: np.ndarray,
    prosody: np.ndarray | None,
    mode: str,
) -> np.ndarray:
    """Concatenate [posteriorgram | encoded f0 | vuv | prosody?] per frame.

    All inputs must agree on frame count; prosody is required in proposed
    mode and rejected in baseline mode so a stale cache can't silently feed
    the wrong architecture.
    """
    ppg = np.asarray(ppg, dtype=np.float32)
    t = ppg.shape[0]
    if len(f0) != t or len(vuv) != t:
        raise DataError(
            f"frame count mismatch: ppg {t}, f0 {len(f0)}, vuv {len(vuv)}"
        )
    cols = [ppg, encode_f0(f0, vuv)[:, None], np.asarray(vuv, dtype=np.float32)[:, None]]
    if mode == "proposed":
        if prosody is None:
            raise DataError("proposed mode requires a prosody embedding")
        prosody = np.asarray(prosody, dtype=np.float32)
        if prosody.ndim != 2 or prosody.shape[0] != t:
            raise DataError(
                f"prosody embedding must be (T, D), got {prosody.shape} for T={t}"
            )
        cols.append(prosody)
    elif prosody is not None:
        raise DataError("baseline mode takes no prosody embedding")
    return np.concatenate(cols, axis=1)


# ---------------------------------------------------------------------------
# Reference encoder


def conv_output_length(length: int, n_layers: int) -> int:
    """Length after n_layers of stride-2 'same' convolutions (ceil division)."""
    for _ in range(n_layers):
        length = (length + 1) // 2
    return length


class ReferenceEncoder(nn.Module):
    """Mel spectrogram -> per-frame prosody embedding.

    A stack of 3x3 Conv2d layers strided (1, 2) halves the frequency axis at
    every layer while leaving the time axis untouched; the flattened
    channel x frequency features then feed a unidirectional GRU whose hidden
    state (tanh-bounded) is the embedding. No normalization layers by
    default; batch norm can be enabled per config."""

    def __init__(self, n_mels: int = 80,
                 filters: tuple[int, ...] = (32, 32, 64, 64, 128, 128),
                 embedding_dim: int = 1,
                 batch_norm: bool = False) -> None:
        super().__init__()
        self.n_mels = n_mels
        self.embedding_dim = embedding_dim
        layers: list[nn.Module] = []
        in_ch = 1
        for out_ch in filters:
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=(1, 2), padding=1))
            if batch_norm:
                layers.append(nn.BatchNorm2d(out_ch))
            layers.append(nn.ReLU())
            in_ch = out_ch
        self.convs = nn.ModuleList(layers)
        freq_out = conv_output_length(n_mels, len(filters))
        self.gru_in_dim = filters[-1] * freq_out
        self.gru = nn.GRU(self.gru_in_dim, embedding_dim, batch_first=True)

    def forward(self, mel: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """(B, T, n_mels) -> (B, T, embedding_dim), values in (-1, 1).

        With lengths given, activations past each sequence's end are zeroed
        after every layer; otherwise conv biases would turn batch padding
        into nonzero activations that the 3x3 kernels smear back into the
        last real frames."""
        if mel.dim() != 3 or mel.size(2) != self.n_mels:
            raise DataError(f"expected (B, T, {self.n_mels}) mel input, got {tuple(mel.shape)}")
        mask = None
        if lengths is not None:
            valid = torch.arange(mel.size(1), device=mel.device)[None, :] < lengths[:, None]
            mask = valid[:, None, :, None]  # (B, 1, T, 1)
        x = mel.unsqueeze(1)
        for layer in self.convs:
            x = layer(x)
            if mask is not None:
                x = x * mask
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        out, _ = self.gru(x)
        return out


# ---------------------------------------------------------------------------
# CBHG


class Highway(nn.Module):
    def __init__(self, units: int) -> None:
        super().__init__()
        self.transform = nn.Linear(units, units)
        self.gate = nn.Linear(units, units)
        # negative gate bias starts the layer close to identity
        nn.init.constant_(self.gate.bias, -1.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.transform(x))
        g = torch.sigmoid(self.gate(x))
        return h * g + x * (1.0 - g)


def _same_pad_1d(x: torch.Tensor, kernel: int) -> torch.Tensor:
    # asymmetric padding so even kernel widths preserve length exactly
    left = (kernel - 1) // 2
    return F.pad(x, (left, kernel - 1 - left))


class CbhgBlock(nn.Module):
    """Convolution bank + pooling + projections + highway + bidirectional GRU.

    Input and output are (B, T, *); sequence length is preserved through
    every stage. When lengths are given, frames past each sequence's end are
    zeroed between stages and the GRU runs packed, so batch padding cannot
    leak into real frames."""

    def __init__(self, in_dim: int, bank_size: int = 16, channels: int = 128,
                 highway_units: int = 64, highway_layers: int = 4,
                 gru_units: int = 64) -> None:
        super().__init__()
        self.in_dim = in_dim
        self.bank = nn.ModuleList(
            nn.Conv1d(in_dim, channels, kernel_size=k) for k in range(1, bank_size + 1)
        )
        self.bank_norms = nn.ModuleList(
            nn.BatchNorm1d(channels) for _ in range(bank_size)
        )
        self.proj1 = nn.Conv1d(bank_size * channels, channels, kernel_size=3, padding=1)
        self.proj1_norm = nn.BatchNorm1d(channels)
        self.proj2 = nn.Conv1d(channels, in_dim, kernel_size=3, padding=1)
        self.proj2_norm = nn.BatchNorm1d(in_dim)
        self.pre_highway = nn.Linear(in_dim, highway_units)
        self.highways = nn.ModuleList(Highway(highway_units) for _ in range(highway_layers))
        self.gru = nn.GRU(highway_units, gru_units, batch_first=True, bidirectional=True)
        self.out_dim = 2 * gru_units

    @staticmethod
    def _mask(x: torch.Tensor, lengths: torch.Tensor | None) -> torch.Tensor:
        if lengths is None:
            return x
        mask = torch.arange(x.size(1), device=x.device)[None, :] < lengths[:, None]
        return x * mask.unsqueeze(-1)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """(B, T, in_dim) -> (B, T, 2 * gru_units)."""
        if x.size(-1) != self.in_dim:
            raise DataError(f"expected input width {self.in_dim}, got {x.size(-1)}")
        # A (B, 1, T) mask for channels-first tensors. Every conv/pool below
        # reads neighboring frames, and conv bias + batch norm make padded
        # frames nonzero, so each stage's output is re-zeroed before the next
        # stage reads it -- matching the literal zero padding an unbatched
        # run would see.
        cmask = None
        if lengths is not None:
            valid = torch.arange(x.size(1), device=x.device)[None, :] < lengths[:, None]
            cmask = valid[:, None, :].to(x.dtype)
            x = x * valid.unsqueeze(-1)
        residual = x
        y = x.transpose(1, 2)  # (B, C, T)
        bank_out = []
        for k, (conv, norm) in enumerate(zip(self.bank, self.bank_norms), start=1):
            h = conv(_same_pad_1d(y, k))
            bank_out.append(F.relu(norm(h)))
        h = torch.cat(bank_out, dim=1)
        if cmask is not None:
            h = h * cmask
        h = F.max_pool1d(_same_pad_1d(h, 2), kernel_size=2, stride=1)
        h = F.relu(self.proj1_norm(self.proj1(h)))
        if cmask is not None:
            h = h * cmask
        h = self.proj2_norm(self.proj2(h))
        h = h.transpose(1, 2) + residual
        h = self._mask(h, lengths)
        h = self.pre_highway(h)
        for layer in self.highways:
            h = layer(h)
        h = self._mask(h, lengths)
        if lengths is not None:
            packed = nn.utils.rnn.pack_padded_sequence(
                h, lengths.cpu(), batch_first=True, enforce_sorted=False
            )
            out, _ = self.gru(packed)
            out, _ = nn.utils.rnn.pad_packed_sequence(
                out, batch_first=True, total_length=x.size(1)
            )
        else:
            out, _ = self.gru(h)
        return out


class ConversionModel(nn.Module):
    """Posteriorgram + pitch (+ prosody) -> vocoder acoustic features."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.ref_encoder = (
            ReferenceEncoder(
                config.n_mels,
                config.ref_enc_filters,
                config.prosody_dim,
                config.ref_enc_batch_norm,
            )
            if config.mode == "proposed"
            else None
        )
        self.cbhg = CbhgBlock(
            config.in_dim,
            config.conv_bank_size,
            config.conv_channels,
            config.highway_units,
            config.highway_layers,
            config.gru_units,
        )
        self.out = nn.Linear(self.cbhg.out_dim, config.out_dim)

    def forward_features(
        self, features: torch.Tensor, lengths: torch.Tensor | None = None
    ) -> torch.Tensor:
        """(B, T, in_dim) assembled inputs -> (B, T, out_dim)."""
        return self.out(self.cbhg(features, lengths))

    def forward(
        self,
        base: torch.Tensor,
        mel: torch.Tensor | None = None,
        lengths: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """base is (B, T, ppg_dim + 2); proposed mode also needs the mel
        spectrogram to derive the prosody embedding internally."""
        if self.config.mode == "proposed":
            if mel is None:
                raise DataError("proposed mode requires the mel spectrogram input")
            prosody = self.ref_encoder(mel, lengths)
            if lengths is not None:
                mask = (
                    torch.arange(base.size(1), device=base.device)[None, :]
                    < lengths[:, None]
                )
                prosody = prosody * mask.unsqueeze(-1)
            features = torch.cat([base, prosody], dim=2)
        else:
            features = base
        return self.forward_features(features, lengths)

    @torch.no_grad()
    def encode_prosody(self, mel: np.ndarray) -> np.ndarray:
        """(T, n_mels) numpy mel -> (T, prosody_dim) numpy embedding."""
        if self.ref_encoder is None:
            raise DataError("baseline model has no prosody encoder")
        self.eval()
        mel_t = torch.from_numpy(np.asarray(mel, dtype=np.float32)).unsqueeze(0)
        return self.ref_encoder(mel_t).squeeze(0).numpy()

    @torch.no_grad()
    def infer(self, features: np.ndarray) -> np.ndarray:
        """Single-utterance inference on assembled (T, in_dim) features."""
        self.eval()
        x = torch.from_numpy(np.asarray(features, dtype=np.float32)).unsqueeze(0)
        return self.forward_features(x).squeeze(0).numpy()


def build_model(config: ModelConfig, seed: int = 0) -> ConversionModel:
    """Construct a model with seed-controlled parameter initialization."""
    torch.manual_seed(seed)
    return ConversionModel(config)
