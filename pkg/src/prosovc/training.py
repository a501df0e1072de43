"""Training loop for the conversion model.

Whole utterances are batched with zero padding and a frame mask; the loss is
a masked mean absolute error in raw feature units, so padded frames never
contribute. One seed drives parameter init and batch sampling, which makes
two runs with the same config bit-for-bit reproducible on CPU.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .corpus import save_checkpoint
from .errors import DataError
from .nets import ConversionModel, ModelConfig, build_model

LOSS_LOG_NAME = "loss_log.txt"


@dataclass
class TrainingSample:
    """One utterance's tensors: assembled base input (T, ppg_dim + 2), the
    mel spectrogram for the prosody encoder, and the acoustic target."""

    utt_id: str
    base: np.ndarray
    mel: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        t = self.base.shape[0]
        if self.mel.shape[0] != t or self.target.shape[0] != t:
            raise DataError(
                f"{self.utt_id}: frame counts differ "
                f"(base {t}, mel {self.mel.shape[0]}, target {self.target.shape[0]})"
            )

    @property
    def n_frames(self) -> int:
        return self.base.shape[0]


def collate(samples: list[TrainingSample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Zero-pad a list of utterances into batch tensors.

    Returns (base, mel, target, lengths) with shapes (B, T_max, *) and the
    per-utterance true lengths.
    """
    if not samples:
        raise DataError("empty batch")
    t_max = max(s.n_frames for s in samples)

    def pad(arrs: list[np.ndarray]) -> torch.Tensor:
        d = arrs[0].shape[1]
        out = np.zeros((len(arrs), t_max, d), dtype=np.float32)
        for i, a in enumerate(arrs):
            out[i, : a.shape[0]] = a
        return torch.from_numpy(out)

    base = pad([s.base for s in samples])
    mel = pad([s.mel for s in samples])
    target = pad([s.target for s in samples])
    lengths = torch.tensor([s.n_frames for s in samples], dtype=torch.long)
    return base, mel, target, lengths


def masked_l1(pred: torch.Tensor, target: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over real frames only, in raw feature units."""
    mask = (
        torch.arange(pred.size(1), device=pred.device)[None, :] < lengths[:, None]
    ).unsqueeze(-1)
    diff = (pred - target).abs() * mask
    return diff.sum() / (mask.sum() * pred.size(2))


@dataclass
class TrainResult:
    checkpoint_path: Path
    final_step: int
    losses: list[float]


def train(
    samples: list[TrainingSample],
    model_config: ModelConfig,
    out_dir: Path | str,
    learning_rate: float = 1e-3,
    batch_size: int = 32,
    max_steps: int = 20000,
    grad_clip_norm: float = 1.0,
    checkpoint_every: int = 1000,
    log_every: int = 10,
    seed: int = 0,
    resume_from: dict | None = None,
) -> TrainResult:
    """Adam + gradient clipping on masked L1; returns the final checkpoint.

    Every step draws min(batch_size, n_utterances) distinct utterances with a
    step-seeded generator, so any (seed, step) pair selects the same batch no
    matter what happened before. resume_from takes a loaded checkpoint
    payload and continues from its step counter.
    """
    if not samples:
        raise DataError("no training samples")
    for s in samples:
        if s.base.shape[1] != model_config.ppg_dim + 2:
            raise DataError(
                f"{s.utt_id}: base width {s.base.shape[1]} does not match "
                f"model ppg_dim + 2 = {model_config.ppg_dim + 2}"
            )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(seed)
    model = build_model(model_config, seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    start_step = 0
    if resume_from is not None:
        model.load_state_dict(resume_from["model_state"])
        if resume_from.get("optimizer_state"):
            optimizer.load_state_dict(resume_from["optimizer_state"])
        start_step = int(resume_from["step"])

    n = len(samples)
    losses: list[float] = []
    log_lines: list[str] = []
    model.train()
    for step in range(start_step + 1, max_steps + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, step]))
        idx = rng.choice(n, size=min(batch_size, n), replace=False)
        batch = [samples[i] for i in idx]
        base, mel, target, lengths = collate(batch)
        pred = model(base, mel if model_config.mode == "proposed" else None, lengths)
        loss = masked_l1(pred, target, lengths)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite training loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip_norm)
        optimizer.step()
        loss_val = float(loss.item())
        losses.append(loss_val)
        if step % log_every == 0 or step == start_step + 1 or step == max_steps:
            log_lines.append(f"step {step} loss {loss_val:.6f}")
        if checkpoint_every > 0 and step % checkpoint_every == 0 and step < max_steps:
            save_checkpoint(
                out_dir / f"checkpoint_{step:07d}.pt",
                model_config.to_dict(),
                step,
                model.state_dict(),
                optimizer.state_dict(),
            )

    final_path = out_dir / "checkpoint_final.pt"
    save_checkpoint(
        final_path,
        model_config.to_dict(),
        max_steps,
        model.state_dict(),
        optimizer.state_dict(),
    )
    log_path = out_dir / LOSS_LOG_NAME
    mode = "a" if start_step > 0 and log_path.exists() else "w"
    with open(log_path, mode, encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    return TrainResult(final_path, max_steps, losses)


@torch.no_grad()
def evaluate_loss(model: ConversionModel, samples: list[TrainingSample]) -> float:
    """Masked L1 over the whole sample list with the current weights (eval mode)."""
    if not samples:
        raise DataError("no samples to evaluate")
    model.eval()
    base, mel, target, lengths = collate(samples)
    pred = model(base, mel if model.config.mode == "proposed" else None, lengths)
    value = float(masked_l1(pred, target, lengths).item())
    model.train()
    return value


def read_loss_log(path: Path | str) -> tuple[np.ndarray, np.ndarray]:
    """Parse 'step N loss X' lines into (steps, losses) arrays."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"loss log not found: {path}")
    steps, losses = [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if len(parts) == 4 and parts[0] == "step" and parts[2] == "loss":
            steps.append(int(parts[1]))
            losses.append(float(parts[3]))
    if not steps:
        raise DataError(f"{path}: no loss entries found")
    return np.asarray(steps), np.asarray(losses)
