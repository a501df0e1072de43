"""Phonetic posteriorgrams: validation, external loading, and a toy classifier.

A posteriorgram is a (T, n_classes) matrix with one probability distribution
per frame. In production the distributions come from a separately trained
speaker-independent recognizer and are treated as opaque; for self-contained
runs a small frame classifier trained on labeled synthetic audio stands in.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import DataError

PPG_SUM_TOL = 1e-4


def validate_ppg(values: np.ndarray, n_classes: int | None = None) -> np.ndarray:
    """Check posteriorgram invariants: 2-D, finite, non-negative, rows on the
    probability simplex (within tolerance). Returns the array as float32."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise DataError(f"posteriorgram must be 2-D, got shape {values.shape}")
    if n_classes is not None and values.shape[1] != n_classes:
        raise DataError(
            f"posteriorgram has {values.shape[1]} classes, expected {n_classes}"
        )
    if not np.all(np.isfinite(values)):
        raise DataError("posteriorgram contains non-finite values")
    if np.any(values < 0.0):
        raise DataError("posteriorgram contains negative probabilities")
    sums = values.sum(axis=1)
    bad = np.abs(sums - 1.0) > PPG_SUM_TOL
    if np.any(bad):
        t = int(np.argmax(bad))
        raise DataError(
            f"posteriorgram rows must sum to 1 (frame {t} sums to {sums[t]:.6f})"
        )
    return values


def load_external_ppg(path: Path | str, expected_frames: int | None = None) -> np.ndarray:
    """Load a posteriorgram saved as .npy; validates the simplex invariants
    and, when given, the frame count against the utterance's other features."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"posteriorgram file not found: {path}")
    try:
        values = np.load(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"{path}: unreadable posteriorgram ({exc})") from exc
    values = validate_ppg(values)
    if expected_frames is not None and values.shape[0] != expected_frames:
        raise DataError(
            f"{path}: posteriorgram has {values.shape[0]} frames, expected {expected_frames}"
        )
    return values


class FramePhoneClassifier(nn.Module):
    """Tiny per-frame phone classifier: mel frame with +-context neighbors,
    two ReLU layers, softmax head. Good enough to give the conversion model
    phonetically structured inputs on synthetic corpora; not a recognizer."""

    def __init__(self, n_mels: int = 80, n_classes: int = 40,
                 context: int = 5, hidden: int = 256) -> None:
        super().__init__()
        self.n_mels = n_mels
        self.n_classes = n_classes
        self.context = context
        in_dim = n_mels * (2 * context + 1)
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
        )
        self.head = nn.Linear(hidden, n_classes)
        # small head weights keep the untrained output near-uniform
        nn.init.uniform_(self.head.weight, -1e-3, 1e-3)
        nn.init.zeros_(self.head.bias)

    def stack_context(self, mel: torch.Tensor) -> torch.Tensor:
        """(T, n_mels) -> (T, n_mels * (2 * context + 1)) with edge replication."""
        c = self.context
        padded = torch.cat([mel[:1].expand(c, -1), mel, mel[-1:].expand(c, -1)], dim=0)
        return torch.cat([padded[i : i + mel.shape[0]] for i in range(2 * c + 1)], dim=1)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """(T, n_mels) log-mel frames -> (T, n_classes) logits."""
        return self.head(self.net(self.stack_context(mel)))

    def config(self) -> dict:
        return {
            "kind": "frame_phone_classifier",
            "n_mels": self.n_mels,
            "n_classes": self.n_classes,
            "context": self.context,
            "hidden": self.head.in_features,
        }


def train_toy_classifier(
    mels: list[np.ndarray],
    labels: list[np.ndarray],
    n_classes: int = 40,
    context: int = 5,
    hidden: int = 256,
    steps: int = 300,
    batch_frames: int = 512,
    learning_rate: float = 1e-3,
    seed: int = 0,
) -> tuple[FramePhoneClassifier, list[float]]:
    """Train the frame classifier on (mel, label) pairs; returns the model in
    eval mode and the per-step loss history."""
    if len(mels) != len(labels) or not mels:
        raise DataError("need matching non-empty mel and label lists")
    xs, ys = [], []
    for mel, lab in zip(mels, labels):
        mel = np.asarray(mel, dtype=np.float32)
        lab = np.asarray(lab, dtype=np.int64)
        if mel.ndim != 2 or len(lab) != mel.shape[0]:
            raise DataError(
                f"mel/label mismatch: mel {mel.shape}, {len(lab)} labels"
            )
        if np.any(lab < 0) or np.any(lab >= n_classes):
            raise DataError(f"labels must lie in [0, {n_classes})")
        xs.append(mel)
        ys.append(lab)

    torch.manual_seed(seed)
    model = FramePhoneClassifier(xs[0].shape[1], n_classes, context, hidden)
    # context windows are precomputed once, so batches index rows directly
    feats = torch.cat([model.stack_context(torch.from_numpy(m)) for m in xs])
    targets = torch.from_numpy(np.concatenate(ys))
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    rng = np.random.default_rng(seed)
    history: list[float] = []
    model.train()
    for _ in range(steps):
        idx = rng.integers(0, len(targets), size=min(batch_frames, len(targets)))
        idx_t = torch.from_numpy(idx)
        logits = model.head(model.net(feats[idx_t]))
        loss = loss_fn(logits, targets[idx_t])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(float(loss.item()))
    model.eval()
    return model, history


@torch.no_grad()
def extract_ppg(model: FramePhoneClassifier, mel: np.ndarray) -> np.ndarray:
    """Run the classifier over log-mel frames; rows are exact softmax outputs."""
    model.eval()
    mel_t = torch.from_numpy(np.asarray(mel, dtype=np.float32))
    if mel_t.ndim != 2 or mel_t.shape[1] != model.n_mels:
        raise DataError(f"expected (T, {model.n_mels}) mel input, got {tuple(mel_t.shape)}")
    probs = torch.softmax(model(mel_t), dim=1).numpy()
    return validate_ppg(probs, model.n_classes)


def save_classifier(path: Path | str, model: FramePhoneClassifier) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"config": model.config(), "state": model.state_dict()}, path)


def load_classifier(path: Path | str) -> FramePhoneClassifier:
    path = Path(path)
    if not path.exists():
        raise DataError(f"classifier checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        cfg = payload["config"]
        if cfg.get("kind") != "frame_phone_classifier":
            raise KeyError("kind")
        model = FramePhoneClassifier(
            cfg["n_mels"], cfg["n_classes"], cfg["context"], cfg["hidden"]
        )
        model.load_state_dict(payload["state"])
    except Exception as exc:
        raise DataError(f"{path}: not a valid classifier checkpoint ({exc})") from exc
    model.eval()
    return model
