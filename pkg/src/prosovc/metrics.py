"""Objective evaluation: cepstral distortion, pitch accuracy, report files.

Mel/Bark-cepstral distortion is computed over a DTW alignment of the two
cepstral sequences (excluding the energy coefficient c0); pitch metrics
compare frame-synchronous tracks. The report writer turns a directory pair
into a plain-text table plus f0-contour and training-curve plots, and can
enforce aggregate thresholds for CI-style gating.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataError, ThresholdError

_DB_FACTOR = 10.0 / np.log(10.0)


def dtw_path(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost monotonic alignment through a (T1, T2) local-cost matrix.

    Steps are (1,0), (0,1), (1,1); the path is boundary-complete, running
    from (0, 0) to (T1-1, T2-1).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise DataError(f"cost matrix must be non-empty 2-D, got shape {cost.shape}")
    t1, t2 = cost.shape
    acc = np.full((t1, t2), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(t1):
        for j in range(t2):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0:
                best = acc[i - 1, j]
            if j > 0:
                best = min(best, acc[i, j - 1])
            if i > 0 and j > 0:
                best = min(best, acc[i - 1, j - 1])
            acc[i, j] = cost[i, j] + best
    path = [(t1 - 1, t2 - 1)]
    i, j = t1 - 1, t2 - 1
    while (i, j) != (0, 0):
        candidates = []
        if i > 0 and j > 0:
            candidates.append((acc[i - 1, j - 1], (i - 1, j - 1)))
        if i > 0:
            candidates.append((acc[i - 1, j], (i - 1, j)))
        if j > 0:
            candidates.append((acc[i, j - 1], (i, j - 1)))
        _, (i, j) = min(candidates, key=lambda c: c[0])
        path.append((i, j))
    path.reverse()
    return path


def mcd(reference: np.ndarray, converted: np.ndarray) -> float:
    """Cepstral distortion in dB, DTW-aligned, excluding c0.

    Per aligned pair: (10 / ln 10) * sqrt(2 * sum_k (c_ref_k - c_conv_k)^2)
    over coefficients 1..D-1; returns the mean over the alignment path.
    """
    ref = np.asarray(reference, dtype=np.float64)
    con = np.asarray(converted, dtype=np.float64)
    if ref.ndim != 2 or con.ndim != 2:
        raise DataError("cepstral inputs must be 2-D (frames x coefficients)")
    if ref.shape[1] != con.shape[1]:
        raise DataError(
            f"coefficient count mismatch: {ref.shape[1]} vs {con.shape[1]}"
        )
    if ref.shape[0] == 0 or con.shape[0] == 0:
        raise DataError("cannot align empty cepstral sequences")
    ref_c = ref[:, 1:]
    con_c = con[:, 1:]
    path = dtw_path(cdist(ref_c, con_c, metric="euclidean"))
    dists = np.array([np.sum((ref_c[i] - con_c[j]) ** 2) for i, j in path])
    return float(np.mean(_DB_FACTOR * np.sqrt(2.0 * dists)))


@dataclass
class F0Metrics:
    rmse_hz: float
    vuv_error: float
    n_covoiced: int


def f0_metrics(reference: np.ndarray, converted: np.ndarray,
               ref_vuv: np.ndarray, con_vuv: np.ndarray) -> F0Metrics:
    """RMSE over co-voiced frames plus voicing disagreement rate.

    Tracks must be frame-synchronous (equal length); use the report helper
    for wav pairs whose lengths differ by a rounding frame.
    """
    ref = np.asarray(reference, dtype=np.float64)
    con = np.asarray(converted, dtype=np.float64)
    rv = np.asarray(ref_vuv) > 0
    cv = np.asarray(con_vuv) > 0
    if not (len(ref) == len(con) == len(rv) == len(cv)):
        raise DataError(
            f"track length mismatch: {len(ref)}, {len(con)}, {len(rv)}, {len(cv)}"
        )
    if len(ref) == 0:
        raise DataError("empty pitch tracks")
    both = rv & cv
    if np.any(both):
        rmse = float(np.sqrt(np.mean((ref[both] - con[both]) ** 2)))
    else:
        rmse = float("nan")
    vuv_err = float(np.mean(rv != cv))
    return F0Metrics(rmse, vuv_err, int(both.sum()))


@dataclass
class PairResult:
    name: str
    mcd_db: float
    f0_rmse_hz: float
    vuv_error: float
    n_frames: int


@dataclass
class EvalReport:
    pairs: list[PairResult]
    mean_mcd_db: float
    mean_f0_rmse_hz: float
    mean_vuv_error: float

    def table(self) -> str:
        lines = [
            f"{'utterance':<28} {'MCD(dB)':>9} {'F0 RMSE(Hz)':>12} {'VUV err':>8} {'frames':>7}",
            "-" * 68,
        ]
        for p in self.pairs:
            lines.append(
                f"{p.name:<28} {p.mcd_db:>9.3f} {p.f0_rmse_hz:>12.3f} "
                f"{p.vuv_error:>8.4f} {p.n_frames:>7d}"
            )
        lines.append("-" * 68)
        lines.append(
            f"{'mean':<28} {self.mean_mcd_db:>9.3f} {self.mean_f0_rmse_hz:>12.3f} "
            f"{self.mean_vuv_error:>8.4f}"
        )
        return "\n".join(lines)


def _plot_f0_pair(path: Path, name: str, ref_f0: np.ndarray, con_f0: np.ndarray) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 3))
    t = np.arange(len(ref_f0)) * 0.010
    ax.plot(t, np.where(ref_f0 > 0, ref_f0, np.nan), label="reference", lw=1.2)
    t2 = np.arange(len(con_f0)) * 0.010
    ax.plot(t2, np.where(con_f0 > 0, con_f0, np.nan), label="converted", lw=1.2)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("f0 (Hz)")
    ax.set_title(name)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_loss_curve(log_path: Path | str, out_path: Path | str) -> None:
    """Render a 'step N loss X' log as a PNG curve."""
    from .training import read_loss_log

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps, losses = read_loss_log(log_path)
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(steps, losses, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)


def evaluate_pairs(
    pairs: list[tuple[str, np.ndarray, np.ndarray, "object", "object"]],
    out_dir: Path | str,
    thresholds: dict[str, float | None] | None = None,
    max_plots: int = 12,
) -> EvalReport:
    """Score (name, ref_cepstra, conv_cepstra, ref_pitch, conv_pitch) tuples.

    Writes report.txt and up to max_plots f0-contour PNGs under out_dir.
    Pitch tracks whose lengths differ by at most 2 frames (wav-length
    rounding) are trimmed to the shorter one; larger mismatches are data
    errors. With thresholds given, aggregate means exceeding any of
    max_mcd_db / max_f0_rmse_hz / max_vuv_error raise ThresholdError after
    the report is written.
    """
    if not pairs:
        raise DataError("no evaluation pairs")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: list[PairResult] = []
    for idx, (name, ref_cep, con_cep, ref_pitch, con_pitch) in enumerate(pairs):
        diff = abs(ref_pitch.n_frames - con_pitch.n_frames)
        if diff > 2:
            raise DataError(
                f"{name}: pitch tracks differ by {diff} frames; inputs are not parallel"
            )
        n = min(ref_pitch.n_frames, con_pitch.n_frames)
        fm = f0_metrics(
            ref_pitch.f0[:n], con_pitch.f0[:n], ref_pitch.vuv[:n], con_pitch.vuv[:n]
        )
        distortion = mcd(ref_cep, con_cep)
        results.append(PairResult(name, distortion, fm.rmse_hz, fm.vuv_error, n))
        if idx < max_plots:
            _plot_f0_pair(out_dir / f"f0_{name}.png", name, ref_pitch.f0[:n], con_pitch.f0[:n])

    rmses = np.array([r.f0_rmse_hz for r in results])
    report = EvalReport(
        pairs=results,
        mean_mcd_db=float(np.mean([r.mcd_db for r in results])),
        mean_f0_rmse_hz=float(np.nanmean(rmses)) if not np.all(np.isnan(rmses)) else float("nan"),
        mean_vuv_error=float(np.mean([r.vuv_error for r in results])),
    )
    (out_dir / "report.txt").write_text(report.table() + "\n", encoding="utf-8")

    if thresholds:
        failures = []
        if (m := thresholds.get("max_mcd_db")) is not None and report.mean_mcd_db > m:
            failures.append(f"mean MCD {report.mean_mcd_db:.3f} dB > {m}")
        if (m := thresholds.get("max_f0_rmse_hz")) is not None and report.mean_f0_rmse_hz > m:
            failures.append(f"mean F0 RMSE {report.mean_f0_rmse_hz:.3f} Hz > {m}")
        if (m := thresholds.get("max_vuv_error")) is not None and report.mean_vuv_error > m:
            failures.append(f"mean VUV error {report.mean_vuv_error:.4f} > {m}")
        if failures:
            raise ThresholdError("; ".join(failures))
    return report
