"""Command-line interface.

Subcommands: extract, augment, train-ppg, train, convert, eval, stats.
Every command takes --config (YAML run config) and writes the fully resolved
config next to its outputs so a run can always be reproduced. Exit codes:
0 success, 1 usage or config problem, 2 data problem, 3 quality threshold
violated (eval --check).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augment import expand_manifest
from .config import RunConfig, load_run_config
from .corpus import (
    FeatureCache,
    load_manifest,
    load_wav,
    load_checkpoint,
    save_manifest,
    save_wav,
)
from .errors import ConfigError, DataError, ProsovcError, ThresholdError
from .metrics import evaluate_pairs, plot_loss_curve
from .nets import ModelConfig, build_model
from .pipeline import (
    analyze,
    build_training_samples,
    convert_waveform,
    extract_corpus,
    model_config,
)
from .pitchstats import estimate_stats, load_stats, save_stats
from .ppg import load_classifier, save_classifier, train_toy_classifier
from .synthetic import load_labels
from .training import train

RESOLVED_CONFIG_NAME = "config.resolved.yaml"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this toolkit reserves 2 for data
    problems, so remap usage errors to exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prosovc", description=__doc__)
    parser.add_argument("--version", action="version", version=f"prosovc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="extract and cache features for a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--classifier", help="toy posteriorgram classifier checkpoint")
    p.add_argument(
        "--with-augment",
        action="store_true",
        help="expand the manifest by the configured tempo factors first",
    )

    p = sub.add_parser("augment", help="write a tempo-expanded manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-manifest", required=True)

    p = sub.add_parser("train-ppg", help="train the toy frame classifier")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--labels-dir", required=True, help="directory of <id>.labels.npy files")
    p.add_argument("--out", required=True, help="classifier checkpoint path")
    p.add_argument("--steps", type=int, default=300)

    p = sub.add_parser("train", help="train the conversion model on cached features")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("convert", help="convert one utterance to the target voice")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source-stats", required=True)
    p.add_argument("--target-stats", required=True)
    p.add_argument("--classifier", help="toy classifier checkpoint (omit with --ppg)")
    p.add_argument("--ppg", help="precomputed posteriorgram .npy for the input")
    p.add_argument("input_wav")
    p.add_argument("output_wav")

    p = sub.add_parser("eval", help="score converted audio against references")
    p.add_argument("--config", required=True)
    p.add_argument("--ref-dir", required=True, help="directory of reference wavs")
    p.add_argument("--hyp-dir", required=True, help="directory of converted wavs (same names)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--loss-log", help="training loss log to plot alongside the report")
    p.add_argument(
        "--check",
        action="store_true",
        help="exit 3 if configured eval thresholds are exceeded",
    )

    p = sub.add_parser("stats", help="estimate speaker log-f0 statistics")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--speaker", help="restrict to one speaker")
    p.add_argument("--out", required=True, help="output stats json")
    return parser


def _cache(cfg: RunConfig, cache_dir: str) -> FeatureCache:
    return FeatureCache(cache_dir, cfg.extraction_hash())


def _cmd_extract(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(args.manifest, check_files=True)
    if args.with_augment:
        manifest = expand_manifest(manifest, cfg.augment.factors)
    classifier = load_classifier(args.classifier) if args.classifier else None
    cache = _cache(cfg, args.cache_dir)
    cfg.write_resolved(Path(args.cache_dir) / RESOLVED_CONFIG_NAME)
    failures = extract_corpus(cfg, manifest, cache, classifier)
    print(f"extracted {len(manifest) - len(failures)}/{len(manifest)} utterances")
    for utt_id, message in failures:
        print(f"FAILED {utt_id}: {message}", file=sys.stderr)
    return 2 if failures else 0


def _cmd_augment(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    if not cfg.augment.factors:
        raise ConfigError("augment.factors is empty; nothing to expand")
    manifest = load_manifest(args.manifest)
    expanded = expand_manifest(manifest, cfg.augment.factors)
    save_manifest(args.out_manifest, expanded)
    cfg.write_resolved(Path(args.out_manifest).parent / RESOLVED_CONFIG_NAME)
    print(f"wrote {len(expanded)} entries to {args.out_manifest}")
    return 0


def _cmd_train_ppg(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    cache = _cache(cfg, args.cache_dir)
    mels, labels = [], []
    for utt in manifest:
        mels.append(cache.get(utt.utt_id, "mel").data)
        labels.append(load_labels(args.labels_dir, utt.utt_id))
    classifier, history = train_toy_classifier(
        mels,
        labels,
        n_classes=cfg.ppg.n_classes,
        context=cfg.ppg.context_frames,
        hidden=cfg.ppg.hidden_units,
        steps=args.steps,
        seed=cfg.seed,
    )
    save_classifier(args.out, classifier)
    cfg.write_resolved(Path(args.out).parent / RESOLVED_CONFIG_NAME)
    print(f"classifier loss {history[0]:.4f} -> {history[-1]:.4f}, saved to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(args.manifest)
    cache = _cache(cfg, args.cache_dir)
    samples = build_training_samples(manifest, cache)
    mcfg = model_config(cfg, ppg_dim=samples[0].base.shape[1] - 2)
    resume_payload = None
    if args.resume:
        resume_payload = load_checkpoint(args.resume, expected_config=mcfg.to_dict())
    out_dir = Path(args.out_dir)
    cfg.write_resolved(out_dir / RESOLVED_CONFIG_NAME)
    result = train(
        samples,
        mcfg,
        out_dir,
        learning_rate=cfg.train.learning_rate,
        batch_size=cfg.train.batch_size,
        max_steps=cfg.train.max_steps,
        grad_clip_norm=cfg.train.grad_clip_norm,
        checkpoint_every=cfg.train.checkpoint_every,
        log_every=cfg.train.log_every,
        seed=cfg.seed,
        resume_from=resume_payload,
    )
    print(
        f"trained to step {result.final_step}, "
        f"final loss {result.losses[-1] if result.losses else float('nan'):.6f}, "
        f"checkpoint {result.checkpoint_path}"
    )
    return 0


def _cmd_convert(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    payload = load_checkpoint(args.checkpoint)
    mcfg = ModelConfig.from_dict(payload["config"])
    model = build_model(mcfg, cfg.seed)
    model.load_state_dict(payload["model_state"])
    classifier = load_classifier(args.classifier) if args.classifier else None
    ppg_matrix = None
    if args.ppg:
        ppg_matrix = np.load(args.ppg)
    source_stats = load_stats(args.source_stats)
    target_stats = load_stats(args.target_stats)
    wave = load_wav(args.input_wav)
    result = convert_waveform(
        wave, cfg, model, source_stats, target_stats, classifier, ppg_matrix
    )
    save_wav(args.output_wav, result.waveform)
    cfg.write_resolved(Path(args.output_wav).parent / RESOLVED_CONFIG_NAME)
    print(
        f"converted {args.input_wav} -> {args.output_wav} "
        f"({result.waveform.duration:.2f} s, {result.acoustic.shape[0]} frames)"
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    ref_dir, hyp_dir = Path(args.ref_dir), Path(args.hyp_dir)
    names = sorted(p.name for p in ref_dir.glob("*.wav"))
    if not names:
        raise DataError(f"no reference wavs in {ref_dir}")
    pairs = []
    for name in names:
        hyp_path = hyp_dir / name
        if not hyp_path.exists():
            raise DataError(f"missing converted wav for {name}")
        ref_feats = analyze(load_wav(ref_dir / name), cfg)
        hyp_feats = analyze(load_wav(hyp_path), cfg)
        pairs.append(
            (
                Path(name).stem,
                ref_feats.acoustic[:, : cfg.audio.n_bark],
                hyp_feats.acoustic[:, : cfg.audio.n_bark],
                ref_feats.pitch,
                hyp_feats.pitch,
            )
        )
    out_dir = Path(args.out_dir)
    cfg.write_resolved(out_dir / RESOLVED_CONFIG_NAME)
    thresholds = (
        {
            "max_mcd_db": cfg.eval.max_mcd_db,
            "max_f0_rmse_hz": cfg.eval.max_f0_rmse_hz,
            "max_vuv_error": cfg.eval.max_vuv_error,
        }
        if args.check
        else None
    )
    if args.loss_log:
        plot_loss_curve(args.loss_log, out_dir / "loss_curve.png")
    report = evaluate_pairs(pairs, out_dir, thresholds)
    print(report.table())
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config)
    manifest = load_manifest(args.manifest, check_files=True)
    if args.speaker:
        manifest = manifest.for_speaker(args.speaker)
        if len(manifest) == 0:
            raise DataError(f"no utterances for speaker {args.speaker!r}")
    tracks = []
    for utt in manifest:
        feats = analyze(load_wav(utt.audio_path), cfg)
        tracks.append(feats.pitch)
    stats = estimate_stats(tracks)
    save_stats(args.out, stats)
    cfg.write_resolved(Path(args.out).parent / RESOLVED_CONFIG_NAME)
    print(
        f"mean log f0 {stats.mean_log_f0:.4f} ({np.exp(stats.mean_log_f0):.1f} Hz), "
        f"std {stats.std_log_f0:.4f}, {stats.n_voiced_frames} voiced frames"
    )
    return 0


_COMMANDS = {
    "extract": _cmd_extract,
    "augment": _cmd_augment,
    "train-ppg": _cmd_train_ppg,
    "train": _cmd_train,
    "convert": _cmd_convert,
    "eval": _cmd_eval,
    "stats": _cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ThresholdError as exc:
        print(f"threshold check failed: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except ProsovcError as exc:  # safety net for future subclasses
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
