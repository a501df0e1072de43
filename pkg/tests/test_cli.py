"""End-to-end command-line tests: the full workflow plus exit-code contract."""

import shutil
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import yaml

from prosovc.cli import main
from prosovc.corpus import load_manifest, load_wav
from prosovc.synthetic import SpeakerSpec, make_corpus

CONFIG = {
    "seed": 0,
    "ppg": {"n_classes": 7, "context_frames": 2, "hidden_units": 32},
    "model": {
        "mode": "proposed",
        "conv_bank_size": 4,
        "conv_channels": 16,
        "highway_units": 16,
        "gru_units": 16,
        "ref_enc_filters": [4, 4, 8, 8, 16, 16],
    },
    "train": {
        "batch_size": 2,
        "max_steps": 12,
        "log_every": 4,
        "checkpoint_every": 0,
    },
    "augment": {"factors": [1.0, 0.8]},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory) -> SimpleNamespace:
    """Run the whole pipeline once: corpus -> features -> classifier ->
    model -> conversion -> evaluation. Tests inspect the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    manifest = make_corpus(
        corpus,
        {
            "targ": SpeakerSpec(f0_base=190.0),
            "src": SpeakerSpec(f0_base=125.0, formant_scale=1.05),
        },
        utterances_per_speaker=3,
        duration_s=1.3,
        seed=0,
    )
    cfg = root / "config.yaml"
    cfg.write_text(yaml.safe_dump(CONFIG))

    ns = SimpleNamespace(
        root=root,
        corpus=corpus,
        cfg=str(cfg),
        manifest=str(manifest),
        cache=str(root / "cache"),
        clf=str(root / "classifier.pt"),
        run=root / "run",
        rc={},
    )
    ns.rc["augment"] = main(
        ["augment", "--config", ns.cfg, "--manifest", ns.manifest,
         "--out-manifest", str(root / "augmented.txt")]
    )
    ns.rc["extract"] = main(
        ["extract", "--config", ns.cfg, "--manifest", ns.manifest,
         "--cache-dir", ns.cache]
    )
    ns.rc["train_ppg"] = main(
        ["train-ppg", "--config", ns.cfg, "--manifest", ns.manifest,
         "--cache-dir", ns.cache, "--labels-dir", str(corpus),
         "--out", ns.clf, "--steps", "60"]
    )
    # second pass adds posteriorgrams (cached features are reused), and the
    # tempo-expanded entries are analyzed on the fly
    ns.rc["extract_ppg"] = main(
        ["extract", "--config", ns.cfg, "--manifest", ns.manifest,
         "--cache-dir", ns.cache, "--classifier", ns.clf, "--with-augment"]
    )
    for speaker in ("targ", "src"):
        ns.rc[f"stats_{speaker}"] = main(
            ["stats", "--config", ns.cfg, "--manifest", ns.manifest,
             "--speaker", speaker, "--out", str(root / f"{speaker}.json")]
        )
    ns.rc["train"] = main(
        ["train", "--config", ns.cfg, "--manifest", ns.manifest,
         "--cache-dir", ns.cache, "--out-dir", str(ns.run)]
    )
    hyp = root / "hyp"
    hyp.mkdir()
    ns.converted = hyp / "src_0.wav"
    ns.rc["convert"] = main(
        ["convert", "--config", ns.cfg,
         "--checkpoint", str(ns.run / "checkpoint_final.pt"),
         "--source-stats", str(root / "src.json"),
         "--target-stats", str(root / "targ.json"),
         "--classifier", ns.clf,
         str(corpus / "src_0.wav"), str(ns.converted)]
    )
    ref = root / "ref"
    ref.mkdir()
    shutil.copy(corpus / "src_0.wav", ref / "src_0.wav")
    ns.eval_dir = root / "eval"
    ns.rc["eval"] = main(
        ["eval", "--config", ns.cfg, "--ref-dir", str(ref), "--hyp-dir", str(hyp),
         "--out-dir", str(ns.eval_dir), "--loss-log", str(ns.run / "loss_log.txt")]
    )

    strict = dict(CONFIG)
    strict["eval"] = {"max_mcd_db": 0.001}
    strict_cfg = root / "strict.yaml"
    strict_cfg.write_text(yaml.safe_dump(strict))
    ns.rc["eval_check"] = main(
        ["eval", "--config", str(strict_cfg), "--ref-dir", str(ref),
         "--hyp-dir", str(hyp), "--out-dir", str(root / "eval_strict"), "--check"]
    )
    return ns


def test_workflow_return_codes(work):
    expected = {name: 0 for name in work.rc}
    expected["eval_check"] = 3  # impossible MCD threshold must gate
    assert work.rc == expected


def test_augment_writes_expanded_manifest(work):
    expanded = load_manifest(work.root / "augmented.txt")
    assert len(expanded) == 12  # 6 originals (factor 1.0) + 6 stretched
    assert sum("__sp" in u.utt_id for u in expanded) == 6


def test_extract_populates_cache(work):
    cache_files = sorted(p.name for p in Path(work.cache).glob("*.vcf"))
    # 12 manifest entries x 4 feature kinds
    assert len(cache_files) == 48
    assert "targ_0.mel.vcf" in cache_files
    assert "src_2__sp0.8.ppg.vcf" in cache_files


def test_resolved_config_written_next_to_outputs(work):
    for where in (Path(work.cache), work.run, work.eval_dir, work.root):
        assert (where / "config.resolved.yaml").exists(), where
    resolved = yaml.safe_load((work.run / "config.resolved.yaml").read_text())
    assert resolved["train"]["max_steps"] == 12
    assert resolved["audio"]["sample_rate"] == 16000  # defaults filled in


def test_training_artifacts(work):
    assert (work.run / "checkpoint_final.pt").exists()
    log = (work.run / "loss_log.txt").read_text().splitlines()
    assert log[0].startswith("step 1 loss ")
    assert log[-1].startswith("step 12 loss ")


def test_speaker_stats_files(work):
    import json

    targ = json.loads((work.root / "targ.json").read_text())
    src = json.loads((work.root / "src.json").read_text())
    # estimated means should sit near the synthetic speakers' base pitches
    assert abs(np.exp(targ["mean_log_f0"]) - 190.0) < 25.0
    assert abs(np.exp(src["mean_log_f0"]) - 125.0) < 20.0


def test_converted_audio(work):
    wave = load_wav(work.converted)
    source = load_wav(work.corpus / "src_0.wav")
    hop = 160
    expected = (1 + len(source.samples) // hop) * hop
    assert len(wave.samples) == expected
    assert np.max(np.abs(wave.samples)) > 0.5  # peak-normalized output


def test_eval_report_files(work):
    assert (work.eval_dir / "report.txt").exists()
    assert (work.eval_dir / "f0_src_0.png").exists()
    assert (work.eval_dir / "loss_curve.png").exists()
    assert "src_0" in (work.eval_dir / "report.txt").read_text()
    # the gated run still writes its report before exiting 3
    assert (work.root / "eval_strict" / "report.txt").exists()


# ---------------------------------------------------------------------------
# exit codes for the failure modes


def test_usage_errors_exit_1(work):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["extract", "--config", work.cfg])  # missing required args
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_unknown_config_key_exits_1(work, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("audio:\n  hop_size: 0.01\n")
    rc = main(["extract", "--config", str(bad), "--manifest", work.manifest,
               "--cache-dir", str(tmp_path / "c")])
    assert rc == 1


def test_missing_config_exits_1(work, tmp_path):
    rc = main(["stats", "--config", str(tmp_path / "nope.yaml"),
               "--manifest", work.manifest, "--out", str(tmp_path / "s.json")])
    assert rc == 1


def test_empty_augment_factors_exit_1(work, tmp_path):
    cfg = tmp_path / "noaug.yaml"
    cfg.write_text("seed: 0\n")
    rc = main(["augment", "--config", str(cfg), "--manifest", work.manifest,
               "--out-manifest", str(tmp_path / "out.txt")])
    assert rc == 1


def test_missing_audio_exits_2(work, tmp_path):
    man = tmp_path / "manifest.txt"
    man.write_text("ghost|spk|/nonexistent/ghost.wav|1.0\n")
    rc = main(["extract", "--config", work.cfg, "--manifest", str(man),
               "--cache-dir", str(tmp_path / "c")])
    assert rc == 2


def test_unknown_speaker_exits_2(work, tmp_path):
    rc = main(["stats", "--config", work.cfg, "--manifest", work.manifest,
               "--speaker", "nobody", "--out", str(tmp_path / "s.json")])
    assert rc == 2


def test_convert_without_posteriorgram_source_exits_2(work, tmp_path):
    rc = main(["convert", "--config", work.cfg,
               "--checkpoint", str(work.run / "checkpoint_final.pt"),
               "--source-stats", str(work.root / "src.json"),
               "--target-stats", str(work.root / "targ.json"),
               str(work.corpus / "src_1.wav"), str(tmp_path / "out.wav")])
    assert rc == 2


def test_eval_missing_hypothesis_exits_2(work, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    rc = main(["eval", "--config", work.cfg, "--ref-dir", str(work.root / "ref"),
               "--hyp-dir", str(empty), "--out-dir", str(tmp_path / "e")])
    assert rc == 2


def test_train_with_empty_cache_exits_2(work, tmp_path):
    rc = main(["train", "--config", work.cfg, "--manifest", work.manifest,
               "--cache-dir", str(tmp_path / "empty_cache"),
               "--out-dir", str(tmp_path / "run")])
    assert rc == 2
