import csv
import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satbsep.bsseval import MetricsRecord, write_metrics_csv
from satbsep.cli import SIDECAR, main
from satbsep.config import ConfigError, RunConfig, env_overrides, loads, resolve

TOY = """
corpus.pieces = 2
corpus.singers_per_part = 2
corpus.duration_s = 1.5
model.kind = cunet_ds_global
model.encoder_channels = 4,8,16
train.max_steps = 4
train.val_fraction = 0.0
eval.workers = 2
"""


# ---------------------------------------------------------------------------
# configuration


def test_default_round_trip():
    cfg = RunConfig()
    assert loads(cfg.dumps()) == cfg
    assert loads(cfg.dumps()).dumps() == cfg.dumps()


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 10**6),
    st.floats(min_value=1e-9, max_value=1e3, allow_nan=False),
    st.sampled_from(["unet", "cunet_da", "cunet_ds_local", "cunet_ds_global", "waveunet"]),
    st.lists(st.integers(1, 1024), min_size=1, max_size=8),
    st.booleans(),
    st.text(st.characters(whitelist_categories=("L", "N"), whitelist_characters="/_-."), min_size=1, max_size=20),
)
def test_round_trip_property(steps, lr, kind, channels, hold, root):
    cfg = RunConfig()
    cfg.train.max_steps = steps
    cfg.train.learning_rate = lr
    cfg.model.kind = kind
    cfg.model.encoder_channels = channels
    cfg.corpus.hold_out_singer = hold
    cfg.paths.corpus_root = root
    back = loads(cfg.dumps())
    assert back == cfg
    assert back.hash == cfg.hash


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        loads("train.max_step = 3")
    with pytest.raises(ConfigError):
        resolve(overrides={"model.knd": "unet"})
    with pytest.raises(ConfigError):
        env_overrides({"SATBSEP_TRAIN_MAXSTEPS": "3"})


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        loads("train.max_steps = many")
    with pytest.raises(ConfigError):
        loads("corpus.hold_out_singer = maybe")
    with pytest.raises(ConfigError):
        resolve(overrides={"dsp.fft_size": "2048"})
    with pytest.raises(ConfigError):
        resolve(overrides={"f0_mode": "guessed"})
    with pytest.raises(ConfigError):
        loads("no equals sign here")


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.max_steps = 10\ntrain.batch_size = 8\nseed = 3  # comment\n")
    env = {"SATBSEP_TRAIN_MAX_STEPS": "20", "SATBSEP_SEED": "5"}
    cfg = resolve(path, {"seed": "7"}, environ=env)
    assert cfg.train.batch_size == 8  # file over default
    assert cfg.train.max_steps == 20  # env over file
    assert cfg.seed == 7  # flag over env


def test_hash_tracks_values():
    a, b = RunConfig(), RunConfig()
    assert a.hash == b.hash
    b.seed = 1
    assert a.hash != b.hash


# ---------------------------------------------------------------------------
# commands


@pytest.fixture()
def run(tmp_path):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text(TOY)
    paths = ["--corpus-root", str(tmp_path / "corpus"), "--checkpoint-dir", str(tmp_path / "ckpt"),
             "--results-dir", str(tmp_path / "results"), "--report-dir", str(tmp_path / "reports")]

    def _run(command, *extra):
        return main([command, "--config", str(cfg), *paths, *extra])

    _run.root = tmp_path
    return _run


def test_synth_counts_and_rerun(run):
    assert run("synth", "--pieces", "3", "--singers", "4", "--duration", "0.5") == 0
    root = run.root / "corpus"
    wavs = sorted(root.glob("stems/*/*.wav"))
    assert len(wavs) == 48
    rows = (root / "manifest.jsonl").read_text().splitlines()
    assert len(rows) == 768
    first = {p: p.read_bytes() for p in wavs}
    manifest = (root / "manifest.jsonl").read_bytes()
    assert run("synth", "--pieces", "3", "--singers", "4", "--duration", "0.5") == 0
    assert all(p.read_bytes() == b for p, b in first.items())
    assert (root / "manifest.jsonl").read_bytes() == manifest


def test_synth_single_quartet(run):
    assert run("synth", "--pieces", "1", "--singers", "1", "--set", "corpus.test_pieces=0") == 0
    root = run.root / "corpus"
    assert len(list(root.glob("stems/*/*.wav"))) == 4
    rows = [json.loads(r) for r in (root / "manifest.jsonl").read_text().splitlines()]
    assert len(rows) == 1 and rows[0]["split"] == "train"


def test_synth_unwritable_root(run, capsys):
    blocker = run.root / "blocker"
    blocker.write_text("a file, not a directory")
    assert run("synth", "--corpus-root", str(blocker / "corpus")) == 2
    assert "error" in capsys.readouterr().err


def test_missing_prerequisites(run, capsys):
    assert run("train") == 3
    assert "manifest" in capsys.readouterr().err
    assert run("synth") == 0
    assert run("separate") == 3
    assert "model.ckpt" in capsys.readouterr().err
    assert run("evaluate") == 3
    assert run("report") == 3
    assert main(["train", "--config", str(run.root / "absent.cfg")]) == 3


def test_schema_errors(run, tmp_path):
    assert run("synth", "--set", "train.unknown=1") == 4
    bad = tmp_path / "metrics_bad.csv"
    bad.write_text("mix,part,score\nm,Soprano,1\n")
    assert run("report", str(bad)) == 4


def test_separate_oracle_without_f0_files(run, capsys):
    assert run("synth") == 0
    assert run("train") == 0
    for f in (run.root / "corpus").glob("stems/*/*.f0.csv"):
        f.unlink()
    assert run("separate") == 3
    assert ".f0.csv" in capsys.readouterr().err


def test_full_chain(run):
    assert run("synth") == 0
    assert run("train") == 0
    assert run("separate") == 0
    assert run("evaluate") == 0
    reports = run.root / "reports"
    metrics = reports / "metrics_cunet_ds_global_quartet.csv"
    with open(metrics) as fh:
        rows = list(csv.DictReader(fh))
    mixes = [json.loads(r) for r in (run.root / "corpus" / "manifest.jsonl").read_text().splitlines()]
    n_test = sum(r["split"] == "test_case1" for r in mixes)
    assert len(rows) == 4 * n_test
    assert {(r["mix_id"], r["part"]) for r in rows} == {
        (m["mix_id"], p) for m in mixes if m["split"] == "test_case1" for p in ("Soprano", "Alto", "Tenor", "Bass")}
    assert run("report") == 0
    header = (reports / "report.csv").read_text().splitlines()[0]
    assert header == "model,metric,Soprano,Alto,Tenor,Bass,Avg."
    # every artifact directory carries the config hash
    for d in (run.root / "corpus", run.root / "ckpt" / "cunet_ds_global",
              run.root / "results" / "cunet_ds_global" / "quartet", reports):
        meta = json.loads((d / SIDECAR).read_text())
        assert meta["files"] and all(len(e["config_hash"]) == 16 for e in meta["files"].values())
        assert all(h in meta["configs"] for h in {e["config_hash"] for e in meta["files"].values()})


def test_estimated_f0_unison_chain(run, capsys):
    assert run("synth") == 0
    assert run("train") == 0
    assert run("separate", "--f0-mode", "estimated", "--use-case", "unison16") == 3
    assert "extract-f0" in capsys.readouterr().err
    assert run("extract-f0") == 0
    assert run("separate", "--f0-mode", "estimated", "--use-case", "unison16") == 0
    side = next(p for p in (run.root / "results" / "cunet_ds_global" / "unison16").glob("*.json") if p.name != SIDECAR)
    meta = json.loads(side.read_text())
    assert meta["f0_source"] == "estimated" and meta["use_case"] == "unison16"
    assert run("evaluate", "--use-case", "unison16") == 0


def test_separate_single_mixture(run, capsys):
    assert run("synth") == 0
    assert run("train") == 0
    stems = run.root / "corpus" / "stems" / "piece0"
    mix = stems / "soprano1.wav"  # any WAV will do for the plumbing
    assert run("separate", "--mixture", str(mix)) == 3
    f0 = [f"--f0={p}={stems / (p + '1.f0.csv')}" for p in ("soprano", "alto", "tenor", "bass")]
    assert run("separate", "--mixture", str(mix), "--out", str(run.root / "single"), *f0) == 0
    assert len(list((run.root / "single").glob("*.wav"))) == 4


def _write_run(path, model_id, sdr_by_part, n=5):
    rng = np.random.default_rng(abs(hash(model_id)) % 2**32)
    recs = [MetricsRecord(part, sdr + rng.normal(), 5.0, 9.0, f"m{i}", model_id)
            for part, sdr in sdr_by_part.items() for i in range(n)]
    write_metrics_csv(path, recs)


def test_report_five_models_marks_best_median(run):
    reports = run.root / "reports"
    kinds = ["waveunet", "unet", "cunet_da", "cunet_ds_local", "cunet_ds_global"]
    for k, kind in enumerate(kinds):
        base = {"Soprano": k, "Alto": -k, "Tenor": 2.0 if kind == "unet" else 0.0, "Bass": 1.0}
        _write_run(reports / f"metrics_{kind}_quartet.csv", kind, base)
    assert run("report") == 0
    rows = list(csv.DictReader(open(reports / "sdr_boxplot.csv")))
    assert [r["model"] for r in rows[::4]] == ["Wave-U-Net", "U-Net", "C-U-Net D-A", "C-U-Net D-S L", "C-U-Net D-S G"]
    best = {r["part"]: r["model"] for r in rows if r["best_median"] == "*"}
    assert best["Soprano"] == "C-U-Net D-S G" and best["Alto"] == "Wave-U-Net" and best["Tenor"] == "U-Net"
    assert sum(r["best_median"] == "*" for r in rows) == 4
    table = (reports / "report.csv").read_text().splitlines()
    assert len(table) == 1 + 5 * 3


def test_report_single_run_has_no_markers(run):
    reports = run.root / "reports"
    _write_run(reports / "metrics_unet_quartet.csv", "unet", {"Soprano": 1, "Alto": 2, "Tenor": 3, "Bass": 4})
    assert run("report") == 0
    header = (reports / "sdr_boxplot.csv").read_text().splitlines()[0]
    assert "best_median" not in header
    assert "best_median" not in json.loads((reports / "report.json").read_text())


def test_report_duplicate_model_newest_wins(run, caplog):
    reports = run.root / "reports"
    old, new = reports / "metrics_a_quartet.csv", reports / "metrics_b_quartet.csv"
    _write_run(old, "unet", {"Soprano": -50, "Alto": -50, "Tenor": -50, "Bass": -50})
    _write_run(new, "unet", {"Soprano": 50, "Alto": 50, "Tenor": 50, "Bass": 50})
    reports.joinpath(SIDECAR).write_text(json.dumps({"configs": {}, "files": {
        old.name: {"created": "2026-01-01T00:00:00+00:00"},
        new.name: {"created": "2026-02-01T00:00:00+00:00"},
    }}))
    with caplog.at_level(logging.WARNING):
        # pass the newer file first so order of arguments cannot decide
        assert run("report", str(new), str(old)) == 0
    assert "unet" in caplog.text and "newer" in caplog.text
    rep = json.loads((reports / "report.json").read_text())
    assert rep["tables"]["unet"]["table"]["sdr"]["Soprano"]["mean"] > 40
