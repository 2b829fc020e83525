import dataclasses
import json

import numpy as np
import pytest
import torch

from satbsep.audio import AudioClip
from satbsep.corpus import PARTS, enumerate_quartets, make_unison_mix, synthesize_piece
from satbsep.dsp import n_frames_for
from satbsep.nets import ModelConfig, load_checkpoint
from satbsep.pipeline import (
    ConfigurationError,
    TrainSpec,
    conditioning_tracks,
    mixture_baseline,
    run_use_case,
    separate,
    train,
    write_separation,
)
from satbsep.pitch import F0Track

SMALL = [4, 8, 16]


@pytest.fixture(scope="module")
def stems():
    return synthesize_piece("toy", 2, seed=21, duration_s=3)


@pytest.fixture(scope="module")
def quartets(stems):
    return enumerate_quartets({p: stems[p][:1] for p in PARTS})


def small_spec(kind, steps=20, **kw):
    return TrainSpec(ModelConfig(kind=kind, encoder_channels=SMALL, dropout=0.0), max_steps=steps,
                     val_fraction=0.0, **kw)


@pytest.fixture(scope="module")
def trained_ds(quartets):
    return train(small_spec("cunet_ds_global", steps=200, learning_rate=3e-3), quartets)


def test_toy_overfit_halves_loss(trained_ds):
    losses = [r["loss"] for r in trained_ds[0].history]
    assert len(losses) == 200
    assert np.mean(losses[-20:]) < 0.5 * np.mean(losses[:20])


def test_training_is_deterministic(quartets, tmp_path):
    a = train(small_spec("cunet_ds_local", steps=15, checkpoint_every=10), quartets, tmp_path / "a")
    b = train(small_spec("cunet_ds_local", steps=15, checkpoint_every=10), quartets, tmp_path / "b")
    assert [r["loss"] for r in a[0].history] == [r["loss"] for r in b[0].history]
    for name in ("model.ckpt", "model_step10.ckpt", "train_log.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert load_checkpoint(tmp_path / "a" / "model.ckpt").checkpoint_id == a[0].checkpoint_id


def test_plain_unet_trains_one_model_per_part(quartets, tmp_path):
    ckpts = train(small_spec("unet", steps=3), quartets, tmp_path)
    assert [c.config.target_part for c in ckpts] == [p.label for p in PARTS]
    assert sorted(p.name for p in tmp_path.glob("model_*.ckpt")) == [
        "model_alto.ckpt", "model_bass.ckpt", "model_soprano.ckpt", "model_tenor.ckpt"]
    assert len(train(small_spec("cunet_da", steps=3), quartets)) == 1


def test_pitch_conditioning_needs_f0(stems):
    parts = {p: stems[p][:1] for p in PARTS}
    parts[PARTS[2]] = [dataclasses.replace(stems[PARTS[2]][0], f0=None)]
    with pytest.raises(ConfigurationError):
        train(small_spec("cunet_ds_global", steps=1), enumerate_quartets(parts))


def test_empty_training_split():
    with pytest.raises(ConfigurationError):
        train(small_spec("unet"), [])


def test_bad_train_spec():
    with pytest.raises(ConfigurationError):
        TrainSpec(loss="l2")
    with pytest.raises(ConfigurationError):
        TrainSpec(patch_hop=0)


def test_early_stopping_and_validation(stems):
    mixes = enumerate_quartets(stems)  # 16 quartets, one held out for validation
    ck = train(TrainSpec(ModelConfig(kind="cunet_da", encoder_channels=SMALL), max_steps=40,
                         eval_every=2, patience=1, val_fraction=0.1, learning_rate=0.5), mixes)[0]
    evals = [r for r in ck.history if "val_loss" in r]
    assert evals and all(r["step"] % 2 == 0 for r in evals)
    # weights come from the best validation step, and training stops once patience runs out
    assert ck.step == min(evals, key=lambda r: r["val_loss"])["step"]
    if len(ck.history) < 40:
        assert evals[-1]["val_loss"] >= evals[-2]["val_loss"]


def test_separation_preserves_length(trained_ds, quartets):
    mix = quartets[0]
    f0s = conditioning_tracks(mix)
    res = separate(mix.mixture, trained_ds, f0s, mix.mix_id)
    assert all(len(res.estimates[p]) == len(mix.mixture) for p in PARTS)
    # mask in [0, 1] applied per bin: the estimates never add energy beyond the mixture
    for p in PARTS:
        assert np.linalg.norm(res.estimates[p].samples) <= 1.01 * np.linalg.norm(mix.mixture.samples)


def test_silence_in_silence_out(trained_ds):
    n = 22050
    silent = AudioClip(np.zeros(n))
    f0s = {p: F0Track(np.zeros(n_frames_for(n))) for p in PARTS}
    res = separate(silent, trained_ds, f0s)
    for p in PARTS:
        assert not res.estimates[p].samples.any()


def test_f0_length_mismatch(trained_ds, quartets):
    mix = quartets[0]
    f0s = {p: F0Track(np.full(10, 200.0)) for p in PARTS}
    with pytest.raises(ValueError, match="frames"):
        separate(mix.mixture, trained_ds, f0s)


def test_pitch_model_without_f0(trained_ds, quartets):
    with pytest.raises(ConfigurationError):
        separate(quartets[0].mixture, trained_ds, None)


def test_use_cases_and_sidecar(trained_ds, quartets, stems, tmp_path):
    results = run_use_case("quartet", trained_ds, quartets[:1])
    assert len(results[0].metrics) == 4
    assert {m.part for m in results[0].metrics} == {p.label for p in PARTS}
    unison = make_unison_mix(stems, mix_id="toy_unison")
    (u,) = run_use_case("unison16", trained_ds, [unison], f0_mode="estimated")
    assert u.use_case == "unison16" and u.f0_source == "estimated"
    assert all(np.isfinite(m.sdr) for m in u.metrics)
    sidecar = write_separation(tmp_path, results[0])
    meta = json.loads(sidecar.read_text())
    assert meta["checkpoint"] == trained_ds[0].checkpoint_id
    assert meta["f0_source"] == "oracle" and meta["use_case"] == "quartet"
    assert all((tmp_path / name).exists() for name in meta["stems"].values())


def test_use_case_errors(trained_ds, quartets):
    with pytest.raises(ValueError):
        run_use_case("quartet", trained_ds, [])
    with pytest.raises(ValueError):
        run_use_case("unison16", trained_ds, quartets[:1])
    with pytest.raises(ValueError):
        run_use_case("octet", trained_ds, quartets[:1])


def test_trained_model_beats_mixture(trained_ds, quartets):
    (res,) = run_use_case("quartet", trained_ds, quartets[:1])
    base = mixture_baseline(quartets[0])
    assert np.mean([m.sdr for m in res.metrics]) > np.mean([m.sdr for m in base])


def test_conditioning_selects_part(trained_ds, quartets):
    # feeding another part's F0 pulls the estimate toward that part
    mix = quartets[0]
    f0s = conditioning_tracks(mix)
    swapped = dict(f0s)
    swapped[PARTS[0]], swapped[PARTS[3]] = f0s[PARTS[3]], f0s[PARTS[0]]
    a = separate(mix.mixture, trained_ds, f0s).estimates[PARTS[0]].samples
    b = separate(mix.mixture, trained_ds, swapped).estimates[PARTS[0]].samples
    sop, bass = mix.scaled_stem(PARTS[0]), mix.scaled_stem(PARTS[3])

    def corr(x, y):
        return float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y) + 1e-12))

    assert corr(a, sop) > corr(b, sop)
    assert corr(b, bass) > corr(a, bass)


def test_waveunet_trains_and_separates(quartets):
    spec = TrainSpec(ModelConfig(kind="waveunet", wave_layers=4, wave_growth=4), max_steps=3, val_fraction=0.0)
    ck = train(spec, quartets)
    res = separate(quartets[0].mixture, ck)
    assert all(len(res.estimates[p]) == len(quartets[0].mixture) for p in PARTS)
    assert all(np.isfinite(res.estimates[p].samples).all() for p in PARTS)


def test_global_rng_untouched_by_separation(trained_ds, quartets):
    torch.manual_seed(5)
    ref = torch.rand(1)
    torch.manual_seed(5)
    separate(quartets[0].mixture, trained_ds, conditioning_tracks(quartets[0]))
    assert torch.equal(torch.rand(1), ref)
