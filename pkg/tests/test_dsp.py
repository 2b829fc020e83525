import numpy as np
import pytest

from satbsep.audio import AudioClip
from satbsep.dsp import (
    Spectrogram,
    istft,
    load_spectrogram,
    patch_iter,
    reconstruct,
    save_spectrogram,
    stft,
)

SR = 22050


def rel_rms(a, b):
    return np.sqrt(np.mean((a - b) ** 2) / np.mean(b**2))


def sine(freq, n, sr=SR):
    return np.sin(2 * np.pi * freq * np.arange(n) / sr)


def test_sine_peak_bin():
    spec = stft(AudioClip(sine(440, SR)))
    # round(440 * 1024 / 22050) = 20
    assert np.argmax(spec.magnitude.mean(axis=1)) == round(440 * 1024 / SR) == 20


def test_zero_audio_zero_magnitude():
    spec = stft(AudioClip(np.zeros(5000)))
    assert np.all(spec.magnitude == 0)


def test_frame_count():
    spec = stft(AudioClip(np.random.default_rng(0).standard_normal(32768)))
    assert spec.values.shape == (512, 128)
    assert stft(AudioClip(np.ones(32769))).n_frames == 129


def test_empty_audio_rejected():
    with pytest.raises(ValueError):
        stft(AudioClip(np.zeros(0)))


@pytest.mark.parametrize("n", [1, 300, 1024, 32768, 40001])
def test_round_trip_noise(n):
    x = np.random.default_rng(n).standard_normal(n)
    y = istft(stft(AudioClip(x))).samples
    assert y.shape == x.shape
    assert rel_rms(y, x) < 1e-6


def test_round_trip_sine_keeps_frequency():
    x = sine(1000, 30000)
    y = istft(stft(AudioClip(x))).samples
    assert rel_rms(y, x) < 1e-6
    a = np.argmax(stft(AudioClip(x)).magnitude.mean(1))
    b = np.argmax(stft(AudioClip(y)).magnitude.mean(1))
    assert a == b


def test_zero_spectrogram_inverts_to_silence():
    spec = Spectrogram(np.zeros((512, 10), complex), length=2560)
    assert np.all(istft(spec).samples == 0)


def test_parseval_interior():
    x = np.random.default_rng(1).standard_normal(65536)
    spec = stft(AudioClip(x))
    win = np.hanning(1025)[:-1]
    full = np.vstack([spec.values, spec.nyquist[None]])
    weights = np.full(513, 2.0)
    weights[[0, 512]] = 1.0
    # frames well inside the clip see only real (unpadded) samples
    inner = slice(8, spec.n_frames - 8)
    spectral = (weights[:, None] * np.abs(full[:, inner]) ** 2).sum() / 1024
    # each frame carries sum_n x^2 w^2; over hop-spaced frames that is E * sum(w^2) / hop
    lo, hi = 8 * 256, (spec.n_frames - 8 - 1) * 256
    energy = np.sum(x[lo:hi] ** 2) * np.sum(win**2) / 256
    assert abs(spectral / energy - 1) < 0.01


@pytest.mark.parametrize(
    "n_frames, hop, offsets, padding",
    [(128, 128, [0], [0]), (130, 128, [0, 128], [0, 126]), (128, 64, [0, 64], [0, 64])],
)
def test_patch_iter_counts(n_frames, hop, offsets, padding):
    spec = Spectrogram(np.ones((512, n_frames), complex))
    patches = list(patch_iter(spec, hop))
    assert [p.offset for p in patches] == offsets
    assert [128 - p.n_valid for p in patches] == padding
    assert [p.padded for p in patches] == [pad > 0 for pad in padding]
    assert all(p.magnitude.shape == (512, 128) for p in patches)


@pytest.mark.parametrize("n_frames", [1, 127, 128, 129, 300, 1000])
@pytest.mark.parametrize("hop", [1, 37, 64, 128])
def test_patch_coverage(n_frames, hop):
    spec = Spectrogram(np.ones((512, n_frames), complex))
    covered = np.zeros(n_frames, bool)
    for p in patch_iter(spec, hop):
        covered[p.offset : p.offset + p.n_valid] = True
        assert np.all(p.magnitude >= 0)
        assert np.all(p.magnitude[:, p.n_valid :] == 0)
    assert covered.all()


def test_patch_hop_bounds():
    spec = Spectrogram(np.ones((512, 10), complex))
    with pytest.raises(ValueError):
        list(patch_iter(spec, 0))


def test_reconstruct_identity_and_zero_masks():
    x = np.random.default_rng(2).standard_normal(20000)
    spec = stft(AudioClip(x))
    ones = reconstruct(np.ones((512, spec.n_frames)), spec).samples
    unmasked = istft(Spectrogram(spec.values, length=spec.length)).samples  # Nyquist zeroed
    np.testing.assert_allclose(ones, unmasked, atol=1e-12)
    assert np.all(reconstruct(np.zeros((512, spec.n_frames)), spec).samples == 0)


def test_reconstruct_complementary_masks_add_up():
    x = np.random.default_rng(3).standard_normal(20000)
    spec = stft(AudioClip(x))
    m = np.random.default_rng(4).uniform(size=(512, spec.n_frames))
    a = reconstruct(m, spec).samples
    b = reconstruct(1 - m, spec).samples
    whole = reconstruct(np.ones_like(m), spec).samples
    np.testing.assert_allclose(a + b, whole, atol=1e-10)


def test_reconstruct_shape_mismatch():
    spec = stft(AudioClip(np.ones(5000)))
    with pytest.raises(ValueError):
        reconstruct(np.ones((512, spec.n_frames + 1)), spec)


def test_spectrogram_dump_round_trip(tmp_path):
    spec = stft(AudioClip(np.random.default_rng(5).standard_normal(4000)))
    save_spectrogram(tmp_path / "s.bin", spec)
    back = load_spectrogram(tmp_path / "s.bin")
    np.testing.assert_array_equal(back.values, spec.values)
    assert (back.sample_rate, back.fft_size, back.hop, back.length) == (SR, 1024, 256, 4000)
