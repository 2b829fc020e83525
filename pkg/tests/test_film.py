import numpy as np
import pytest
import torch

from satbsep.film import (
    FilmParams,
    Granularity,
    PitchConditionGenerator,
    SourceConditionGenerator,
    condition_generator_da,
    condition_generator_ds,
    film_apply,
)
from satbsep.pitch import encode_control


def central_differences(loss_fn, tensor, eps=1e-6):
    grad = torch.zeros_like(tensor)
    flat, gflat = tensor.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = loss_fn().item()
        flat[i] = orig - eps
        down = loss_fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def rel_err(a, b):
    return (torch.linalg.norm(a - b) / max(torch.linalg.norm(b), 1e-12)).item()


@pytest.mark.parametrize("gran", list(Granularity))
def test_identity_is_exact(gran):
    x = torch.randn(2, 16, 8, 8)
    shape = {Granularity.PER_ENCODER_BLOCK_CHANNEL: (2, 16),
             Granularity.PER_BIN_PER_FRAME: (2, 8, 8),
             Granularity.PER_FRAME: (2, 1, 8)}[gran]
    if gran is not Granularity.PER_ENCODER_BLOCK_CHANNEL:
        x = torch.randn(2, 1, 8, 8)
    out = film_apply(x, FilmParams.identity(shape, gran))
    assert torch.equal(out, x)


def test_scale_zero_gives_constant():
    x = torch.randn(1, 1, 4, 6)
    p = FilmParams(torch.zeros(1, 4, 6), torch.full((1, 4, 6), 2.5), "per_bin_per_frame")
    assert torch.all(film_apply(x, p) == 2.5)


def test_scalar_arithmetic():
    p = FilmParams(torch.tensor([[2.0]]), torch.tensor([[1.0]]), "per_frame")
    assert film_apply(torch.tensor([[3.0]]), p).item() == 7.0


def test_per_frame_broadcasts_over_bins():
    x = torch.ones(1, 1, 5, 3)
    gamma = torch.tensor([[[1.0, 2.0, 3.0]]])
    out = film_apply(x, FilmParams(gamma, torch.zeros_like(gamma), "per_frame"))
    assert torch.equal(out[0, 0], torch.tensor([[1.0, 2.0, 3.0]]).expand(5, 3))


def test_non_broadcastable_rejected():
    x = torch.ones(1, 1, 8, 8)
    with pytest.raises(ValueError):
        film_apply(x, FilmParams(torch.ones(1, 7, 8), torch.zeros(1, 7, 8), "per_bin_per_frame"))
    with pytest.raises(ValueError):
        FilmParams(torch.ones(3), torch.zeros(4), "per_frame")


@pytest.mark.parametrize(
    "gran, gshape",
    [("per_encoder_block_channel", (4,)), ("per_bin_per_frame", (8, 8)), ("per_frame", (1, 8))],
)
def test_film_gradients_match_finite_differences(gran, gshape):
    torch.manual_seed(0)
    x = torch.randn(4, 8, 8, dtype=torch.float64)
    w = torch.randn(4, 8, 8, dtype=torch.float64)
    gamma = torch.randn(gshape, dtype=torch.float64, requires_grad=True)
    beta = torch.randn(gshape, dtype=torch.float64, requires_grad=True)

    def loss():
        return (w * torch.tanh(film_apply(x, FilmParams(gamma, beta, gran)))).sum()

    loss().backward()
    with torch.no_grad():
        for t in (gamma, beta):
            assert rel_err(t.grad, central_differences(loss, t)) < 1e-4


def _randomise(module, seed):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(0.5 * torch.randn(p.shape, generator=g, dtype=p.dtype))


@pytest.mark.parametrize("variant", ["global", "local"])
def test_pitch_generator_gradients(variant):
    gen = PitchConditionGenerator(variant, n_control=4, n_bins=8, n_frames=8, hidden=4).double()
    _randomise(gen, 1)
    rng = np.random.default_rng(0)
    z = torch.zeros(1, 8, 4, dtype=torch.float64)
    z[0, np.arange(8), rng.integers(0, 4, 8)] = 1.0
    x = torch.randn(1, 1, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    w = torch.randn(1, 1, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(3))

    def loss():
        return (w * film_apply(x, gen(z))).sum()

    loss().backward()
    with torch.no_grad():
        for name, p in gen.named_parameters():
            assert rel_err(p.grad, central_differences(loss, p)) < 1e-4, name


def test_source_generator_gradients():
    gen = SourceConditionGenerator(channels=(4, 8), hidden=6).double()
    _randomise(gen, 4)
    z = torch.tensor([[0, 0, 1.0, 0]], dtype=torch.float64)
    xs = [torch.randn(1, c, 8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(c)) for c in (4, 8)]

    def loss():
        return sum(torch.sin(film_apply(x, p)).sum() for x, p in zip(xs, gen(z)))

    loss().backward()
    with torch.no_grad():
        for name, p in gen.named_parameters():
            assert rel_err(p.grad, central_differences(loss, p)) < 1e-4, name


def test_source_generator_shapes_and_identity_init():
    gen = SourceConditionGenerator()
    params = condition_generator_da(gen, np.eye(4)[0])
    assert [p.gamma.shape[-1] for p in params] == [16, 32, 64, 128, 256, 512]
    for p in params:
        assert torch.all(p.gamma == 1) and torch.all(p.beta == 0)
        assert p.granularity is Granularity.PER_ENCODER_BLOCK_CHANNEL


def test_source_generator_rejects_non_one_hot():
    gen = SourceConditionGenerator()
    with pytest.raises(ValueError):
        condition_generator_da(gen, [0.5, 0.5, 0, 0])
    with pytest.raises(ValueError):
        condition_generator_da(gen, [1, 0, 0])


def test_pitch_generator_output_shapes():
    z = encode_control(np.full(128, 220.0))
    g = condition_generator_ds(PitchConditionGenerator("global"), z)
    assert tuple(g.gamma.shape[-2:]) == (512, 128) and tuple(g.beta.shape[-2:]) == (512, 128)
    l = condition_generator_ds(PitchConditionGenerator("local"), z)
    assert tuple(l.gamma.shape[-2:]) == (1, 128) and tuple(l.beta.shape[-2:]) == (1, 128)


def test_pitch_generator_wrong_shape():
    with pytest.raises(ValueError):
        condition_generator_ds(PitchConditionGenerator("global"), np.zeros((100, 360)))


def test_pitch_generator_is_finite_for_one_hot_input():
    gen = PitchConditionGenerator("global")
    _randomise(gen, 5)
    f0 = np.random.default_rng(1).uniform(90, 880, 128)
    f0[::7] = 0
    p = condition_generator_ds(gen, encode_control(f0))
    assert torch.isfinite(p.gamma).all() and torch.isfinite(p.beta).all()


def test_pitch_generator_time_shift_equivariance():
    gen = PitchConditionGenerator("global").double()
    _randomise(gen, 6)
    f0 = np.random.default_rng(2).uniform(100, 800, 128)
    z = torch.from_numpy(encode_control(f0)).double()
    k = 7
    shifted = torch.roll(z, k, dims=0)
    a = gen(z).gamma[0]
    b = gen(shifted).gamma[0]
    # columns whose receptive field avoids the wrapped frames and the zero padding
    assert torch.allclose(b[:, k + 10 : 118], a[:, 10 : 118 - k], atol=1e-12)
