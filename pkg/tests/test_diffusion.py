import math

import numpy as np
import pytest
import torch

from anyview import diffusion as D
from anyview import geometry as g
from anyview import model as M
from anyview.errors import ConfigError, ShapeError


@pytest.fixture(scope="module")
def schedule():
    return D.NoiseSchedule()


def test_schedule_properties(schedule):
    a = schedule.alpha_bar
    assert len(a) == 1001
    assert abs(a[0] - 1.0) < 1e-9
    assert np.all(np.diff(a) < 0)
    assert a[-1] > 0


def test_schedule_matches_cosine_formula_before_clipping(schedule):
    # closed form away from the clipped tail
    f = lambda s: math.cos((s / 1000 + 0.008) / 1.008 * math.pi / 2) ** 2
    for s in (1, 100, 500, 900):
        assert schedule.abar(s) == pytest.approx(f(s) / f(0), rel=1e-9)


def test_add_noise_step_zero_exact(schedule):
    x = np.random.default_rng(0).normal(size=(2, 2, 2, 16))
    eps = np.random.default_rng(1).normal(size=x.shape)
    assert np.array_equal(D.add_noise(x, eps, 0, schedule), x)


@pytest.mark.parametrize("s", [10, 500, 990])
def test_add_noise_variance_monte_carlo(schedule, s):
    eps = np.random.default_rng(s).normal(size=100_000)
    xs = D.add_noise(np.zeros_like(eps), eps, s, schedule)
    assert np.var(xs) == pytest.approx(1 - schedule.abar(s), rel=0.02)


def test_add_noise_linear_in_x0(schedule):
    rng = np.random.default_rng(2)
    a, b, eps = rng.normal(size=(3, 4, 16))
    s = 300
    lhs = D.add_noise(2 * a + 3 * b, eps, s, schedule)
    rhs = 2 * D.add_noise(a, eps, s, schedule) + 3 * D.add_noise(b, eps, s, schedule) - 4 * math.sqrt(1 - schedule.abar(s)) * eps
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_add_noise_errors(schedule):
    with pytest.raises(ShapeError):
        D.add_noise(np.zeros(3), np.zeros(4), 1, schedule)
    with pytest.raises(ConfigError):
        D.add_noise(np.zeros(3), np.zeros(3), 1001, schedule)


def random_batch(B=2, seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return [torch.randn(B, 2, 2, 2, k, generator=gen, dtype=dtype) for k in (16, 32, 16, 32)]


def oracle_eps_denoiser(x0):
    """Exact noise from the noisy target tokens, given the true clean latent."""

    def denoise(seq, sigma):
        _, _, x_s, _ = M.disassemble_tokens(seq)
        sigma = torch.as_tensor(sigma, dtype=x_s.dtype).reshape(-1, *([1] * (x_s.dim() - 1)))
        return (x_s - torch.sqrt(1 - sigma**2) * x0) / sigma

    return denoise


def test_training_loss_zero_for_oracle(schedule):
    batch = random_batch()
    loss = D.training_loss(oracle_eps_denoiser(batch[2]), batch, torch.Generator().manual_seed(0), schedule)
    assert float(loss) < 1e-12


def test_training_loss_of_zero_denoiser_is_unit(schedule):
    batch = random_batch(B=64, seed=1)

    def zero(seq, sigma):
        return torch.zeros(seq.tokens.shape[0], 2, 2, 2, 16, dtype=seq.tokens.dtype)

    loss = D.training_loss(zero, batch, torch.Generator().manual_seed(1), schedule)
    assert float(loss) == pytest.approx(1.0, abs=0.05)


def test_training_loss_ignores_input_view_entries(schedule):
    # the loss only ever sees the target-view output grid
    model = M.Denoiser(M.TINY_CONFIG, zero_init_output=False).double()
    batch = random_batch()
    loss = D.training_loss(model, batch, torch.Generator().manual_seed(0), schedule)
    assert loss.ndim == 0 and torch.isfinite(loss)


def make_window(rng, size=(16, 16), T=4):
    k = g.make_intrinsics(12, 12, 8, 8)
    poses = np.stack([g.random_rigid(rng, 2.0) for _ in range(T)])
    return g.CameraTrajectory(poses, np.repeat(k[None], T, 0), size)


def test_training_loss_gauge_invariant(schedule):
    rng = np.random.default_rng(3)
    tx, ty = make_window(rng), make_window(rng)
    rgb = rng.uniform(size=(4, 16, 16, 3))
    rgb_y = rng.uniform(size=(4, 16, 16, 3))
    G = g.random_rigid(rng, 4.0)
    moved = [t.with_poses(g.compose(G, t.poses)) for t in (tx, ty)]
    model = M.Denoiser(M.TINY_CONFIG, zero_init_output=False).double()
    losses = []
    for a, b in ((tx, ty), moved):
        pair = D.encode_pair(rgb, a, b, 3.0, rgb_y=rgb_y)
        batch = D.stack_pairs([pair], dtype=torch.float64)
        losses.append(float(D.training_loss(model, batch, torch.Generator().manual_seed(5), schedule).detach()))
    assert losses[0] == pytest.approx(losses[1], abs=1e-9)


def test_step_sequence(schedule):
    seq = D.step_sequence(schedule, 50)
    assert seq[0] == 1000 and seq[-1] == 0 and len(seq) == 51
    assert all(a > b for a, b in zip(seq, seq[1:]))
    with pytest.raises(ConfigError):
        D.step_sequence(schedule, 0)


def test_ddim_step_same_step_is_identity(schedule):
    x = torch.randn(3, 16, dtype=torch.float64)
    eps = torch.randn(3, 16, dtype=torch.float64)
    for s in (1, 200, 999):
        assert torch.allclose(D.ddim_step(x, eps, s, s, schedule), x, atol=1e-12)


def test_oracle_sampler_recovers_x0(schedule):
    gen = torch.Generator().manual_seed(4)
    x0 = torch.rand(2, 2, 2, 16, generator=gen, dtype=torch.float64) - 0.5
    cond = [torch.zeros(2, 2, 2, k, dtype=torch.float64) for k in (16, 32, 32)]
    out = D.sample_latent(oracle_eps_denoiser(x0), *cond, D.SamplerConfig(steps=50, seed=1), schedule, dtype=torch.float64)
    assert torch.max(torch.abs(out[0] - x0)) < 1e-4


def test_sampler_sign_equivariance_for_odd_denoiser(schedule):
    def odd(seq, sigma):
        _, _, x_s, _ = M.disassemble_tokens(seq)
        return 0.3 * x_s

    cond = [torch.zeros(1, 2, 2, k, dtype=torch.float64) for k in (16, 32, 32)]
    noise = D.initial_noise((1, 1, 2, 2, 16), 7, torch.float64)
    cfg = D.SamplerConfig(steps=20)
    a = D.sample_latent(odd, *cond, cfg, schedule, noise=noise, dtype=torch.float64)
    b = D.sample_latent(odd, *cond, cfg, schedule, noise=-noise, dtype=torch.float64)
    assert torch.allclose(a, -b, atol=1e-12)


def test_sample_deterministic_and_seed_dependent(schedule):
    model = M.Denoiser(M.TINY_CONFIG, zero_init_output=False)
    v_x, p_x, _, p_y = (a[0].float() for a in random_batch(B=1))
    cfg = D.SamplerConfig(steps=5, seed=3, samples=4)
    a = D.sample(model, v_x, p_x, p_y, cfg, schedule)
    b = D.sample(model, v_x, p_x, p_y, cfg, schedule)
    assert a.shape == (4, 8, 16, 16, 3)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a[0], a[1])


def test_sampler_config_validation():
    with pytest.raises(ConfigError):
        D.SamplerConfig(steps=0)
    with pytest.raises(ConfigError):
        D.SamplerConfig(samples=0)


def test_encode_pair_scales_and_shapes():
    rng = np.random.default_rng(5)
    tx, ty = make_window(rng), make_window(rng)
    pair = D.encode_pair(np.full((4, 16, 16, 3), 0.5), tx, ty, None, rgb_y=np.zeros((4, 16, 16, 3)))
    assert pair.v_x.shape == (1, 2, 2, 16) and pair.p_x.shape == (1, 2, 2, 32)
    # gray 0.5 -> 0 in [-1, 1]; black -> -1 -> DC of -16 per channel
    assert np.allclose(pair.v_x, 0)
    assert np.allclose(pair.v_y[..., 0], -16 * D.LATENT_SCALE)
