import numpy as np
import pytest
import torch

from anyview import model as M
from anyview.diffusion import NoiseSchedule, training_loss
from anyview.errors import ConfigError, NumericError, ShapeError

TINY = M.ModelConfig(model_dim=24, depth=2, heads=2, seed=3)


def random_grids(t, h, w, d=16, batch=(), seed=0, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    return [torch.randn(*batch, t, h, w, k, generator=gen, dtype=dtype) for k in (d, 2 * d, d, 2 * d)]


def tiny_model(seed=3, zero_out=False):
    cfg = M.ModelConfig(model_dim=24, depth=2, heads=2, seed=seed)
    return M.Denoiser(cfg, zero_init_output=zero_out).double()


# --- token layout ----------------------------------------------------------


def test_token_count_matches_formula_for_random_shapes():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t, h, w = (int(x) for x in rng.integers(1, 6, size=3))
        seq = M.assemble_tokens(*random_grids(t, h, w))
        assert seq.tokens.shape == (2 * t * h * w, 48)
        assert int((seq.positions[:, 0] == 0).sum()) == t * h * w
        assert len({tuple(p) for p in seq.positions.tolist()}) == seq.length


def test_token_layout_example():
    seq = M.assemble_tokens(*random_grids(2, 4, 4))
    assert seq.tokens.shape == (64, 48)
    assert seq.positions[:32, 0].eq(0).all() and seq.positions[32:, 0].eq(1).all()
    assert seq.positions[1].tolist() == [0, 0, 0, 1]
    assert seq.positions[4].tolist() == [0, 0, 1, 0]
    assert seq.noisy[32:].all() and not seq.noisy[:32].any()


def test_token_concat_order():
    v_x, p_x, v_y, p_y = random_grids(1, 2, 3)
    seq = M.assemble_tokens(v_x, p_x, v_y, p_y)
    assert torch.equal(seq.tokens[4, :16], v_x[0, 1, 1])
    assert torch.equal(seq.tokens[4, 16:], p_x[0, 1, 1])
    assert torch.equal(seq.tokens[6 + 5, :16], v_y[0, 1, 2])


def test_zero_latents_zero_tokens():
    zeros = [torch.zeros(2, 2, 2, k) for k in (16, 32, 16, 32)]
    assert torch.count_nonzero(M.assemble_tokens(*zeros).tokens) == 0


def test_disassemble_roundtrip():
    grids = random_grids(2, 3, 2, batch=(2,))
    seq = M.assemble_tokens(*grids)
    perm = torch.randperm(seq.length, generator=torch.Generator().manual_seed(1))
    back = M.disassemble_tokens(seq.permuted(perm))
    for a, b in zip(grids, back):
        assert torch.equal(a, b)


def test_mismatched_grids_raise():
    v_x, p_x, v_y, p_y = random_grids(2, 2, 2)
    with pytest.raises(ShapeError):
        M.assemble_tokens(v_x, p_x, v_y[:, :1], p_y)


# --- rotary embeddings -----------------------------------------------------


def test_rope_axis_split():
    assert M.rope_axis_pairs(12) == (2, 2, 2)
    assert M.rope_axis_pairs(32) == (6, 5, 5)
    assert M.rope_axis_pairs(8) == (2, 1, 1)
    with pytest.raises(ConfigError):
        M.rope_axis_pairs(7)
    with pytest.raises(ConfigError):
        M.ModelConfig(model_dim=12, heads=3)


def test_rope_zero_position_identity():
    x = torch.randn(5, 12, dtype=torch.float64)
    assert torch.equal(M.rope_encode(x, torch.zeros(5, 3, dtype=torch.long)), x)


@pytest.mark.parametrize("head_dim", [12, 32])
@pytest.mark.parametrize("axis", [0, 1, 2])
def test_rope_relative_shift(head_dim, axis):
    gen = torch.Generator().manual_seed(axis)
    q = torch.randn(head_dim, generator=gen, dtype=torch.float64)
    k = torch.randn(head_dim, generator=gen, dtype=torch.float64)
    i = torch.tensor([[1, 2, 3]])
    j = torch.tensor([[4, 0, 2]])
    for s in (1, 3, 7):
        shift = torch.zeros(1, 3, dtype=torch.long)
        shift[0, axis] = s
        a = M.rope_encode(q[None], i) @ M.rope_encode(k[None], j).T
        b = M.rope_encode(q[None], i + shift) @ M.rope_encode(k[None], j + shift).T
        assert abs(float(a - b)) < 1e-5


def test_rope_preserves_norm():
    x = torch.randn(30, 12, dtype=torch.float64)
    pos = torch.randint(0, 50, (30, 3))
    assert torch.allclose(M.rope_encode(x, pos).norm(dim=-1), x.norm(dim=-1), atol=1e-6)


# --- forward ---------------------------------------------------------------


def test_forward_shape_batched_and_unbatched():
    model = tiny_model()
    grids = random_grids(2, 3, 2, batch=(3,))
    out = model(M.assemble_tokens(*grids), torch.full((3,), 0.5, dtype=torch.float64))
    assert out.shape == (3, 2, 3, 2, 16)
    single = model(M.assemble_tokens(*[g[0] for g in grids]), 0.5)
    assert single.shape == (2, 3, 2, 16)
    assert torch.allclose(single, out[0], atol=1e-12)


def test_default_config_forward_shape():
    model = M.Denoiser(M.ModelConfig())
    out = model(M.assemble_tokens(*random_grids(1, 2, 2, dtype=torch.float32)), 0.3)
    assert out.shape == (1, 2, 2, 16)
    # zero-initialized output projection
    assert torch.count_nonzero(out) == 0


def test_forward_permutation_invariant():
    model = tiny_model()
    seq = M.assemble_tokens(*random_grids(2, 2, 2))
    perm = torch.randperm(seq.length, generator=torch.Generator().manual_seed(0))
    a = model(seq, 0.4)
    b = model(seq.permuted(perm), 0.4)
    assert torch.max(torch.abs(a - b)) < 1e-5


def test_view_embeddings_distinguish_views():
    model = tiny_model()
    seq = M.assemble_tokens(*random_grids(2, 2, 2))
    a = model(seq, 0.4)
    with torch.no_grad():
        model.view_embed.copy_(model.view_embed.flip(0))
    b = model(seq, 0.4)
    assert torch.max(torch.abs(a - b)) > 0


def test_input_view_conditioning_is_live():
    model = tiny_model()
    v_x, p_x, v_y, p_y = random_grids(2, 2, 2)
    a = model(M.assemble_tokens(v_x, p_x, v_y, p_y), 0.4)
    b = model(M.assemble_tokens(torch.zeros_like(v_x), torch.zeros_like(p_x), v_y, p_y), 0.4)
    assert torch.max(torch.abs(a - b)) > 0


def test_forward_bit_deterministic():
    model = tiny_model()
    seq = M.assemble_tokens(*random_grids(2, 2, 2))
    assert torch.equal(model(seq, 0.2), model(seq, 0.2))
    other = tiny_model()
    assert torch.equal(model(seq, 0.2), other(seq, 0.2))


def test_nan_inputs_and_params_raise():
    model = tiny_model()
    grids = random_grids(1, 2, 2)
    grids[0][0, 1, 1, 3] = float("nan")
    with pytest.raises(NumericError, match="input tokens"):
        model(M.assemble_tokens(*grids), 0.2)
    with torch.no_grad():
        model.blocks[1].mlp[0].weight[0, 0] = float("inf")
    with pytest.raises(NumericError, match="blocks.1.mlp.0.weight"):
        model(M.assemble_tokens(*random_grids(1, 2, 2)), 0.2)


def test_flat_params_roundtrip():
    model = tiny_model()
    vec = M.flat_params(model)
    other = tiny_model(seed=99)
    M.load_flat_params(other, vec)
    assert torch.equal(M.flat_params(other), vec)
    with pytest.raises(ShapeError):
        M.load_flat_params(other, vec[:-1])


# --- gradients -------------------------------------------------------------


def test_gradient_zero_at_perfect_prediction():
    model = tiny_model()
    seq = M.assemble_tokens(*random_grids(2, 2, 2))
    pred = model(seq, 0.3)
    loss = torch.mean((pred - pred.detach()) ** 2)
    grad = M.gradients(model, loss)
    assert torch.max(torch.abs(grad)) <= 1e-10


def test_gradient_linear_in_loss_scale():
    model = tiny_model()
    seq = M.assemble_tokens(*random_grids(2, 2, 2))
    target = torch.randn(2, 2, 2, 16, dtype=torch.float64)
    g1 = M.gradients(model, torch.mean((model(seq, 0.3) - target) ** 2))
    g2 = M.gradients(model, 2 * torch.mean((model(seq, 0.3) - target) ** 2))
    assert torch.max(torch.abs(g2 - 2 * g1)) < 1e-9


def test_gradient_nonfinite_loss_raises():
    model = tiny_model()
    with pytest.raises(NumericError):
        M.gradients(model, torch.tensor(float("nan")))


def diffusion_loss_fn(model, batch, seed=0):
    schedule = NoiseSchedule()
    return training_loss(model, batch, torch.Generator().manual_seed(seed), schedule)


def finite_difference_check(n_coords=50, h=1e-4, seed=0):
    """Max relative error between reverse-mode and central-difference gradients."""
    model = tiny_model(seed=seed)
    batch = random_grids(2, 2, 2, batch=(2,), seed=seed)
    grad = M.gradients(model, diffusion_loss_fn(model, batch)).numpy()
    base = M.flat_params(model)
    rng = np.random.default_rng(seed)
    coords = rng.choice(base.numel(), size=n_coords, replace=False)
    worst = 0.0
    for i in coords:
        vals = []
        for sgn in (1.0, -1.0):
            p = base.clone()
            p[i] += sgn * h
            M.load_flat_params(model, p)
            with torch.no_grad():
                vals.append(float(diffusion_loss_fn(model, batch)))
        fd = (vals[0] - vals[1]) / (2 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-7)
        worst = max(worst, abs(fd - grad[i]) / denom)
    M.load_flat_params(model, base)
    return worst


def test_gradient_matches_finite_differences():
    assert finite_difference_check() < 1e-4
