"""Dual-view diffusion transformer.

The input view (clean) and target view (noisy) are tokenized on the same
t x h x w latent grid. Each token concatenates the RGB latent (d channels)
and the Plücker latent (2d channels). The two views are stacked along the
sequence axis and processed with full self-attention. Positions are encoded
with 3-axis rotary embeddings, and each view gets a learned embedding. The
noise level enters through adaptive layer-norm modulation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NumericError, ShapeError


@dataclass(frozen=True)
class ModelConfig:
    latent_width: int = 16
    model_dim: int = 192
    depth: int = 6
    heads: int = 6
    rope_base: float = 10000.0
    views: int = 2
    mlp_ratio: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        hd = self.model_dim // self.heads
        if hd % 2 or hd < 6:
            raise ConfigError(f"per-head dim {hd} must be even and >= 6 for 3-axis rotary embeddings")
        if self.views != 2:
            raise ConfigError("the dual-view model requires views == 2")

    @property
    def token_width(self) -> int:
        return 3 * self.latent_width

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def to_dict(self) -> dict:
        return asdict(self)


TINY_CONFIG = ModelConfig(model_dim=24, depth=2, heads=2)


# ---------------------------------------------------------------------------
# Token layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """Joint two-view token sequence.

    tokens: (..., N, 3d) with N = 2 t h w; positions: (N, 4) integer rows
    (view, ti, hi, wi); noisy: (N,) bool, True for target-view tokens.
    """

    tokens: torch.Tensor
    positions: torch.Tensor
    noisy: torch.Tensor
    grid: tuple[int, int, int]

    @property
    def length(self) -> int:
        return self.positions.shape[0]

    def permuted(self, perm) -> "TokenSequence":
        perm = torch.as_tensor(perm, dtype=torch.long)
        return TokenSequence(self.tokens[..., perm, :], self.positions[perm], self.noisy[perm], self.grid)


def grid_positions(t: int, h: int, w: int) -> torch.Tensor:
    ti, hi, wi = torch.meshgrid(torch.arange(t), torch.arange(h), torch.arange(w), indexing="ij")
    cell = torch.stack([ti, hi, wi], dim=-1).reshape(-1, 3)
    views = torch.repeat_interleave(torch.arange(2), cell.shape[0])[:, None]
    return torch.cat([views, cell.repeat(2, 1)], dim=1)


def assemble_tokens(v_x, p_x, v_y, p_y) -> TokenSequence:
    """Concatenate RGB and Plücker latents per cell, then stack input view before target view.

    Accepts numpy arrays or tensors of shape (..., t, h, w, k); leading batch
    dimensions are carried through.
    """
    v_x, p_x, v_y, p_y = (torch.as_tensor(a) for a in (v_x, p_x, v_y, p_y))
    grid = tuple(v_x.shape[-4:-1])
    for name, a in (("p_x", p_x), ("v_y", v_y), ("p_y", p_y)):
        if tuple(a.shape[-4:-1]) != grid or a.shape[:-4] != v_x.shape[:-4]:
            raise ShapeError(f"{name} grid {tuple(a.shape)} does not match v_x {tuple(v_x.shape)}")
    if p_x.shape[-1] != 2 * v_x.shape[-1] or p_y.shape[-1] != 2 * v_y.shape[-1] or v_x.shape[-1] != v_y.shape[-1]:
        raise ShapeError("Plücker latents must have twice the RGB latent width")
    t, h, w = grid
    lead = v_x.shape[:-4]
    x = torch.cat([v_x, p_x], dim=-1).reshape(*lead, t * h * w, -1)
    y = torch.cat([v_y, p_y], dim=-1).reshape(*lead, t * h * w, -1)
    tokens = torch.cat([x, y], dim=-2)
    positions = grid_positions(t, h, w)
    return TokenSequence(tokens, positions, positions[:, 0] == 1, grid)


def disassemble_tokens(seq: TokenSequence, latent_width: int = 16):
    """Inverse of :func:`assemble_tokens`, honouring the positional metadata."""
    t, h, w = seq.grid
    lead = seq.tokens.shape[:-2]
    out = torch.zeros(*lead, 2, t, h, w, seq.tokens.shape[-1], dtype=seq.tokens.dtype)
    v, ti, hi, wi = seq.positions.unbind(-1)
    out[..., v, ti, hi, wi, :] = seq.tokens
    d = latent_width
    return out[..., 0, :, :, :, :d], out[..., 0, :, :, :, d:], out[..., 1, :, :, :, :d], out[..., 1, :, :, :, d:]


# ---------------------------------------------------------------------------
# Rotary embeddings over (t, h, w)
# ---------------------------------------------------------------------------


def rope_axis_pairs(head_dim: int) -> tuple[int, int, int]:
    """Split head_dim / 2 rotation pairs across the three axes; leftovers go to time first."""
    if head_dim % 2 or head_dim < 6:
        raise ConfigError(f"per-head dim {head_dim} must be even and >= 6")
    pairs = head_dim // 2
    base, rem = divmod(pairs, 3)
    return tuple(base + (1 if i < rem else 0) for i in range(3))


def rope_angles(positions: torch.Tensor, head_dim: int, base: float = 10000.0, dtype=torch.float64) -> torch.Tensor:
    """Rotation angle of every channel pair, shape (N, head_dim / 2)."""
    angles = []
    for axis, n in enumerate(rope_axis_pairs(head_dim)):
        axis_dim = 2 * n
        freq = base ** (-2.0 * torch.arange(n, dtype=torch.float64) / axis_dim)
        angles.append(positions[:, axis].to(torch.float64)[:, None] * freq[None, :])
    return torch.cat(angles, dim=-1).to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.stack([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)
    return out.flatten(-2)


def rope_encode(x, positions, base: float = 10000.0) -> torch.Tensor:
    """Rotate per-head vectors ``x`` (..., N, head_dim) by their (ti, hi, wi) positions (N, 3)."""
    x = torch.as_tensor(x)
    positions = torch.as_tensor(positions)
    ang = rope_angles(positions, x.shape[-1], base, dtype=x.dtype)
    return apply_rope(x, ang.cos(), ang.sin())


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


def noise_features(sigma: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of the noise level (sigma in [0, 1])."""
    half = dim // 2
    freq = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=sigma.dtype) / half)
    arg = 1000.0 * sigma[..., None] * freq
    feats = torch.cat([arg.cos(), arg.sin()], dim=-1)
    if dim % 2:
        feats = F.pad(feats, (0, 1))
    return feats


def modulate(x, shift, scale):
    return x * (1 + scale) + shift


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, cos, sin):
        B, N, D = x.shape
        hd = D // self.heads
        q, k, v = self.qkv(x).reshape(B, N, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        q = apply_rope(q, cos, sin)
        k = apply_rope(k, cos, sin)
        att = torch.softmax((q @ k.transpose(-1, -2)) / math.sqrt(hd), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(B, N, D)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(approximate="tanh"), nn.Linear(mlp_ratio * dim, dim))
        self.ada = nn.Linear(dim, 6 * dim)

    def forward(self, x, cond, views, cos, sin):
        # cond: (B, 2, D) one vector per view; gathered per token below
        mod = self.ada(F.silu(cond))[:, views]
        shift1, scale1, gate1, shift2, scale2, gate2 = mod.chunk(6, dim=-1)
        x = x + gate1 * self.attn(modulate(self.norm1(x), shift1, scale1), cos, sin)
        x = x + gate2 * self.mlp(modulate(self.norm2(x), shift2, scale2))
        return x


class Denoiser(nn.Module):
    """Predicts the target-view noise from the joint token sequence."""

    def __init__(self, config: ModelConfig = ModelConfig(), zero_init_output: bool = True):
        super().__init__()
        self.config = config
        D = config.model_dim
        self.embed = nn.Linear(config.token_width, D)
        self.view_embed = nn.Parameter(torch.empty(config.views, D))
        self.noise_mlp = nn.Sequential(nn.Linear(D, D), nn.SiLU(), nn.Linear(D, D))
        self.blocks = nn.ModuleList(Block(D, config.heads, config.mlp_ratio) for _ in range(config.depth))
        self.final_norm = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.final_ada = nn.Linear(D, 2 * D)
        self.out = nn.Linear(D, config.latent_width)
        self.reset_parameters(zero_init_output)

    @torch.no_grad()
    def reset_parameters(self, zero_init_output: bool = True):
        gen = torch.Generator().manual_seed(self.config.seed)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                bound = 1.0 / math.sqrt(module.in_features)
                module.weight.uniform_(-bound, bound, generator=gen)
                module.bias.uniform_(-bound, bound, generator=gen)
        self.view_embed.normal_(0.0, 0.02, generator=gen)
        if zero_init_output:
            self.out.weight.zero_()
            self.out.bias.zero_()

    def check_finite(self, seq: TokenSequence, sigma: torch.Tensor):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise NumericError(f"non-finite value in parameter {name!r}")
        if not torch.isfinite(seq.tokens).all():
            bad = torch.nonzero(~torch.isfinite(seq.tokens))[0].tolist()
            raise NumericError(f"non-finite value in input tokens at index {bad}")
        if not torch.isfinite(sigma).all():
            raise NumericError("non-finite noise level")

    def forward(self, seq: TokenSequence, sigma) -> torch.Tensor:
        """Return predicted noise for the target view, shape (B, t, h, w, d) (or unbatched)."""
        tokens = seq.tokens
        unbatched = tokens.dim() == 2
        if unbatched:
            tokens = tokens[None]
        dtype = self.embed.weight.dtype
        tokens = tokens.to(dtype)
        B, N, C = tokens.shape
        if C != self.config.token_width or N != seq.length:
            raise ShapeError(f"expected tokens (B, {seq.length}, {self.config.token_width}), got {tuple(tokens.shape)}")
        sigma = torch.as_tensor(sigma, dtype=dtype).reshape(-1).expand(B)
        self.check_finite(TokenSequence(tokens, seq.positions, seq.noisy, seq.grid), sigma)
        if torch.any(sigma <= 0):
            raise NumericError("noise level must be positive")

        views = seq.positions[:, 0].long()
        D = self.config.model_dim
        # clean input view is conditioned on sigma = 0
        levels = torch.stack([torch.zeros_like(sigma), sigma], dim=1)
        cond = self.noise_mlp(noise_features(levels, D))

        ang = rope_angles(seq.positions[:, 1:], self.config.head_dim, self.config.rope_base, dtype=dtype)
        cos, sin = ang.cos(), ang.sin()

        x = self.embed(tokens) + self.view_embed[views]
        for block in self.blocks:
            x = block(x, cond, views, cos, sin)
        shift, scale = self.final_ada(F.silu(cond))[:, views].chunk(2, dim=-1)
        x = modulate(self.final_norm(x), shift, scale)

        target = seq.noisy
        pred = self.out(x[:, target])
        t, h, w = seq.grid
        grid = torch.zeros(B, t, h, w, self.config.latent_width, dtype=pred.dtype)
        _, ti, hi, wi = seq.positions[target].long().unbind(-1)
        grid = grid.index_put((torch.arange(B)[:, None], ti[None], hi[None], wi[None]), pred)
        return grid[0] if unbatched else grid


# ---------------------------------------------------------------------------
# Flat parameter views and gradients
# ---------------------------------------------------------------------------


def flat_params(model: nn.Module) -> torch.Tensor:
    return nn.utils.parameters_to_vector(model.parameters()).detach().clone()


def load_flat_params(model: nn.Module, vec) -> None:
    vec = torch.as_tensor(np.asarray(vec) if not isinstance(vec, torch.Tensor) else vec)
    n = sum(p.numel() for p in model.parameters())
    if vec.numel() != n:
        raise ShapeError(f"flat parameter vector has {vec.numel()} entries, model needs {n}")
    with torch.no_grad():
        nn.utils.vector_to_parameters(vec.to(next(model.parameters()).dtype), model.parameters())


def gradients(model: nn.Module, loss: torch.Tensor) -> torch.Tensor:
    """Reverse-mode gradient of a scalar loss w.r.t. every trainable tensor, flattened."""
    if not torch.isfinite(loss).all():
        raise NumericError(f"non-finite loss {loss.item()}")
    params = [p for p in model.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat([(torch.zeros_like(p) if g is None else g).reshape(-1) for p, g in zip(params, grads)])
