"""Variance-preserving cosine schedule, epsilon-prediction loss and DDIM sampling.

Only the target-view RGB latent is ever noised; input-view latents and both
Plücker latents enter the network clean. All latents are multiplied by
``LATENT_SCALE`` before they reach the network so their magnitude is near
unit variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import tokenizer
from .errors import ConfigError, NumericError, ShapeError
from .geometry import CameraTrajectory, pluecker_from_camera, prepare_pair
from .model import TokenSequence, assemble_tokens

# orthonormal DCT coefficients of a [-1, 1] block are bounded by sqrt(4*8*8) = 16
LATENT_SCALE = 0.25
LATENT_BOUND = 16.0 * LATENT_SCALE

Denoiser = Callable[[TokenSequence, torch.Tensor], torch.Tensor]


class NoiseSchedule:
    """Cosine cumulative-signal schedule on integer steps 0..N.

    abar(s) = f(s) / f(0) with f(s) = cos^2((s/N + offset) / (1 + offset) * pi/2).
    Per-step betas are clipped at ``max_beta`` so abar(N) stays positive.
    """

    def __init__(self, steps: int = 1000, offset: float = 0.008, max_beta: float = 0.999):
        if steps < 1:
            raise ConfigError("schedule needs at least one step")
        self.steps = steps
        s = np.arange(steps + 1, dtype=np.float64)
        f = np.cos((s / steps + offset) / (1.0 + offset) * math.pi / 2) ** 2
        raw = f / f[0]
        betas = np.minimum(1.0 - raw[1:] / raw[:-1], max_beta)
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])

    def abar(self, s) -> np.ndarray:
        return self.alpha_bar[np.asarray(s)]

    def sigma(self, s) -> np.ndarray:
        """Noise standard deviation sqrt(1 - abar) fed to the network as its noise level."""
        return np.sqrt(1.0 - self.abar(s))


def _coef(values, like):
    if isinstance(like, torch.Tensor):
        c = torch.as_tensor(values, dtype=like.dtype)
    else:
        c = np.asarray(values, dtype=np.float64)
    return c.reshape(c.shape + (1,) * (like.ndim - c.ndim))


def add_noise(latent, eps, s, schedule: NoiseSchedule):
    """x_s = sqrt(abar) x0 + sqrt(1 - abar) eps; ``s`` may be a scalar or one step per batch row."""
    if tuple(latent.shape) != tuple(eps.shape):
        raise ShapeError(f"latent {tuple(latent.shape)} and noise {tuple(eps.shape)} differ in shape")
    s = np.asarray(s)
    if np.any(s < 0) or np.any(s > schedule.steps):
        raise ConfigError(f"step must lie in [0, {schedule.steps}]")
    a = schedule.abar(s)
    return _coef(np.sqrt(a), latent) * latent + _coef(np.sqrt(1.0 - a), latent) * eps


# ---------------------------------------------------------------------------
# Conditioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EncodedPair:
    """Network-scale latents of one (input view, target view) window."""

    v_x: np.ndarray  # t h w d
    p_x: np.ndarray  # t h w 2d
    v_y: np.ndarray | None
    p_y: np.ndarray


def encode_pair(
    rgb_x,
    traj_x: CameraTrajectory,
    traj_y: CameraTrajectory,
    normalization: float | None,
    rgb_y=None,
) -> EncodedPair:
    """Canonicalize, normalize and tokenize one window; RGB inputs are in [0, 1]."""
    cx, cy = prepare_pair(traj_x, traj_y, normalization)
    p_x = tokenizer.encode_pluecker(pluecker_from_camera(cx)).values
    p_y = tokenizer.encode_pluecker(pluecker_from_camera(cy)).values
    v_x = tokenizer.encode_video(2.0 * np.asarray(rgb_x) - 1.0).values
    v_y = None if rgb_y is None else tokenizer.encode_video(2.0 * np.asarray(rgb_y) - 1.0).values * LATENT_SCALE
    return EncodedPair(v_x * LATENT_SCALE, p_x * LATENT_SCALE, v_y, p_y * LATENT_SCALE)


def stack_pairs(pairs, dtype=torch.float32):
    """Batch a list of EncodedPair into four tensors."""
    fields = []
    for name in ("v_x", "p_x", "v_y", "p_y"):
        fields.append(torch.as_tensor(np.stack([getattr(p, name) for p in pairs]), dtype=dtype))
    return fields


# ---------------------------------------------------------------------------
# Training objective
# ---------------------------------------------------------------------------


def training_loss(denoiser: Denoiser, batch, generator: torch.Generator, schedule: NoiseSchedule) -> torch.Tensor:
    """Epsilon-prediction MSE over target-view latent entries.

    ``batch`` is (v_x, p_x, v_y, p_y) tensors with a leading batch dim. One
    step per row is drawn uniformly from 1..N.
    """
    v_x, p_x, v_y, p_y = batch
    B = v_y.shape[0]
    s = torch.randint(1, schedule.steps + 1, (B,), generator=generator).numpy()
    eps = torch.randn(v_y.shape, generator=generator, dtype=v_y.dtype)
    x_s = add_noise(v_y, eps, s, schedule)
    seq = assemble_tokens(v_x, p_x, x_s, p_y)
    sigma = torch.as_tensor(schedule.sigma(s), dtype=v_y.dtype)
    pred = denoiser(seq, sigma)
    loss = torch.mean((pred - eps) ** 2)
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite training loss {loss.item()}")
    return loss


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    seed: int = 0
    samples: int = 1
    clip_denoised: bool = True

    def __post_init__(self):
        if self.steps < 1 or self.samples < 1:
            raise ConfigError("sampler needs steps >= 1 and samples >= 1")


def step_sequence(schedule: NoiseSchedule, steps: int) -> list[int]:
    """Descending integer steps from N to 0 (inclusive), ``steps`` updates long."""
    if steps < 1 or steps > schedule.steps:
        raise ConfigError(f"inference steps must lie in [1, {schedule.steps}], got {steps}")
    seq = np.round(np.linspace(schedule.steps, 0, steps + 1)).astype(int)
    return [int(s) for s in seq]


def ddim_step(x, eps_hat, s: int, s_prev: int, schedule: NoiseSchedule, clip: float | None = None):
    """Deterministic update x_s -> x_{s_prev} through the implied clean estimate."""
    a, a_prev = schedule.abar(s), schedule.abar(s_prev)
    x0_hat = (x - math.sqrt(1.0 - a) * eps_hat) / math.sqrt(a)
    if clip is not None:
        x0_hat = x0_hat.clamp(-clip, clip) if isinstance(x0_hat, torch.Tensor) else np.clip(x0_hat, -clip, clip)
    return math.sqrt(a_prev) * x0_hat + math.sqrt(1.0 - a_prev) * eps_hat


def initial_noise(shape, seed: int, dtype=torch.float32) -> torch.Tensor:
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=dtype)


@torch.no_grad()
def sample_latent(
    denoiser: Denoiser,
    v_x,
    p_x,
    p_y,
    config: SamplerConfig = SamplerConfig(),
    schedule: NoiseSchedule | None = None,
    noise: torch.Tensor | None = None,
    dtype=torch.float32,
) -> torch.Tensor:
    """Draw network-scale target latents, one per sample, shape (K, t, h, w, d).

    Sample k starts from standard normal noise seeded with ``config.seed + k``.
    """
    schedule = schedule or NoiseSchedule()
    v_x, p_x, p_y = (torch.as_tensor(a, dtype=dtype) for a in (v_x, p_x, p_y))
    K = config.samples
    shape = tuple(v_x.shape)
    if noise is None:
        x = torch.stack([initial_noise(shape, config.seed + k, dtype) for k in range(K)])
    else:
        x = torch.as_tensor(noise, dtype=dtype).reshape(K, *shape)
    cond = [a.expand(K, *a.shape) for a in (v_x, p_x, p_y)]
    clip = LATENT_BOUND if config.clip_denoised else None
    steps = step_sequence(schedule, config.steps)
    for s, s_prev in zip(steps[:-1], steps[1:]):
        seq = assemble_tokens(cond[0], cond[1], x, cond[2])
        sigma = torch.full((K,), float(schedule.sigma(s)), dtype=dtype)
        eps_hat = denoiser(seq, sigma)
        x = ddim_step(x, eps_hat, s, s_prev, schedule, clip)
    if not torch.isfinite(x).all():
        raise NumericError("sampler produced non-finite latents")
    return x


def decode_latents(latents, source_shape) -> np.ndarray:
    """Network-scale latents (K, t, h, w, d) to videos (K, T, H, W, 3) in [0, 1]."""
    out = []
    for lat in np.asarray(latents, dtype=np.float64):
        video = tokenizer.decode_video(tokenizer.LatentGrid(lat / LATENT_SCALE, tuple(source_shape)))
        out.append((video + 1.0) / 2.0)
    return np.stack(out)


def sample(
    denoiser: Denoiser,
    v_x,
    p_x,
    p_y,
    config: SamplerConfig = SamplerConfig(),
    schedule: NoiseSchedule | None = None,
) -> np.ndarray:
    """Generate K target videos in [0, 1], shape (K, T, H, W, 3)."""
    lat = sample_latent(denoiser, v_x, p_x, p_y, config, schedule)
    t, h, w, _ = lat.shape[1:]
    return decode_latents(lat.numpy(), (t * tokenizer.TEMPORAL_FACTOR, h * tokenizer.SPATIAL_FACTOR, w * tokenizer.SPATIAL_FACTOR))
