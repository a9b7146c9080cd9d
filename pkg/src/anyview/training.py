"""Training loop, data pairing and checkpoint files.

Every random draw at step k comes from generators seeded with (seed, k).
Together with the Adam moments stored in checkpoints, this makes a resumed
run reproduce an uninterrupted one bit for bit.

Checkpoint layout (little-endian):
    8 bytes  magic b"AVCKPT\\x00\\x01" (last byte = format version)
    4 bytes  uint32 header length L
    L bytes  UTF-8 JSON header (model config, step, seed, train config, sections)
    then one float32 vector per header section, in order
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .diffusion import EncodedPair, NoiseSchedule, encode_pair, stack_pairs, training_loss
from .errors import ConfigError, DataError, NumericError
from .evalharness import EpisodeManifest
from .model import Denoiser, ModelConfig, flat_params, load_flat_params

log = logging.getLogger(__name__)

MAGIC = b"AVCKPT\x00\x01"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 4
    lr: float = 1e-3
    warmup: int = 100
    min_lr_ratio: float = 0.05
    grad_clip: float = 1.0
    window: int = 8
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0 or self.window < 4 or self.window % 4:
            raise ConfigError(f"invalid training config {self}")

    def lr_at(self, step: int) -> float:
        """Linear warmup then cosine decay to ``min_lr_ratio * lr``."""
        if step < self.warmup:
            return self.lr * (step + 1) / self.warmup
        span = max(self.steps - self.warmup, 1)
        frac = min((step - self.warmup) / span, 1.0)
        return self.lr * (self.min_lr_ratio + (1 - self.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))


def step_generators(seed: int, step: int) -> tuple[np.random.Generator, torch.Generator]:
    rng = np.random.default_rng([seed, step])
    torch_seed = int(np.random.default_rng([seed, step, 1]).integers(2**62))
    return rng, torch.Generator().manual_seed(torch_seed)


def episode_pairs(manifest: EpisodeManifest, window: int = 8, cameras: Sequence[str] | None = None) -> list[EncodedPair]:
    """All ordered camera pairs over non-overlapping windows of one episode."""
    cams = sorted(manifest.cameras) if cameras is None else list(cameras)
    rgb = {c: manifest.load_rgb(c) for c in cams}
    trajs = {c: manifest.trajectory(c) for c in cams}
    T = manifest.frame_count
    if T < window:
        raise DataError(f"episode {manifest.episode_id} has {T} frames, fewer than the {window}-frame training window")
    out = []
    for start in range(0, T - window + 1, window):
        for cx in cams:
            for cy in cams:
                if cx == cy:
                    continue
                sl = slice(start, start + window)
                out.append(
                    encode_pair(
                        rgb[cx][sl],
                        trajs[cx].slice(sl.start, sl.stop),
                        trajs[cy].slice(sl.start, sl.stop),
                        manifest.normalization,
                        rgb_y=rgb[cy][sl],
                    )
                )
    return out


class Trainer:
    def __init__(
        self,
        model: Denoiser,
        pairs: Sequence[EncodedPair],
        config: TrainConfig = TrainConfig(),
        seed: int = 0,
        schedule: NoiseSchedule | None = None,
    ):
        if not pairs:
            raise DataError("no training pairs")
        self.model = model
        self.config = config
        self.seed = seed
        self.schedule = schedule or NoiseSchedule()
        dtype = next(model.parameters()).dtype
        self.data = stack_pairs(pairs, dtype=dtype)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(0.9, 0.99))
        self.step_count = 0

    def batch(self, rng: np.random.Generator):
        n = self.data[0].shape[0]
        idx = torch.as_tensor(rng.choice(n, size=min(self.config.batch_size, n), replace=False))
        return [a[idx] for a in self.data]

    def step(self) -> float:
        rng, gen = step_generators(self.seed, self.step_count)
        batch = self.batch(rng)
        for group in self.optimizer.param_groups:
            group["lr"] = self.config.lr_at(self.step_count)
        self.model.train()
        loss = training_loss(self.model, batch, gen, self.schedule)
        value = float(loss.item())
        if not math.isfinite(value):
            # checked before the update so the parameters stay usable
            raise NumericError(f"training diverged at step {self.step_count}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.step_count += 1
        return value

    def run(self, steps: int | None = None, log_path=None, checkpoint_dir=None) -> list[float]:
        """Train until ``steps`` total steps (default: config.steps); returns losses of this call."""
        target = self.config.steps if steps is None else steps
        losses = []
        log_file = open(log_path, "a", encoding="utf-8", buffering=1) if log_path else None
        try:
            while self.step_count < target:
                step = self.step_count
                try:
                    loss = self.step()
                except NumericError as exc:
                    raise NumericError(f"step {step}: {exc}") from exc
                losses.append(loss)
                if log_file:
                    log_file.write(f"{step} {loss!r}\n")
                if checkpoint_dir and self.config.checkpoint_every and self.step_count % self.config.checkpoint_every == 0:
                    save_checkpoint(Path(checkpoint_dir) / f"step{self.step_count:07d}.ckpt", self)
        finally:
            if log_file:
                log_file.close()
        return losses

    # optimizer state as flat vectors, for checkpoints
    def optimizer_vectors(self) -> tuple[torch.Tensor, torch.Tensor]:
        ms, vs = [], []
        for p in self.model.parameters():
            st = self.optimizer.state.get(p, {})
            ms.append(st.get("exp_avg", torch.zeros_like(p)).reshape(-1))
            vs.append(st.get("exp_avg_sq", torch.zeros_like(p)).reshape(-1))
        return torch.cat(ms), torch.cat(vs)

    def load_optimizer_vectors(self, m: torch.Tensor, v: torch.Tensor, step: int) -> None:
        offset = 0
        for p in self.model.parameters():
            n = p.numel()
            self.optimizer.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": m[offset : offset + n].reshape(p.shape).to(p.dtype).clone(),
                "exp_avg_sq": v[offset : offset + n].reshape(p.shape).to(p.dtype).clone(),
            }
            offset += n
        self.step_count = step


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, trainer_or_model, step: int = 0, seed: int = 0, train_config: TrainConfig | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(trainer_or_model, Trainer):
        trainer = trainer_or_model
        model, step, seed, train_config = trainer.model, trainer.step_count, trainer.seed, trainer.config
        m, v = trainer.optimizer_vectors()
        vectors = [("params", flat_params(model)), ("adam_m", m), ("adam_v", v)]
    else:
        model = trainer_or_model
        vectors = [("params", flat_params(model))]
    header = {
        "format_version": FORMAT_VERSION,
        "model": model.config.to_dict(),
        "step": int(step),
        "seed": int(seed),
        "train": asdict(train_config) if train_config else None,
        "sections": [[name, int(vec.numel())] for name, vec in vectors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, vec in vectors:
            f.write(vec.detach().to(torch.float32).numpy().astype("<f4").tobytes())
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, torch.Tensor]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 12 or data[:6] != MAGIC[:6]:
        raise DataError(f"{path} is not an anyview checkpoint")
    if data[7] != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {data[7]}")
    (n,) = struct.unpack_from("<I", data, 8)
    try:
        header = json.loads(data[12 : 12 + n].decode("utf-8"))
        layout = [(str(name), int(count)) for name, count in header["sections"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
    offset = 12 + n
    sections = {}
    for name, count in layout:
        if offset + 4 * count > len(data):
            raise DataError(f"{path}: truncated in section {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        sections[name] = torch.from_numpy(arr.astype(np.float32))
        offset += 4 * count
    if offset != len(data):
        raise DataError(f"{path}: trailing or missing bytes after parameter sections")
    return header, sections


def load_model(path, dtype=torch.float32, expect: ModelConfig | None = None) -> tuple[Denoiser, dict]:
    header, sections = read_checkpoint(path)
    config = ModelConfig(**header["model"])
    if expect is not None and config != expect:
        raise ConfigError(f"checkpoint model config {config} does not match requested {expect}")
    model = Denoiser(config).to(dtype)
    load_flat_params(model, sections["params"])
    model.eval()
    return model, header


def resume_trainer(path, pairs, config: TrainConfig, seed: int, expect: ModelConfig | None = None, schedule: NoiseSchedule | None = None) -> Trainer:
    header, sections = read_checkpoint(path)
    model_config = ModelConfig(**header["model"])
    if expect is not None and model_config != expect:
        raise ConfigError(f"checkpoint model config {model_config} does not match requested {expect}")
    if header.get("seed") != seed:
        raise ConfigError(f"checkpoint was trained with seed {header.get('seed')}, not {seed}")
    if "adam_m" not in sections:
        raise ConfigError(f"{path} holds no optimizer state; cannot resume")
    model = Denoiser(model_config)
    load_flat_params(model, sections["params"])
    trainer = Trainer(model, pairs, config, seed, schedule)
    trainer.load_optimizer_vectors(sections["adam_m"], sections["adam_v"], header["step"])
    return trainer
