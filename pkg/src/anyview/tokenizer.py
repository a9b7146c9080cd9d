"""Fixed spectral video codec with 4x8x8 downsampling and 16 latent channels.

Each 4x8x8 spatiotemporal block of each color channel goes through an
orthonormal 3D type-II DCT. The lowest-frequency coefficients (3D zigzag
order) are kept: 6 for the first channel and 5 each for the other two, for
16 latent channels per cell. Decoding zero-fills the rest and inverts.
Because the basis is orthonormal, decode(encode(.)) is an orthogonal
projection.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

from .errors import ShapeError
from .geometry import PlueckerMap

TEMPORAL_FACTOR = 4
SPATIAL_FACTOR = 8
LATENT_WIDTH = 16
CHANNEL_SPLIT = (6, 5, 5)

BLOCK = (TEMPORAL_FACTOR, SPATIAL_FACTOR, SPATIAL_FACTOR)


def zigzag_order(shape=BLOCK) -> np.ndarray:
    """Frequency indices sorted by total frequency, ties broken lexicographically (t, y, x)."""
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"), axis=-1).reshape(-1, 3)
    keys = [tuple(i) for i in idx]
    keys.sort(key=lambda k: (sum(k), k))
    return np.array(keys, dtype=np.int64)


@dataclass(frozen=True)
class CodecSpec:
    temporal_factor: int = TEMPORAL_FACTOR
    spatial_factor: int = SPATIAL_FACTOR
    latent_width: int = LATENT_WIDTH
    channel_split: tuple[int, ...] = CHANNEL_SPLIT

    def __post_init__(self):
        block = self.temporal_factor * self.spatial_factor**2
        if block < self.latent_width or sum(self.channel_split) != self.latent_width:
            raise ShapeError("codec must keep at most one block of coefficients and split exactly d across channels")

    @property
    def block(self) -> tuple[int, int, int]:
        return (self.temporal_factor, self.spatial_factor, self.spatial_factor)

    def kept_indices(self) -> list[np.ndarray]:
        """Flat (within-block) coefficient indices kept for each color channel."""
        order = zigzag_order(self.block)
        bt, bh, bw = self.block
        flat = order[:, 0] * bh * bw + order[:, 1] * bw + order[:, 2]
        return [flat[:n] for n in self.channel_split]


DEFAULT_SPEC = CodecSpec()


@dataclass(frozen=True, eq=False)
class LatentGrid:
    values: np.ndarray  # t x h x w x k
    source_shape: tuple[int, int, int]  # (T, H, W)

    @property
    def shape(self):
        return self.values.shape


def _check_dims(shape, spec: CodecSpec):
    bt, bh, bw = spec.block
    T, H, W = shape
    if T < 1 or H < 1 or W < 1 or T % bt or H % bh or W % bw:
        raise ShapeError(f"video dims {(T, H, W)} must be positive multiples of {spec.block}")


def _to_blocks(video: np.ndarray, spec: CodecSpec) -> np.ndarray:
    T, H, W, C = video.shape
    bt, bh, bw = spec.block
    v = video.reshape(T // bt, bt, H // bh, bh, W // bw, bw, C)
    return v.transpose(0, 2, 4, 6, 1, 3, 5)  # t h w C bt bh bw


def _from_blocks(blocks: np.ndarray, spec: CodecSpec) -> np.ndarray:
    t, h, w, C, bt, bh, bw = blocks.shape
    return blocks.transpose(0, 4, 1, 5, 2, 6, 3).reshape(t * bt, h * bh, w * bw, C)


def encode_video(video, spec: CodecSpec = DEFAULT_SPEC) -> LatentGrid:
    """Encode a T x H x W x 3 video with values in [-1, 1]."""
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[-1] != len(spec.channel_split):
        raise ShapeError(f"expected T x H x W x {len(spec.channel_split)} video, got {video.shape}")
    _check_dims(video.shape[:3], spec)
    blocks = _to_blocks(video, spec)
    coeffs = dctn(blocks, type=2, axes=(-3, -2, -1), norm="ortho")
    coeffs = coeffs.reshape(*coeffs.shape[:4], -1)
    kept = [coeffs[..., c, idx] for c, idx in enumerate(spec.kept_indices())]
    return LatentGrid(np.concatenate(kept, axis=-1), tuple(video.shape[:3]))


def decode_video(latent: LatentGrid, spec: CodecSpec = DEFAULT_SPEC, clamp: bool = True) -> np.ndarray:
    values = np.asarray(latent.values, dtype=np.float64)
    if values.ndim != 4 or values.shape[-1] != spec.latent_width:
        raise ShapeError(f"latent must have {spec.latent_width} channels, got shape {values.shape}")
    t, h, w, _ = values.shape
    bt, bh, bw = spec.block
    C = len(spec.channel_split)
    coeffs = np.zeros((t, h, w, C, bt * bh * bw))
    start = 0
    for c, idx in enumerate(spec.kept_indices()):
        coeffs[..., c, idx] = values[..., start : start + len(idx)]
        start += len(idx)
    blocks = idctn(coeffs.reshape(t, h, w, C, bt, bh, bw), type=2, axes=(-3, -2, -1), norm="ortho")
    video = _from_blocks(blocks, spec)
    return np.clip(video, -1.0, 1.0) if clamp else video


def encode_pluecker(pmap: PlueckerMap, spec: CodecSpec = DEFAULT_SPEC) -> LatentGrid:
    """Encode rays and moments as two separate 3-channel videos, concatenated to 2d channels."""
    r = encode_video(pmap.rays, spec)
    m = encode_video(pmap.moments, spec)
    return LatentGrid(np.concatenate([r.values, m.values], axis=-1), r.source_shape)


# ---------------------------------------------------------------------------
# Serialization: 6 little-endian int32 (t, h, w, k, H, W) then float32 values
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<6i")


def latent_to_bytes(latent: LatentGrid) -> bytes:
    t, h, w, k = latent.values.shape
    _, H, W = latent.source_shape
    return _HEADER.pack(t, h, w, k, H, W) + np.ascontiguousarray(latent.values, dtype="<f4").tobytes()


def latent_from_bytes(data: bytes, spec: CodecSpec = DEFAULT_SPEC) -> LatentGrid:
    if len(data) < _HEADER.size:
        raise ShapeError("latent blob shorter than its header")
    t, h, w, k, H, W = _HEADER.unpack_from(data)
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if values.size != t * h * w * k:
        raise ShapeError(f"latent blob holds {values.size} floats, header says {t * h * w * k}")
    return LatentGrid(values.reshape(t, h, w, k).astype(np.float64), (t * spec.temporal_factor, H, W))


def write_latent(path, latent: LatentGrid) -> None:
    Path(path).write_bytes(latent_to_bytes(latent))


def read_latent(path) -> LatentGrid:
    return latent_from_bytes(Path(path).read_bytes())
