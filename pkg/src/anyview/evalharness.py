"""Evaluation protocol: manifests, PSNR/SSIM, sliding windows, baselines and uncertainty."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Protocol, Sequence

import numpy as np
from PIL import Image
from scipy.signal import convolve2d

from .errors import DataError, InvalidArgumentError, ShapeError
from .geometry import CameraTrajectory, interpolate_pose, invert_pose, make_ray_grid, project_points

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
WARMUP_HOLD = 2
SUPPORTED_SCHEMAS = ("anyview.episode/1",)
REPORT_SCHEMA = "anyview.report/1"


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraRecord:
    frames: list[str]
    intrinsics: np.ndarray  # T x 3 x 3
    poses: np.ndarray  # T x 4 x 4
    depth: list[str] | None = None


@dataclass(frozen=True)
class EpisodeManifest:
    episode_id: str
    root: Path
    resolution: tuple[int, int]
    frame_count: int
    fps: float
    align_start: bool
    normalization: float
    domain: str
    frame_format: str
    cameras: dict[str, CameraRecord] = field(default_factory=dict)

    @classmethod
    def from_record(cls, record: dict, root) -> "EpisodeManifest":
        root = Path(root)
        try:
            schema = record["schema"]
            if schema not in SUPPORTED_SCHEMAS:
                raise DataError(f"unsupported manifest schema {schema!r}")
            H, W = (int(v) for v in record["resolution"])
            T = int(record["frame_count"])
            cams = {}
            for cam_id, c in record["cameras"].items():
                frames = list(c["frames"])
                poses = np.asarray(c["poses"], dtype=np.float64).reshape(-1, 4, 4)
                intr = np.asarray(c["intrinsics"], dtype=np.float64).reshape(-1, 3, 3)
                depth = list(c["depth"]) if c.get("depth") else None
                if len(frames) != T or len(poses) != T or len(intr) != T or (depth is not None and len(depth) != T):
                    raise DataError(f"camera {cam_id!r} of episode {record['episode_id']!r} does not have {T} frames")
                cams[cam_id] = CameraRecord(frames, intr, poses, depth)
            manifest = cls(
                episode_id=str(record["episode_id"]),
                root=root,
                resolution=(H, W),
                frame_count=T,
                fps=float(record.get("fps", 24.0)),
                align_start=bool(record.get("align_start", True)),
                normalization=float(record["normalization"]),
                domain=str(record.get("domain", "unknown")),
                frame_format=str(record.get("frame_format", "png")),
                cameras=cams,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed manifest record: {exc!r}") from exc
        manifest.validate()
        return manifest

    def validate(self) -> None:
        if len(self.cameras) < 1:
            raise DataError(f"episode {self.episode_id} lists no cameras")
        for cam_id, cam in self.cameras.items():
            for rel in cam.frames + (cam.depth or []):
                if not (self.root / rel).is_file():
                    raise DataError(f"episode {self.episode_id} camera {cam_id}: missing file {self.root / rel}")
            # raises on invalid poses / intrinsics
            self.trajectory(cam_id)

    def camera(self, cam_id: str) -> CameraRecord:
        if cam_id not in self.cameras:
            raise DataError(f"episode {self.episode_id} has no camera {cam_id!r} (has {sorted(self.cameras)})")
        return self.cameras[cam_id]

    def trajectory(self, cam_id: str) -> CameraTrajectory:
        cam = self.camera(cam_id)
        try:
            return CameraTrajectory(cam.poses, cam.intrinsics, self.resolution)
        except ValueError as exc:
            raise DataError(f"episode {self.episode_id} camera {cam_id}: {exc}") from exc

    def load_rgb(self, cam_id: str) -> np.ndarray:
        """All frames of a camera as T x H x W x 3 floats in [0, 1]."""
        H, W = self.resolution
        frames = []
        for rel in self.camera(cam_id).frames:
            path = self.root / rel
            try:
                if path.suffix == ".png":
                    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
                else:
                    img = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64).reshape(H, W, 3)
            except (OSError, ValueError) as exc:
                raise DataError(f"cannot read frame {path}: {exc}") from exc
            if img.shape != (H, W, 3):
                raise DataError(f"frame {path} has shape {img.shape}, expected {(H, W, 3)}")
            frames.append(img)
        return np.stack(frames)

    def load_depth(self, cam_id: str) -> np.ndarray:
        cam = self.camera(cam_id)
        if not cam.depth:
            raise DataError(f"episode {self.episode_id} camera {cam_id} has no depth maps")
        H, W = self.resolution
        out = []
        for rel in cam.depth:
            path = self.root / rel
            try:
                out.append(np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64).reshape(H, W))
            except (OSError, ValueError) as exc:
                raise DataError(f"cannot read depth {path}: {exc}") from exc
        return np.stack(out)


def load_manifests(path, errors: list | None = None) -> list[EpisodeManifest]:
    """Parse a JSON-lines manifest; relative paths resolve against its directory.

    With an ``errors`` list, episodes that fail validation are skipped and
    recorded there as ``{"episode_id", "error"}`` instead of aborting.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            out.append(EpisodeManifest.from_record(record, path.parent))
        except DataError as exc:
            if errors is None:
                raise
            episode = record.get("episode_id", f"line{lineno}") if isinstance(record, dict) else f"line{lineno}"
            errors.append({"episode_id": str(episode), "error": str(exc)})
    return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=-1) if img.ndim == 3 else img


def ssim(a, b) -> float:
    """Single-scale SSIM of two images in [0, 1], averaged over valid window positions.

    Color images are reduced to gray by an unweighted channel mean. Images
    smaller than the 11x11 window use a window of ``min(H, W)`` pixels with
    the same sigma.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim inputs differ in shape: {a.shape} vs {b.shape}")
    x, y = _gray(a), _gray(b)
    win = gaussian_window(min(SSIM_WINDOW, *x.shape))
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def filt(img):
        return convolve2d(img, win, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Sliding windows
# ---------------------------------------------------------------------------


class Window(NamedTuple):
    start: int  # first frame fed to the generator
    length: int  # frames fed to the generator
    count_start: int  # frames [count_start, count_stop) are scored from this window
    count_stop: int


def plan_windows(total: int, window: int) -> list[Window]:
    """Cover [0, total) with generator windows so each frame is scored exactly once.

    Windows start at 0, W, 2W, ...; a final partial window is right-aligned
    to ``total - W``, and overlapping frames are credited to the earliest
    window that contains them.
    """
    if total <= 0 or window <= 0:
        raise InvalidArgumentError(f"need positive frame count and window, got T={total}, W={window}")
    if window >= total:
        return [Window(0, total, 0, total)]
    plan = []
    covered = 0
    start = 0
    while covered < total:
        start = min(start, total - window)
        stop = start + window
        plan.append(Window(start, window, covered, stop))
        covered = stop
        start += window
    return plan


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


class WindowInput(NamedTuple):
    rgb_x: np.ndarray  # n x H x W x 3 in [0, 1]
    depth_x: np.ndarray | None
    traj_x: CameraTrajectory
    traj_y: CameraTrajectory
    normalization: float


class Generator(Protocol):
    window_size: int

    def __call__(self, window: WindowInput) -> np.ndarray: ...


class CopyInputBaseline:
    """Predicts the target video to be the input video."""

    window_size = 8

    def __init__(self, window_size: int = 8):
        self.window_size = window_size

    def __call__(self, window: WindowInput) -> np.ndarray:
        return np.array(window.rgb_x, copy=True)


class DepthWarpBaseline:
    """Forward-splats each input frame into the target camera using input depth; holes stay at ``fill``."""

    def __init__(self, window_size: int = 8, fill: float = 0.0):
        self.window_size = window_size
        self.fill = fill

    def __call__(self, window: WindowInput) -> np.ndarray:
        if window.depth_x is None:
            raise DataError("depth-warp baseline needs input depth maps")
        out = []
        for k in range(len(window.rgb_x)):
            src = PinholeCamera(window.traj_x.poses[k], window.traj_x.intrinsics[k])
            dst = PinholeCamera(window.traj_y.poses[k], window.traj_y.intrinsics[k])
            warped, _ = depth_warp(window.rgb_x[k], window.depth_x[k], src, dst, fill=self.fill)
            out.append(warped)
        return np.stack(out)


class DiffusionGenerator:
    """Samples the target view with a trained denoiser (first of K samples)."""

    def __init__(self, denoiser, sampler_config=None, schedule=None, window_size: int = 8):
        from .diffusion import NoiseSchedule, SamplerConfig

        self.denoiser = denoiser
        self.sampler_config = sampler_config or SamplerConfig()
        self.schedule = schedule or NoiseSchedule()
        self.window_size = window_size

    def samples(self, window: WindowInput) -> np.ndarray:
        import torch

        from .diffusion import encode_pair, sample

        pair = encode_pair(window.rgb_x, window.traj_x, window.traj_y, window.normalization)
        dtype = next(self.denoiser.parameters()).dtype if isinstance(self.denoiser, torch.nn.Module) else torch.float32
        with torch.no_grad():
            return sample(
                self.denoiser,
                torch.as_tensor(pair.v_x, dtype=dtype),
                torch.as_tensor(pair.p_x, dtype=dtype),
                torch.as_tensor(pair.p_y, dtype=dtype),
                self.sampler_config,
                self.schedule,
            )

    def __call__(self, window: WindowInput) -> np.ndarray:
        return self.samples(window)[0]


# ---------------------------------------------------------------------------
# Episode evaluation
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    episode_id: str
    input_cam: str
    target_cam: str
    psnr: list[float]
    ssim: list[float]
    windows: list[Window]
    seconds: float = 0.0

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def summary(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "input_cam": self.input_cam,
            "target_cam": self.target_cam,
            "frames": len(self.psnr),
            "mean_psnr_db": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "windows": [list(w) for w in self.windows],
        }


def _pad_frames(a: np.ndarray, n: int) -> np.ndarray:
    if len(a) >= n:
        return a
    return np.concatenate([a, np.repeat(a[-1:], n - len(a), axis=0)])


def _pad_traj(t: CameraTrajectory, n: int) -> CameraTrajectory:
    if len(t) >= n:
        return t
    return CameraTrajectory(_pad_frames(t.poses, n), _pad_frames(t.intrinsics, n), t.size, None if t.rays is None else _pad_frames(t.rays, n))


def run_generator(manifest: EpisodeManifest, generator, input_cam: str, target_cam: str) -> tuple[np.ndarray, list[Window]]:
    """Predict the full target video window by window; returns (T x H x W x 3, plan)."""
    rgb_x = manifest.load_rgb(input_cam)
    cam = manifest.camera(input_cam)
    depth_x = manifest.load_depth(input_cam) if cam.depth else None
    traj_x = manifest.trajectory(input_cam)
    traj_y = manifest.trajectory(target_cam)
    T = manifest.frame_count
    W = generator.window_size
    plan = plan_windows(T, W)
    pred = np.zeros_like(rgb_x)
    for win in plan:
        sl = slice(win.start, win.start + win.length)
        window = WindowInput(
            _pad_frames(rgb_x[sl], W),
            None if depth_x is None else _pad_frames(depth_x[sl], W),
            _pad_traj(traj_x.slice(sl.start, sl.stop), W),
            _pad_traj(traj_y.slice(sl.start, sl.stop), W),
            manifest.normalization,
        )
        # generators predicting more frames than needed have the extras dropped
        out = np.asarray(generator(window))[: win.length]
        if out.shape != (win.length, *rgb_x.shape[1:]):
            raise ShapeError(f"generator returned {out.shape}, expected {(win.length, *rgb_x.shape[1:])}")
        a, b = win.count_start - win.start, win.count_stop - win.start
        pred[win.count_start : win.count_stop] = out[a:b]
    return pred, plan


def evaluate_episode(manifest: EpisodeManifest, generator, input_cam: str, target_cam: str) -> MetricReport:
    """Per-frame PSNR/SSIM of the generated target video against the recorded one."""
    start = time.perf_counter()
    manifest.camera(input_cam)
    truth = manifest.load_rgb(target_cam)
    pred, plan = run_generator(manifest, generator, input_cam, target_cam)
    pred = np.clip(pred, 0.0, 1.0)
    p = [psnr(pred[k], truth[k]) for k in range(len(truth))]
    s = [ssim(pred[k], truth[k]) for k in range(len(truth))]
    return MetricReport(manifest.episode_id, input_cam, target_cam, p, s, plan, time.perf_counter() - start)


def write_reports(reports: Sequence[MetricReport], out_dir) -> tuple[Path, Path]:
    """Write ``metrics.csv`` (one row per frame) and ``summary.json``; reports sorted by episode id."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = sorted(reports, key=lambda r: (r.episode_id, r.input_cam, r.target_cam))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["episode_id", "input_cam", "target_cam", "frame_idx", "psnr_db", "ssim"])
    for r in reports:
        for k, (p, s) in enumerate(zip(r.psnr, r.ssim)):
            writer.writerow([r.episode_id, r.input_cam, r.target_cam, k, repr(p), repr(s)])
    csv_path = out_dir / "metrics.csv"
    csv_path.write_text(buf.getvalue(), encoding="utf-8")
    all_p = [v for r in reports for v in r.psnr]
    all_s = [v for r in reports for v in r.ssim]
    summary = {
        "schema": REPORT_SCHEMA,
        "episodes": [r.summary() for r in reports],
        "mean_psnr_db": float(np.mean(all_p)) if all_p else None,
        "mean_ssim": float(np.mean(all_s)) if all_s else None,
    }
    json_path = out_dir / "summary.json"
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


# ---------------------------------------------------------------------------
# Uncertainty
# ---------------------------------------------------------------------------


class UncertaintyMap(NamedTuple):
    values: np.ndarray  # H x W
    samples: int


def uncertainty_heatmap(samples) -> UncertaintyMap:
    """Per-pixel population std across K videos (K x T x H x W x C), averaged over frames and channels."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 5:
        raise ShapeError(f"expected K x T x H x W x C samples, got {samples.shape}")
    if samples.shape[0] < 2:
        raise InvalidArgumentError("uncertainty needs at least two samples")
    std = samples.std(axis=0)
    return UncertaintyMap(std.mean(axis=(0, 3)), samples.shape[0])


# anchors of a fixed dark-to-bright colormap over [0, 0.5]
_CMAP = np.array([[0, 0, 4], [81, 18, 124], [183, 55, 121], [252, 137, 97], [252, 253, 191]], dtype=np.float64) / 255.0


def heatmap_to_rgb(values, vmax: float = 0.5) -> np.ndarray:
    x = np.clip(np.asarray(values, dtype=np.float64) / vmax, 0.0, 1.0)
    pos = np.linspace(0.0, 1.0, len(_CMAP))
    return np.stack([np.interp(x, pos, _CMAP[:, c]) for c in range(3)], axis=-1)


def write_heatmap(umap: UncertaintyMap, stem) -> None:
    stem = Path(stem)
    rgb = heatmap_to_rgb(umap.values)
    Image.fromarray(np.round(rgb * 255).astype(np.uint8)).save(stem.with_suffix(".png"), format="PNG")
    stem.with_suffix(".f32").write_bytes(np.ascontiguousarray(umap.values, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# Depth warping
# ---------------------------------------------------------------------------


class PinholeCamera(NamedTuple):
    pose: np.ndarray  # 4 x 4 camera-to-world
    intrinsics: np.ndarray  # 3 x 3


def unproject(depth, cam: PinholeCamera) -> np.ndarray:
    """World points (H x W x 3) of every pixel center at camera-frame z = depth."""
    h, w = depth.shape
    rays = make_ray_grid(cam.intrinsics, (h, w))
    # sky pixels (inf depth) come out as non-finite points
    with np.errstate(invalid="ignore"):
        pts_cam = rays / rays[..., 2:3] * depth[..., None]
        return pts_cam @ cam.pose[:3, :3].T + cam.pose[:3, 3]


def world_to_camera(points, cam: PinholeCamera) -> np.ndarray:
    inv = invert_pose(cam.pose)
    return points @ inv[:3, :3].T + inv[:3, 3]


def depth_warp(src_rgb, src_depth, src_cam: PinholeCamera, dst_cam: PinholeCamera, dst_size=None, fill: float = 0.0, return_depth: bool = False):
    """Forward-splat a source image into a destination camera with a z-buffer.

    Pixels with non-finite depth (sky) are skipped. Each source point lands
    on its nearest destination pixel and the closest point wins; ties go to
    the lower source index. Returns (warped rgb, coverage mask) and, with
    ``return_depth``, the destination z-buffer (inf where uncovered).
    """
    src_rgb = np.asarray(src_rgb, dtype=np.float64)
    src_depth = np.asarray(src_depth, dtype=np.float64)
    h, w = src_depth.shape
    H, W = dst_size or (h, w)
    valid = np.isfinite(src_depth)
    if np.any(src_depth[valid] <= 0):
        raise DataError("depth_warp: non-positive depth on a valid pixel")
    pts = unproject(np.where(valid, src_depth, 1.0), src_cam)[valid]
    colors = src_rgb[valid]
    cam_pts = world_to_camera(pts, dst_cam)
    z = cam_pts[:, 2]
    front = z > 1e-9
    uv = project_points(cam_pts[front], dst_cam.intrinsics)
    colors, z = colors[front], z[front]
    ui = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    vi = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    inside = (ui >= 0) & (ui < W) & (vi >= 0) & (vi < H)
    flat = vi[inside] * W + ui[inside]
    colors, z = colors[inside], z[inside]

    zbuf = np.full(H * W, np.inf)
    np.minimum.at(zbuf, flat, z)
    winners = np.nonzero(z == zbuf[flat])[0]
    first = np.full(H * W, len(z))
    np.minimum.at(first, flat[winners], winners)
    covered = first < len(z)
    out = np.full((H * W, src_rgb.shape[-1]), fill, dtype=np.float64)
    out[covered] = colors[first[covered]]
    result = (out.reshape(H, W, -1), covered.reshape(H, W))
    if return_depth:
        return result + (zbuf.reshape(H, W),)
    return result


def sample_inverse_depth(depth, coords) -> np.ndarray:
    """Depth at continuous pixel coordinates by bilinear interpolation of 1/z.

    Inverse depth is affine in pixel coordinates over a plane, so this is
    exact on flat surfaces. Where any of the four neighbours is sky or out of
    bounds the nearest pixel is used instead.
    """
    depth = np.asarray(depth, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    h, w = depth.shape
    inv = np.where(np.isfinite(depth), 1.0 / depth, 0.0)
    x0 = np.floor(coords[:, 0]).astype(int)
    y0 = np.floor(coords[:, 1]).astype(int)
    fx, fy = coords[:, 0] - x0, coords[:, 1] - y0
    inside = (x0 >= 0) & (x0 < w - 1) & (y0 >= 0) & (y0 < h - 1)
    xi, yi = np.clip(x0, 0, w - 2), np.clip(y0, 0, h - 2)
    corners = [(yi, xi), (yi, xi + 1), (yi + 1, xi), (yi + 1, xi + 1)]
    finite = inside & np.all([np.isfinite(depth[c]) for c in corners], axis=0)
    weights = [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    interp = sum(wt * inv[c] for wt, c in zip(weights, corners))
    ui = np.clip(np.floor(coords[:, 0] + 0.5).astype(int), 0, w - 1)
    vi = np.clip(np.floor(coords[:, 1] + 0.5).astype(int), 0, h - 1)
    with np.errstate(divide="ignore"):
        return np.where(finite, 1.0 / np.where(finite, interp, 1.0), depth[vi, ui])


def reproject_coords(coords, depth_src, src_cam: PinholeCamera, dst_cam: PinholeCamera) -> tuple[np.ndarray, np.ndarray]:
    """Map continuous pixel coordinates (N x 2) from src to dst through the src depth map.

    Depth is sampled with :func:`sample_inverse_depth`. Returns (dst
    coordinates N x 2, camera-frame z in dst N).
    """
    coords = np.asarray(coords, dtype=np.float64)
    z = sample_inverse_depth(depth_src, coords)
    kinv = np.linalg.inv(src_cam.intrinsics)
    pix = np.stack([coords[:, 0] + 0.5, coords[:, 1] + 0.5, np.ones(len(coords))], axis=-1)
    pts_cam = (pix @ kinv.T) * z[:, None]
    world = pts_cam @ src_cam.pose[:3, :3].T + src_cam.pose[:3, 3]
    dst = world_to_camera(world, dst_cam)
    return project_points(dst, dst_cam.intrinsics), dst[:, 2]


def warmup_poses(input_pose, target_pose, n_frames: int, hold: int = WARMUP_HOLD) -> list[np.ndarray]:
    """Held copies of the input pose, then n poses slerped from input to target (n = 1: target only)."""
    if n_frames < 1:
        raise InvalidArgumentError("warmup needs n_frames >= 1")
    if n_frames == 1:
        return [np.asarray(target_pose, dtype=np.float64).copy()]
    held = [np.asarray(input_pose, dtype=np.float64).copy() for _ in range(hold)]
    return held + [interpolate_pose(input_pose, target_pose, k / (n_frames - 1)) for k in range(n_frames)]


def warmup_frames(input_cam: PinholeCamera, target_first_pose, n_frames: int, src_rgb0, src_depth0, hold: int = WARMUP_HOLD, fill: float = 0.0) -> list[np.ndarray]:
    """Depth-warped frames easing from the input view to the first target pose.

    The first frame is frozen for ``hold`` extra frames before the
    interpolation starts; intrinsics stay those of the input camera.
    """
    frames = []
    for pose in warmup_poses(input_cam.pose, target_first_pose, n_frames, hold):
        warped, _ = depth_warp(src_rgb0, src_depth0, input_cam, PinholeCamera(pose, input_cam.intrinsics), fill=fill)
        frames.append(warped)
    return frames
