"""Procedural multi-view 4D scenes: moving spheres and boxes over a ground plane.

Rendering is exact ray casting (closed-form sphere, slab-box and plane
intersections) with a z-buffer, Lambertian shading plus ambient light, and
a depth map holding camera-frame z (``inf`` where a ray hits only sky).

Camera rigs spread cameras evenly around the
world center, each with an independently sampled trajectory family and a
focal length drawn in one of three sharing modes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from PIL import Image

from .errors import DataError, DegeneratePoseError, InvalidArgumentError, ShapeError
from .geometry import (
    AXIS_CONVENTION,
    CameraTrajectory,
    camera_rays,
    make_intrinsics,
    make_pose,
    rotation_about_axis,
)

WORLD_UP = np.array([0.0, 0.0, 1.0])
FAMILIES = ("static", "line", "radial", "spiral", "lissajous")

FOCAL_PRESET = 35.0
FOCAL_RANGE = (20.0, 70.0)
REFERENCE_WIDTH = 64
FOCAL_MODES = ("preset", "shared-random", "independent")

# sampled trajectory parameters keep per-frame camera motion below this (scene units)
MAX_FRAME_DISPLACEMENT = 0.6

SKY_COLOR = np.array([0.55, 0.7, 0.9])
GROUND_ALBEDO = np.array([0.55, 0.5, 0.4])
SCHEMA_VERSION = "anyview.episode/1"


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Primitive:
    kind: str  # "sphere" or "box"
    size: np.ndarray  # sphere: (radius,), box: half extents (3,)
    albedo: np.ndarray
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))  # axis * rad/frame

    def at(self, frame: float) -> tuple[np.ndarray, np.ndarray]:
        """World position and rotation at a (possibly fractional) frame index."""
        pos = self.position + frame * self.velocity
        rate = float(np.linalg.norm(self.angular_velocity))
        if rate == 0.0:
            return pos, self.rotation
        return pos, rotation_about_axis(self.angular_velocity, rate * frame) @ self.rotation


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    objects: tuple[Primitive, ...]
    spawn_extent: float = 1.5
    ground: bool = True
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.4, 0.3, 0.85]) / np.linalg.norm([0.4, 0.3, 0.85]))
    ambient: float = 0.3
    background: np.ndarray = field(default_factory=lambda: SKY_COLOR.copy())


def random_scene(seed: int, frames: int = 8, object_range: tuple[int, int] = (2, 8)) -> SceneSpec:
    """Random scene with 2-8 primitives resting on the ground inside the spawn square."""
    rng = _rng(seed, 1)
    extent = float(rng.uniform(1.0, 2.0))
    n = int(rng.integers(object_range[0], object_range[1] + 1))
    objects = []
    for _ in range(n):
        kind = "sphere" if rng.random() < 0.5 else "box"
        if kind == "sphere":
            size = np.array([rng.uniform(0.2, 0.5)])
            height = size[0]
        else:
            size = rng.uniform(0.15, 0.4, size=3)
            height = size[2]
        xy = rng.uniform(-extent, extent, size=2)
        # keep the whole trajectory inside twice the spawn region
        speed = rng.uniform(0.0, extent / (2.0 * max(frames, 1)))
        heading = rng.uniform(0.0, 2.0 * math.pi)
        velocity = np.array([speed * math.cos(heading), speed * math.sin(heading), 0.0])
        spin = np.array([0.0, 0.0, rng.uniform(-0.2, 0.2)])
        objects.append(
            Primitive(
                kind=kind,
                size=size,
                albedo=rng.uniform(0.15, 0.95, size=3),
                position=np.array([xy[0], xy[1], height]),
                rotation=rotation_about_axis(WORLD_UP, rng.uniform(0, 2 * math.pi)),
                velocity=velocity,
                angular_velocity=spin,
            )
        )
    return SceneSpec(seed=seed, objects=tuple(objects), spawn_extent=extent)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySpec:
    family: str = "static"
    radius: float = 5.0
    elevation: float = 0.5  # radians above the target's horizontal plane
    azimuth: float = 0.0  # starting azimuth around the target
    angular_rate: float = 0.05  # rad/frame (radial, spiral) or base frequency (lissajous)
    line_velocity: tuple[float, float, float] = (0.0, 0.1, 0.0)
    spiral_growth: float = 0.02  # fractional radius change per frame
    spiral_climb: float = 0.01  # elevation change per frame (rad)
    lissajous_freqs: tuple[int, int] = (2, 3)
    lissajous_amplitude: float = 0.5
    lissajous_phase: float = 0.0
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"unknown trajectory family {self.family!r}; expected one of {FAMILIES}")


def _spherical(radius, azimuth, elevation) -> np.ndarray:
    return radius * np.array([math.cos(elevation) * math.cos(azimuth), math.cos(elevation) * math.sin(azimuth), math.sin(elevation)])


def trajectory_positions(spec: TrajectorySpec, frames: int) -> np.ndarray:
    target = np.asarray(spec.target, dtype=np.float64)
    k = np.arange(frames, dtype=np.float64)
    base = target + _spherical(spec.radius, spec.azimuth, spec.elevation)
    if spec.family == "static":
        return np.repeat(base[None], frames, axis=0)
    if spec.family == "line":
        return base[None] + k[:, None] * np.asarray(spec.line_velocity)[None]
    if spec.family == "radial":
        return np.stack([target + _spherical(spec.radius, spec.azimuth + spec.angular_rate * i, spec.elevation) for i in k])
    if spec.family == "spiral":
        return np.stack(
            [
                target
                + _spherical(
                    spec.radius * (1.0 + spec.spiral_growth * i),
                    spec.azimuth + spec.angular_rate * i,
                    spec.elevation + spec.spiral_climb * i,
                )
                for i in k
            ]
        )
    # lissajous: oscillate in the plane tangent to the view direction at the base point
    fa, fb = spec.lissajous_freqs
    tangent = np.array([-math.sin(spec.azimuth), math.cos(spec.azimuth), 0.0])
    a = spec.lissajous_amplitude
    u = a * np.sin(fa * spec.angular_rate * k + spec.lissajous_phase)
    v = a * np.sin(fb * spec.angular_rate * k)
    return base[None] + u[:, None] * tangent[None] + v[:, None] * WORLD_UP[None]


def look_at(position, target, up=WORLD_UP) -> np.ndarray:
    """Camera-to-world pose at ``position`` whose +z axis points at ``target`` and +y points down."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    dist = np.linalg.norm(forward)
    if dist < 1e-9:
        raise DegeneratePoseError(f"camera position {position.tolist()} coincides with its look-at target")
    forward /= dist
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return make_pose(np.stack([right, down, forward], axis=1), position)


def default_intrinsics(focal: float, size: tuple[int, int]) -> np.ndarray:
    """Pinhole intrinsics with the focal given in pixels at a 64-pixel-wide reference."""
    h, w = size
    f = focal * w / REFERENCE_WIDTH
    return make_intrinsics(f, f, w / 2.0, h / 2.0)


def generate_trajectory(spec: TrajectorySpec, frames: int, focal: float = FOCAL_PRESET, size=(64, 64)) -> CameraTrajectory:
    if frames < 1:
        raise InvalidArgumentError("trajectory needs at least one frame")
    positions = trajectory_positions(spec, frames)
    poses = np.stack([look_at(p, spec.target) for p in positions])
    intr = np.repeat(default_intrinsics(focal, size)[None], frames, axis=0)
    return CameraTrajectory(poses, intr, size)


def sample_trajectory_spec(rng: np.random.Generator, index: int, count: int, families=FAMILIES) -> TrajectorySpec:
    """Camera ``index`` of ``count`` spread evenly in azimuth with a random family."""
    family = str(families[int(rng.integers(len(families)))])
    tangent_speed = rng.uniform(0.05, 0.25)
    heading = rng.uniform(0, 2 * math.pi)
    return TrajectorySpec(
        family=family,
        radius=float(rng.uniform(4.0, 6.0)),
        elevation=float(rng.uniform(0.25, 0.7)),
        azimuth=2.0 * math.pi * index / count + float(rng.uniform(-0.2, 0.2)),
        angular_rate=float(rng.uniform(-0.08, 0.08)),
        line_velocity=(tangent_speed * math.cos(heading), tangent_speed * math.sin(heading), float(rng.uniform(-0.03, 0.03))),
        spiral_growth=float(rng.uniform(-0.02, 0.02)),
        spiral_climb=float(rng.uniform(-0.01, 0.01)),
        lissajous_freqs=(int(rng.integers(1, 4)), int(rng.integers(1, 4))),
        lissajous_amplitude=float(rng.uniform(0.2, 0.8)),
        lissajous_phase=float(rng.uniform(0, 2 * math.pi)),
        target=(0.0, 0.0, 0.3),
    )


def sample_focals(scene_seed: int, camera_count: int) -> tuple[str, np.ndarray]:
    """Pick one of three equally likely focal sharing modes and draw per-camera focals."""
    if camera_count < 1:
        raise InvalidArgumentError("camera_count must be >= 1")
    rng = _rng(scene_seed, 2)
    mode = FOCAL_MODES[int(rng.integers(3))]
    if mode == "preset":
        return mode, np.full(camera_count, FOCAL_PRESET)
    if mode == "shared-random":
        return mode, np.full(camera_count, rng.uniform(*FOCAL_RANGE))
    return mode, rng.uniform(*FOCAL_RANGE, size=camera_count)


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


class RenderOutput(NamedTuple):
    rgb: np.ndarray  # T x H x W x 3 in [0, 1]
    depth: np.ndarray  # T x H x W camera-frame z, inf for sky


def intersect_sphere(origin, dirs, center, radius):
    """Nearest positive hit distance along unit ``dirs`` (inf on miss) and the hit normals."""
    oc = origin - center
    b = dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - c
    hit = disc >= 0
    root = np.sqrt(np.where(hit, disc, 0.0))
    t = -b - root
    t = np.where(t > 1e-9, t, -b + root)
    t = np.where(hit & (t > 1e-9), t, np.inf)
    pts = origin + dirs * np.where(np.isfinite(t), t, 0.0)[:, None]
    return t, (pts - center) / radius


def intersect_box(origin, dirs, center, rotation, half):
    o = (origin - center) @ rotation
    d = dirs @ rotation
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    tnear = lo.max(axis=1)
    tfar = hi.min(axis=1)
    hit = (tnear <= tfar) & (tfar > 1e-9)
    t = np.where(tnear > 1e-9, tnear, tfar)
    t = np.where(hit, t, np.inf)
    axis = np.where(tnear > 1e-9, lo.argmax(axis=1), hi.argmin(axis=1))
    sign = np.where(tnear > 1e-9, -np.sign(d[np.arange(len(d)), axis]), np.sign(d[np.arange(len(d)), axis]))
    normal_local = np.zeros_like(d)
    normal_local[np.arange(len(d)), axis] = sign
    return t, normal_local @ rotation.T


def intersect_ground(origin, dirs):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -origin[2] / dirs[:, 2]
    t = np.where((dirs[:, 2] < 0) & (origin[2] > 0) & (t > 1e-9), t, np.inf)
    normal = np.broadcast_to(WORLD_UP, dirs.shape)
    return t, normal


def ground_albedo(points) -> np.ndarray:
    # smooth two-tone pattern with a 4-unit period
    pattern = 0.75 + 0.25 * np.cos(0.5 * math.pi * points[:, 0]) * np.cos(0.5 * math.pi * points[:, 1])
    return GROUND_ALBEDO[None] * pattern[:, None]


def render_frame(scene: SceneSpec, pose, rays_cam, frame: float) -> tuple[np.ndarray, np.ndarray]:
    """Render one H x W image; returns (rgb, z-depth)."""
    h, w, _ = rays_cam.shape
    rays_cam = rays_cam.reshape(-1, 3)
    origin = pose[:3, 3]
    dirs = rays_cam @ pose[:3, :3].T
    n = len(dirs)
    best_t = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    albedo = np.broadcast_to(scene.background, (n, 3)).copy()
    shaded = np.zeros(n, dtype=bool)

    if scene.ground:
        t, nrm = intersect_ground(origin, dirs)
        closer = t < best_t
        best_t[closer] = t[closer]
        normal[closer] = nrm[closer]
        pts = origin + dirs[closer] * t[closer, None]
        albedo[closer] = ground_albedo(pts)
        shaded |= closer
    for obj in scene.objects:
        pos, rot = obj.at(frame)
        if obj.kind == "sphere":
            t, nrm = intersect_sphere(origin, dirs, pos, float(obj.size[0]))
        else:
            t, nrm = intersect_box(origin, dirs, pos, rot, obj.size)
        closer = t < best_t
        best_t[closer] = t[closer]
        normal[closer] = nrm[closer]
        albedo[closer] = obj.albedo
        shaded |= closer

    lambert = np.clip(normal @ scene.light_dir, 0.0, None)
    light = np.where(shaded, scene.ambient + (1.0 - scene.ambient) * lambert, 1.0)
    rgb = np.clip(albedo * light[:, None], 0.0, 1.0)
    depth = best_t * rays_cam[:, 2]
    return rgb.reshape(h, w, 3), depth.reshape(h, w)


def render_episode(scene: SceneSpec, cams: Sequence[CameraTrajectory], size=None, frames: int | None = None) -> list[RenderOutput]:
    outputs = []
    for cam in cams:
        if size is not None and tuple(size) != tuple(cam.size):
            raise ShapeError(f"camera image size {cam.size} does not match requested {tuple(size)}")
        h, w = cam.size
        if h < 1 or w < 1:
            raise ShapeError("cannot render a zero-size image")
        T = len(cam) if frames is None else frames
        if T > len(cam):
            raise ShapeError(f"requested {T} frames from a {len(cam)}-frame trajectory")
        rays = camera_rays(cam)
        rgb = np.empty((T, h, w, 3))
        depth = np.empty((T, h, w))
        for k in range(T):
            rgb[k], depth[k] = render_frame(scene, cam.poses[k], rays[k], float(k))
        outputs.append(RenderOutput(rgb, depth))
    return outputs


# ---------------------------------------------------------------------------
# Episodes on disk
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    episode_id: str
    scene: SceneSpec
    cameras: list[CameraTrajectory]
    renders: list[RenderOutput]
    focal_mode: str
    normalization: float


def pairwise_normalization(cams: Sequence[CameraTrajectory]) -> float:
    """Largest distance between any two camera origins in the episode.

    This bounds every canonicalized translation, whatever window or camera
    pair is later chosen as the reference.
    """
    pts = np.concatenate([c.poses[:, :3, 3] for c in cams])
    diff = pts[:, None, :] - pts[None, :, :]
    largest = float(np.sqrt((diff**2).sum(-1)).max())
    return largest if largest > 0 else 1.0


def make_episode(
    seed: int,
    index: int,
    frames: int = 8,
    size=(64, 64),
    cameras: int = 4,
    families=FAMILIES,
    objects: tuple[int, int] = (2, 8),
) -> Episode:
    scene_seed = int(_rng(seed, index).integers(2**31))
    scene = random_scene(scene_seed, frames, objects)
    mode, focals = sample_focals(scene_seed, cameras)
    rng = _rng(scene_seed, 3)
    cams = [
        generate_trajectory(sample_trajectory_spec(rng, c, cameras, families), frames, float(focals[c]), size)
        for c in range(cameras)
    ]
    renders = render_episode(scene, cams)
    return Episode(f"ep{index:05d}", scene, cams, renders, mode, pairwise_normalization(cams))


def _write_frame(path: Path, rgb: np.ndarray, fmt: str) -> None:
    if fmt == "png":
        Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)).save(path, format="PNG", optimize=False)
    else:
        path.write_bytes(np.ascontiguousarray(rgb, dtype="<f4").tobytes())


def write_episode(episode: Episode, root: Path, fmt: str = "png", fps: float = 24.0) -> dict:
    """Write frames/depth under ``root/<episode>/<camera>/`` and return the manifest record."""
    if fmt not in ("png", "f32"):
        raise InvalidArgumentError(f"frame format must be 'png' or 'f32', got {fmt!r}")
    root = Path(root)
    H, W = episode.cameras[0].size
    T = len(episode.cameras[0])
    record = {
        "schema": SCHEMA_VERSION,
        "episode_id": episode.episode_id,
        "resolution": [H, W],
        "frame_count": T,
        "fps": fps,
        "align_start": True,
        "normalization": episode.normalization,
        "domain": "synthetic",
        "axis_convention": AXIS_CONVENTION,
        "frame_format": fmt,
        "cameras": {},
    }
    for c, (cam, out) in enumerate(zip(episode.cameras, episode.renders)):
        cam_id = f"cam{c:02d}"
        cam_dir = root / episode.episode_id / cam_id
        try:
            cam_dir.mkdir(parents=True, exist_ok=True)
            frames, depths = [], []
            for k in range(T):
                fpath = cam_dir / f"{k:04d}.{fmt}"
                dpath = cam_dir / f"{k:04d}.depth.f32"
                _write_frame(fpath, out.rgb[k], fmt)
                dpath.write_bytes(np.ascontiguousarray(out.depth[k], dtype="<f4").tobytes())
                frames.append(fpath.relative_to(root).as_posix())
                depths.append(dpath.relative_to(root).as_posix())
        except OSError as exc:
            raise DataError(f"failed writing episode files under {cam_dir}: {exc}") from exc
        record["cameras"][cam_id] = {
            "frames": frames,
            "depth": depths,
            "intrinsics": [k.reshape(-1).tolist() for k in cam.intrinsics],
            "poses": [p.reshape(-1).tolist() for p in cam.poses],
        }
    return record


def make_dataset(
    count: int,
    seed: int,
    out_path,
    frames: int = 8,
    size=(64, 64),
    cameras: int = 4,
    fmt: str = "png",
    families=FAMILIES,
    objects: tuple[int, int] = (2, 8),
) -> Path:
    """Generate ``count`` episodes and a ``manifest.jsonl`` under ``out_path``; returns the manifest path."""
    if count < 1:
        raise InvalidArgumentError("dataset count must be >= 1")
    if cameras < 2:
        raise InvalidArgumentError("episodes need at least two cameras")
    root = Path(out_path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {root}: {exc}") from exc
    lines = []
    for i in range(count):
        ep = make_episode(seed, i, frames, size, cameras, families, objects)
        lines.append(json.dumps(write_episode(ep, root, fmt), sort_keys=True))
    manifest = root / "manifest.jsonl"
    try:
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write manifest {manifest}: {exc}") from exc
    return manifest
