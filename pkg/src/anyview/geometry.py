"""Camera geometry: rigid poses, intrinsics, ray grids and Plücker maps.

Conventions used throughout the package:

  * camera frame: +x right, +y down, +z forward (right-handed);
  * poses are 4x4 camera-to-world matrices, so the translation column is the
    camera origin in world coordinates;
  * world up is +z (scenegen and the GCD projection rely on this);
  * pixel (u, v) is sampled through its center (u + 0.5, v + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DegeneratePoseError,
    InvalidArgumentError,
    InvalidIntrinsicsError,
    ShapeError,
)

AXIS_CONVENTION = "x-right,y-down,z-forward;camera-to-world;world-z-up"

ORTHONORMAL_TOL = 1e-6


# ---------------------------------------------------------------------------
# Rigid poses
# ---------------------------------------------------------------------------


def make_pose(rotation=None, translation=None) -> np.ndarray:
    """Build a 4x4 camera-to-world matrix from a rotation and a translation."""
    pose = np.eye(4)
    if rotation is not None:
        pose[:3, :3] = np.asarray(rotation, dtype=np.float64)
    if translation is not None:
        pose[:3, 3] = np.asarray(translation, dtype=np.float64)
    return pose


def validate_pose(pose, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape[-2:] != (4, 4):
        raise ShapeError(f"pose must be 4x4, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise DegeneratePoseError("pose contains non-finite values")
    if not np.array_equal(pose[..., 3, :], np.broadcast_to([0.0, 0.0, 0.0, 1.0], pose[..., 3, :].shape)):
        raise DegeneratePoseError("pose bottom row must be exactly (0, 0, 0, 1)")
    rot = pose[..., :3, :3]
    gram = np.einsum("...ji,...jk->...ik", rot, rot)
    if np.max(np.abs(gram - np.eye(3))) > tol:
        raise DegeneratePoseError("pose rotation is not orthonormal")
    if np.min(np.linalg.det(rot)) < 1.0 - tol:
        raise DegeneratePoseError("pose rotation has determinant != +1")
    return pose


def invert_pose(pose) -> np.ndarray:
    """Closed-form inverse of a rigid transform (batched over leading dims)."""
    pose = np.asarray(pose, dtype=np.float64)
    rot_t = np.swapaxes(pose[..., :3, :3], -1, -2)
    out = np.zeros_like(pose)
    out[..., :3, :3] = rot_t
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", rot_t, pose[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def compose(a, b) -> np.ndarray:
    """Return ``a @ b`` with the homogeneous bottom row restored exactly."""
    out = np.matmul(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    out[..., 3, :] = (0.0, 0.0, 0.0, 1.0)
    return out


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues formula for a rotation of ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def random_rigid(rng: np.random.Generator, translation_scale: float = 1.0) -> np.ndarray:
    """Uniformly random rotation (via a normalized Gaussian quaternion) plus a Gaussian translation."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return make_pose(quat_to_matrix(q), rng.normal(scale=translation_scale, size=3))


# ---------------------------------------------------------------------------
# Quaternions (w, x, y, z) and slerp
# ---------------------------------------------------------------------------


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(rot) -> np.ndarray:
    # Shepperd's method: branch on the largest diagonal term for stability.
    m = np.asarray(rot, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def slerp_quat(qa, qb, s: float) -> np.ndarray:
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        q = qa + s * (qb - qa)
        return q / np.linalg.norm(q)
    theta = math.acos(min(dot, 1.0))
    sin_theta = math.sin(theta)
    q = (math.sin((1.0 - s) * theta) * qa + math.sin(s * theta) * qb) / sin_theta
    return q / np.linalg.norm(q)


def interpolate_pose(a, b, s: float) -> np.ndarray:
    """Interpolate between two rigid poses.

    Rotation follows the shortest-arc slerp (the quaternion of ``b`` is
    negated when its dot product with ``a``'s is negative), translation is
    linear. ``s == 0`` and ``s == 1`` return exact copies of the endpoints.
    """
    if not 0.0 <= s <= 1.0:
        raise InvalidArgumentError(f"interpolation parameter must lie in [0, 1], got {s}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if s == 0.0:
        return a.copy()
    if s == 1.0:
        return b.copy()
    q = slerp_quat(matrix_to_quat(a[:3, :3]), matrix_to_quat(b[:3, :3]), s)
    return make_pose(quat_to_matrix(q), (1.0 - s) * a[:3, 3] + s * b[:3, 3])


# ---------------------------------------------------------------------------
# Intrinsics and trajectories
# ---------------------------------------------------------------------------


def make_intrinsics(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def validate_intrinsics(k, size: tuple[int, int] | None = None) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.shape[-2:] != (3, 3):
        raise ShapeError(f"intrinsics must be 3x3, got {k.shape}")
    fx, fy = k[..., 0, 0], k[..., 1, 1]
    if not (np.all(np.isfinite(k)) and np.all(fx > 0) and np.all(fy > 0)):
        raise InvalidIntrinsicsError("focal lengths must be positive and finite")
    if np.any(k[..., 0, 1] != 0) or np.any(k[..., 1, 0] != 0) or np.any(k[..., 2, :2] != 0) or np.any(k[..., 2, 2] != 1):
        raise InvalidIntrinsicsError("intrinsics must be upper triangular with zero skew and K[2,2] = 1")
    if size is not None:
        h, w = size
        cx, cy = k[..., 0, 2], k[..., 1, 2]
        if np.any(cx < 0) or np.any(cx >= w) or np.any(cy < 0) or np.any(cy >= h):
            raise InvalidIntrinsicsError("principal point lies outside the image")
    return k


@dataclass(frozen=True, eq=False)
class CameraTrajectory:
    """Per-frame camera-to-world poses and intrinsics of one viewpoint.

    ``rays`` optionally overrides the pinhole model with a T x H x W x 3 grid
    of unit camera-frame directions (non-pinhole cameras).
    """

    poses: np.ndarray
    intrinsics: np.ndarray
    size: tuple[int, int]
    rays: np.ndarray | None = field(default=None)

    def __post_init__(self):
        poses = np.asarray(self.poses, dtype=np.float64)
        intr = np.asarray(self.intrinsics, dtype=np.float64)
        if poses.ndim != 3 or intr.ndim != 3 or len(poses) != len(intr) or len(poses) == 0:
            raise ShapeError(f"poses {poses.shape} and intrinsics {intr.shape} must be T x 4 x 4 / T x 3 x 3 with T >= 1")
        validate_pose(poses)
        validate_intrinsics(intr)
        size = (int(self.size[0]), int(self.size[1]))
        if size[0] < 1 or size[1] < 1:
            raise ShapeError(f"image size must be positive, got {size}")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "intrinsics", intr)
        object.__setattr__(self, "size", size)
        if self.rays is not None:
            rays = np.asarray(self.rays, dtype=np.float64)
            if rays.shape != (len(poses), size[0], size[1], 3):
                raise ShapeError(f"ray override must be {(len(poses), *size, 3)}, got {rays.shape}")
            if np.max(np.abs(np.linalg.norm(rays, axis=-1) - 1.0)) > 1e-5:
                raise ShapeError("ray override must contain unit vectors")
            object.__setattr__(self, "rays", rays)

    @property
    def frame_count(self) -> int:
        return len(self.poses)

    def __len__(self) -> int:
        return len(self.poses)

    def with_poses(self, poses) -> "CameraTrajectory":
        return replace(self, poses=np.asarray(poses, dtype=np.float64))

    def slice(self, start: int, stop: int) -> "CameraTrajectory":
        rays = None if self.rays is None else self.rays[start:stop]
        return CameraTrajectory(self.poses[start:stop], self.intrinsics[start:stop], self.size, rays)


# ---------------------------------------------------------------------------
# Rays and Plücker maps
# ---------------------------------------------------------------------------


def make_ray_grid(intrinsics, size: tuple[int, int]) -> np.ndarray:
    """Unit camera-frame ray through every pixel center, shape H x W x 3."""
    h, w = size
    if h < 1 or w < 1:
        raise ShapeError(f"image size must be positive, got {size}")
    k = np.asarray(intrinsics, dtype=np.float64)
    if k.shape != (3, 3) or not np.all(np.isfinite(k)) or abs(np.linalg.det(k)) < 1e-12:
        raise InvalidIntrinsicsError("intrinsics matrix is not invertible")
    u, v = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pix = np.stack([u, v, np.ones_like(u)], axis=-1)
    dirs = pix @ np.linalg.inv(k).T
    return dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)


def project_points(points_cam, intrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to continuous pixel coordinates.

    Returned coordinates follow the pixel-center convention, so the center of
    pixel (u, v) projects to (u, v) exactly.
    """
    p = np.asarray(points_cam, dtype=np.float64) @ np.asarray(intrinsics, dtype=np.float64).T
    return p[..., :2] / p[..., 2:3] - 0.5


def camera_rays(traj: CameraTrajectory) -> np.ndarray:
    """Camera-frame ray grid for every frame, T x H x W x 3."""
    if traj.rays is not None:
        return traj.rays
    return np.stack([make_ray_grid(k, traj.size) for k in traj.intrinsics])


class PlueckerMap(NamedTuple):
    rays: np.ndarray  # T x H x W x 3, unit, world frame
    moments: np.ndarray  # T x H x W x 3

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.rays, self.moments], axis=-1)


def pluecker_from_camera(traj: CameraTrajectory, clip: bool = True) -> PlueckerMap:
    """Dense (ray, moment) field of a trajectory with m = r x o.

    Moments are clipped to [-1, 1] when ``clip`` is set; this only bites
    when translations were not normalized to unit scale beforehand.
    """
    rays_cam = camera_rays(traj)
    rot = traj.poses[:, :3, :3]
    origin = traj.poses[:, :3, 3]
    rays = np.einsum("tij,thwj->thwi", rot, rays_cam)
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    moments = np.cross(rays, origin[:, None, None, :])
    if clip:
        moments = np.clip(moments, -1.0, 1.0)
    return PlueckerMap(rays, moments)


# ---------------------------------------------------------------------------
# Canonicalization and normalization
# ---------------------------------------------------------------------------


def canonicalize_trajectory(
    traj_x: CameraTrajectory, traj_y: CameraTrajectory
) -> tuple[CameraTrajectory, CameraTrajectory]:
    """Express both trajectories relative to the first target pose.

    Every pose c becomes inv(c_y0) @ c, which maps c_y0 to the identity and
    is invariant to a shared world transform applied to both inputs.
    """
    ref = invert_pose(traj_y.poses[0])
    new_x = compose(ref, traj_x.poses)
    new_y = compose(ref, traj_y.poses)
    new_y[0] = np.eye(4)
    return traj_x.with_poses(new_x), traj_y.with_poses(new_y)


def suggest_normalization(trajs: Sequence[CameraTrajectory]) -> float:
    """Largest camera-origin norm over the given trajectories (1.0 if all are at the origin)."""
    largest = max(float(np.max(np.linalg.norm(t.poses[:, :3, 3], axis=-1))) for t in trajs)
    return largest if largest > 0.0 else 1.0


def normalize_translations(trajs: Sequence[CameraTrajectory], constant: float) -> list[CameraTrajectory]:
    if not constant > 0:
        raise InvalidArgumentError(f"normalization constant must be positive, got {constant}")
    out = []
    for t in trajs:
        poses = t.poses.copy()
        poses[:, :3, 3] /= constant
        out.append(t.with_poses(poses))
    return out


def prepare_pair(
    traj_x: CameraTrajectory, traj_y: CameraTrajectory, constant: float | None = None
) -> tuple[CameraTrajectory, CameraTrajectory]:
    """Canonicalize to the first target pose, then normalize translations.

    With ``constant=None`` the normalization constant is suggested from the
    canonicalized pair itself.
    """
    cx, cy = canonicalize_trajectory(traj_x, traj_y)
    if constant is None:
        constant = suggest_normalization([cx, cy])
    nx, ny = normalize_translations([cx, cy], constant)
    return nx, ny


# ---------------------------------------------------------------------------
# GCD 3-DOF projection
# ---------------------------------------------------------------------------


class GcdControl(NamedTuple):
    delta_azimuth: float
    delta_elevation: float
    delta_radius: float


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def spherical_control(pose) -> tuple[float, float, float]:
    """(azimuth, elevation, radius) of one camera-to-world pose."""
    pose = np.asarray(pose, dtype=np.float64)
    f = pose[:3, 2]
    if np.linalg.norm(f) == 0.0:
        raise DegeneratePoseError("forward vector has zero norm")
    fx, fy, fz = f
    azimuth = math.atan2(fy, fx)
    elevation = -math.atan2(fz, math.hypot(fx, fy))
    radius = float(np.linalg.norm(pose[:3, 3]))
    return azimuth, elevation, radius


def project_to_gcd(traj_x: CameraTrajectory, traj_y: CameraTrajectory, anchor: str = "middle") -> GcdControl:
    """Reduce a trajectory pair to relative (azimuth, elevation, radius), target minus input."""
    if anchor not in ("middle", "last"):
        raise InvalidArgumentError(f"anchor must be 'middle' or 'last', got {anchor!r}")

    def pick(t: CameraTrajectory):
        return t.poses[len(t) // 2] if anchor == "middle" else t.poses[-1]

    az_x, el_x, r_x = spherical_control(pick(traj_x))
    az_y, el_y, r_y = spherical_control(pick(traj_y))
    return GcdControl(wrap_angle(az_y - az_x), el_y - el_x, r_y - r_x)
