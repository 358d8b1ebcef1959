"""Rigid-transform algebra and the pinhole camera projection stack.

Conventions used throughout the package:

* World / agent frames are right-handed: x forward, y left, z up.
* Camera frames follow the computer-vision convention: z forward,
  x right (image u), y down (image v).
* Poses are full 4x4 homogeneous matrices so the same type serves agents,
  sensor mounts and relative transforms; planar code extracts (x, y, yaw).
* Pixel coordinates are integers; the continuous projection is rounded
  half-away-from-zero, so pixel (u, v) corresponds to the continuous image
  point (u, v) exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

_POSE_TOL = 1e-9


class InvalidPoseError(ValueError):
    """Raised when a matrix is not a proper rigid transform."""


@dataclass(frozen=True)
class Pose:
    """4x4 homogeneous rigid transform: rotation block R, translation t."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidPoseError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidPoseError("pose matrix has non-finite entries")
        if not np.array_equal(m[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise InvalidPoseError("bottom row must be exactly (0, 0, 0, 1)")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > _POSE_TOL:
            raise InvalidPoseError("rotation block is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _POSE_TOL:
            raise InvalidPoseError("rotation block must have determinant +1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(4))

    @staticmethod
    def from_rt(rotation: np.ndarray, translation) -> "Pose":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return Pose(m)

    @staticmethod
    def from_translation(x: float, y: float, z: float = 0.0) -> "Pose":
        return Pose.from_rt(np.eye(3), (x, y, z))

    @staticmethod
    def from_planar(x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        """Pose rotated by `yaw` about +z and translated to (x, y, z)."""
        c, s = np.cos(yaw), np.sin(yaw)
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose.from_rt(r, (x, y, z))


def compose(a: Pose, b: Pose) -> Pose:
    """Chain two transforms: the result maps b-input coordinates through b then a."""
    return Pose(a.matrix @ b.matrix)


def invert(pose: Pose) -> Pose:
    # Rigid inverse: transpose the rotation, counter-rotate the translation.
    r = pose.rotation.T
    return Pose.from_rt(r, -r @ pose.translation)


def relative(a: Pose, b: Pose) -> Pose:
    """Transform mapping b-frame coordinates into a-frame: a^-1 . b."""
    return compose(invert(a), b)


def planar_parts(pose: Pose) -> tuple[float, float, float]:
    """Extract (x, y, yaw) of the pose, ignoring z / roll / pitch."""
    m = pose.matrix
    return float(m[0, 3]), float(m[1, 3]), float(np.arctan2(m[1, 0], m[0, 0]))


def transform_points(pose: Pose, pts: np.ndarray) -> np.ndarray:
    """Apply R.p + t to one (3,) point or an (N, 3) array of points."""
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ pose.rotation.T + pose.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters: focal lengths, principal point, image size (pixels)."""

    fx: float
    fy: float
    u0: float
    v0: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")


class PixelDepth(NamedTuple):
    """Integer pixel plus the metric depth observed there."""

    u: int
    v: int
    d: float


def _round_half_away(x):
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def project(intr: CameraIntrinsics, cam_pt: np.ndarray) -> Optional[PixelDepth]:
    """Project a camera-frame point to an integer pixel.

    Returns None when the point is behind the camera (z <= 0) or the rounded
    pixel falls outside [0, W) x [0, H).
    """
    x, y, z = np.asarray(cam_pt, dtype=np.float64)
    if z <= 0.0:
        return None
    u = _round_half_away(intr.fx * x / z + intr.u0)
    v = _round_half_away(intr.fy * y / z + intr.v0)
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        return None
    return PixelDepth(int(u), int(v), float(z))


def project_points(intr: CameraIntrinsics, cam_pts: np.ndarray):
    """Vectorised projection of an (N, 3) camera-frame cloud.

    Returns (pixels (M, 2) int array of kept (u, v), depths (M,), kept index
    into the input). Points behind the camera or off the image are dropped.
    """
    pts = np.asarray(cam_pts, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    front = z > 0.0
    zf = np.where(front, z, 1.0)
    u = _round_half_away(intr.fx * pts[:, 0] / zf + intr.u0)
    v = _round_half_away(intr.fy * pts[:, 1] / zf + intr.v0)
    keep = front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    idx = np.flatnonzero(keep)
    pix = np.stack([u[idx], v[idx]], axis=1).astype(np.int64)
    return pix, z[idx], idx


def unproject(intr: CameraIntrinsics, px: PixelDepth) -> np.ndarray:
    """Invert the projection for a pixel-center ray at the given depth."""
    x = (px.u - intr.u0) * px.d / intr.fx
    y = (px.v - intr.v0) * px.d / intr.fy
    return np.array([x, y, float(px.d)])


def pixel_rays(intr: CameraIntrinsics) -> np.ndarray:
    """Unit-depth camera-frame directions through every pixel center.

    Shape (H, W, 3) with z = 1, so a scalar t along the ray equals pinhole
    depth at that pixel.
    """
    u = np.arange(intr.width, dtype=np.float64)
    v = np.arange(intr.height, dtype=np.float64)
    xn = (u - intr.u0) / intr.fx
    yn = (v - intr.v0) / intr.fy
    dirs = np.empty((intr.height, intr.width, 3))
    dirs[:, :, 0] = xn[None, :]
    dirs[:, :, 1] = yn[:, None]
    dirs[:, :, 2] = 1.0
    return dirs
