"""Rigid probe poses and slice geometry.

Conventions:
  - ProbePose maps probe-frame coordinates (mm) to world coordinates (mm);
    the probe imaging plane is z = 0 in the probe frame.
  - Pixel (u, v) of a slice maps to in-plane mm coordinates with the image
    center at (0, 0): x1 along u (width), x2 along v (height).
  - Euler angles are ZYX intrinsic, in degrees, for human-facing entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

_ORTHO_TOL = 1e-9


class InvalidParameterError(ValueError):
    """A contract precondition was violated."""


@dataclass(frozen=True)
class ProbePose:
    """Rigid transform probe frame -> world frame (rotation + translation, mm)."""

    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise InvalidParameterError(f"rotation must be 3x3, got {R.shape}")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6:
            raise InvalidParameterError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise InvalidParameterError("rotation must have det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "ProbePose":
        return ProbePose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_euler_deg(rx: float, ry: float, rz: float,
                       tx: float = 0.0, ty: float = 0.0, tz: float = 0.0) -> "ProbePose":
        """ZYX intrinsic Euler angles in degrees plus translation in mm."""
        R = Rotation.from_euler("ZYX", [rz, ry, rx], degrees=True).as_matrix()
        return ProbePose(R, np.array([tx, ty, tz], dtype=np.float64))

    def to_euler_deg(self):
        """Inverse of from_euler_deg: returns (rx, ry, rz, tx, ty, tz)."""
        rz, ry, rx = Rotation.from_matrix(self.rotation).as_euler("ZYX", degrees=True)
        tx, ty, tz = self.translation
        return float(rx), float(ry), float(rz), float(tx), float(ty), float(tz)

    def inverse(self) -> "ProbePose":
        """World -> probe transform (the rendering equations' view matrix)."""
        Rinv = self.rotation.T
        return ProbePose(Rinv, -Rinv @ self.translation)

    def compose(self, other: "ProbePose") -> "ProbePose":
        """self after other: (self ∘ other)(x) = self(other(x))."""
        return ProbePose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (..., 3) probe-frame points to world frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class SliceSpec:
    """Pixel grid of one slice: dimensions, pixel spacing (mm) and probe pose."""

    width: int
    height: int
    spacing: float
    pose: ProbePose = field(default_factory=ProbePose.identity)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError("width and height must be >= 1")
        if not self.spacing > 0:
            raise InvalidParameterError("spacing must be > 0")


def pixel_to_plane(u, v, spec: SliceSpec):
    """Map pixel indices to centered in-plane mm coordinates (x1, x2).

    Accepts scalars or arrays; raises on out-of-range scalar indices.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    if np.any(u < 0) or np.any(u >= spec.width) or np.any(v < 0) or np.any(v >= spec.height):
        raise InvalidParameterError("pixel index out of range")
    x1 = (u - (spec.width - 1) / 2.0) * spec.spacing
    x2 = (v - (spec.height - 1) / 2.0) * spec.spacing
    return x1, x2


def plane_axes(spec: SliceSpec, dtype=np.float64):
    """World-frame slice origin and per-pixel step vectors.

    Returns (origin, du, dv) such that the world position of pixel (u, v)
    is origin + u * du + v * dv.
    """
    R = spec.pose.rotation
    t = spec.pose.translation
    cx = (spec.width - 1) / 2.0
    cy = (spec.height - 1) / 2.0
    du = R[:, 0] * spec.spacing
    dv = R[:, 1] * spec.spacing
    origin = t - cx * du - cy * dv
    return origin.astype(dtype), du.astype(dtype), dv.astype(dtype)


def pixel_grid_world(spec: SliceSpec, dtype=np.float64) -> np.ndarray:
    """World coordinates of every pixel center, shape (height, width, 3)."""
    origin, du, dv = plane_axes(spec, dtype)
    uu = np.arange(spec.width, dtype=dtype)
    vv = np.arange(spec.height, dtype=dtype)
    return (origin[None, None, :]
            + uu[None, :, None] * du[None, None, :]
            + vv[:, None, None] * dv[None, None, :])


@dataclass
class SliceImage:
    """H x W scalar intensity image in [0, 1] with spacing (mm) and pose."""

    pixels: np.ndarray  # (H, W)
    spacing: float
    pose: ProbePose

    @property
    def spec(self) -> SliceSpec:
        return SliceSpec(width=self.pixels.shape[1], height=self.pixels.shape[0],
                         spacing=self.spacing, pose=self.pose)
