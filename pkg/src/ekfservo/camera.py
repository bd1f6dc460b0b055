"""Pinhole projection and its Jacobian.

No lens distortion. Points projecting outside the image bounds are still
returned; visibility policy belongs to the sensing layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_Z_MIN = 1e-3


class BehindCamera(ValueError):
    """Point at or behind the optical center; it cannot be observed."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


def project(point_c, intr: Intrinsics, z_min: float = DEFAULT_Z_MIN) -> np.ndarray:
    """Project a camera-frame point (meters) to pixel coordinates.

    Raises BehindCamera when z <= z_min.
    """
    x, y, z = np.asarray(point_c, dtype=float)
    if z <= z_min:
        raise BehindCamera(f"point depth {z:.4g} m is not observable")
    return np.array([intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy])


def project_points(points_c, intr: Intrinsics,
                   z_min: float = DEFAULT_Z_MIN) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of an (N, 3) stack.

    Returns (uv, in_front); rows with in_front == False hold NaN instead of
    raising, so callers can keep keypoint indexing aligned.
    """
    pts = np.asarray(points_c, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    in_front = z > z_min
    uv = np.full((pts.shape[0], 2), np.nan)
    zs = np.where(in_front, z, 1.0)
    uv[:, 0] = np.where(in_front, intr.fx * pts[:, 0] / zs + intr.cx, np.nan)
    uv[:, 1] = np.where(in_front, intr.fy * pts[:, 1] / zs + intr.cy, np.nan)
    return uv, in_front


def in_image(uv, intr: Intrinsics) -> np.ndarray:
    """Boundary-inclusive containment test for pixel coordinates (N, 2)."""
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    ok = (uv[:, 0] >= 0.0) & (uv[:, 0] <= intr.width)
    ok &= (uv[:, 1] >= 0.0) & (uv[:, 1] <= intr.height)
    ok &= np.all(np.isfinite(uv), axis=1)
    return ok


def projection_jacobian(point_c, intr: Intrinsics,
                        z_min: float = DEFAULT_Z_MIN) -> np.ndarray:
    """d(pixel)/d(camera point), the 2x3 pinhole derivative."""
    x, y, z = np.asarray(point_c, dtype=float)
    if z <= z_min:
        raise BehindCamera(f"point depth {z:.4g} m is not observable")
    return np.array([[intr.fx / z, 0.0, -intr.fx * x / z**2],
                     [0.0, intr.fy / z, -intr.fy * y / z**2]])


def projection_jacobians(points_c, intr: Intrinsics) -> np.ndarray:
    """Stacked (N, 2, 3) pinhole derivatives; callers guarantee z > z_min."""
    pts = np.asarray(points_c, dtype=float).reshape(-1, 3)
    n = pts.shape[0]
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = intr.fx / z
    jac[:, 0, 2] = -intr.fx * x / z**2
    jac[:, 1, 1] = intr.fy / z
    jac[:, 1, 2] = -intr.fy * y / z**2
    return jac
