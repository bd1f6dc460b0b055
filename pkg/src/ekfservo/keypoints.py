"""Synthetic keypoint sensing: model keypoint selection and noisy 2D
measurements with per-point covariances.

This module stands in for a learned detector. Its output contract is the
same: per frame, a set of 2D keypoint locations with 2x2 covariance
matrices and visibility flags. Adverse conditions (dropout, outliers,
mis-reported covariances, structured occlusion) are simulated explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import DEFAULT_Z_MIN, Intrinsics, in_image, project_points
from .lie import Pose

_FIDELITIES = ("honest", "overconfident", "underconfident")
_OCCLUDER_HALVES = (None, "left", "right", "top", "bottom")

# Reported covariances carry a tiny isotropic floor so they stay positive
# definite even for the degenerate zero-noise profile (negligible against
# any realistic pixel noise).
REPORTED_SIGMA_FLOOR_PX = 1e-4


class TooFewPoints(ValueError):
    """Requested more keypoints than the model provides."""


@dataclass(frozen=True)
class ObjectModel:
    """Known 3D object: points in the object frame (meters) and the
    precomputed diameter (max pairwise distance)."""

    points: np.ndarray
    diameter: float

    @staticmethod
    def from_points(points) -> "ObjectModel":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if pts.shape[0] < 4:
            raise ValueError("object model needs at least 4 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("object model contains non-finite coordinates")
        centered = pts - pts.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        if sv[2] <= 1e-9 * max(sv[0], 1e-12):
            raise ValueError("object model points are coplanar")
        diff = pts[:, None, :] - pts[None, :, :]
        diameter = float(np.sqrt((diff**2).sum(axis=2)).max())
        return ObjectModel(pts, diameter)


def load_object_points(path) -> ObjectModel:
    """Load a model from an ASCII point list.

    Accepted lines: blank, `# comment`, `x y z`, or mesh vertex lines
    `v x y z` (other mesh records are ignored). Coordinates are meters.
    """
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if fields[0] == "v":
                fields = fields[1:]
            elif not _is_number(fields[0]):
                continue  # non-vertex mesh record (f, vn, vt, ...)
            if len(fields) < 3:
                raise ValueError(f"{path}:{lineno}: expected 3 coordinates")
            try:
                pts.append([float(f) for f in fields[:3]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad coordinate") from exc
    if not pts:
        raise ValueError(f"{path}: no vertices found")
    return ObjectModel.from_points(np.array(pts))


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


@dataclass(frozen=True)
class KeypointSet:
    ids: np.ndarray
    points3d: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def fps_select(model: ObjectModel, n: int) -> KeypointSet:
    """Greedy farthest point sampling over the model points.

    The first point is the one farthest from the centroid; each following
    point maximizes the minimum distance to the already selected set. Ties
    break toward the lowest index, so the result is deterministic.
    """
    pts = model.points
    if n > pts.shape[0]:
        raise TooFewPoints(f"requested {n} keypoints, model has {pts.shape[0]}")
    if n < 1:
        raise ValueError("n must be positive")
    centroid = pts.mean(axis=0)
    first = int(np.argmax(np.linalg.norm(pts - centroid, axis=1)))
    chosen = [first]
    min_dist = np.linalg.norm(pts - pts[first], axis=1)
    while len(chosen) < n:
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
    ids = np.array(chosen, dtype=int)
    return KeypointSet(ids, pts[ids].copy())


@dataclass(frozen=True)
class SensingProfile:
    """Noise and corruption model for the synthetic detector.

    covariance_fidelity controls the *reported* covariance relative to the
    true sampling covariance: "honest" reports it exactly, "overconfident"
    divides by fidelity_scale, "underconfident" multiplies by it. Outliers
    are never reflected in the reported covariance. blackout_frames is a
    half-open frame interval [start, stop) during which every keypoint is
    dropped; occluder_half hides keypoints whose noiseless projection falls
    in the given image half.
    """

    sigma_px: float = 1.0
    anisotropy: float = 1.0
    dropout_prob: float = 0.0
    outlier_prob: float = 0.0
    outlier_px: float = 40.0
    covariance_fidelity: str = "honest"
    fidelity_scale: float = 1.0
    blackout_frames: tuple[int, int] | None = None
    occluder_half: str | None = None

    def __post_init__(self):
        if self.sigma_px < 0:
            raise ValueError("sigma_px must be >= 0")
        if self.anisotropy < 1.0:
            raise ValueError("anisotropy must be >= 1")
        for name in ("dropout_prob", "outlier_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.covariance_fidelity not in _FIDELITIES:
            raise ValueError(f"covariance_fidelity must be one of {_FIDELITIES}")
        if self.fidelity_scale < 1.0:
            raise ValueError("fidelity_scale must be >= 1")
        if self.occluder_half not in _OCCLUDER_HALVES:
            raise ValueError(f"occluder_half must be one of {_OCCLUDER_HALVES}")

    @property
    def reported_scale(self) -> float:
        if self.covariance_fidelity == "overconfident":
            return 1.0 / self.fidelity_scale
        if self.covariance_fidelity == "underconfident":
            return self.fidelity_scale
        return 1.0


@dataclass
class Measurement:
    """One frame of detected keypoints, aligned with a KeypointSet.

    Rows with visible == False carry NaN for uv and cov.
    """

    uv: np.ndarray
    cov: np.ndarray
    visible: np.ndarray

    def __len__(self) -> int:
        return len(self.visible)


def measure(gt_pose: Pose, kps: KeypointSet, intr: Intrinsics,
            profile: SensingProfile, rng: np.random.Generator,
            frame: int | None = None,
            z_min: float = DEFAULT_Z_MIN) -> Measurement:
    """Synthesize one frame of noisy keypoint detections.

    The per-keypoint random draws happen in a fixed order and count
    regardless of visibility outcomes, so the stream stays bit-identical
    for a given seed, independent of what gets occluded.
    """
    n = len(kps)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    gauss = rng.standard_normal((n, 2))
    u_drop = rng.uniform(size=n)
    u_out = rng.uniform(size=n)
    out_dir = rng.uniform(0.0, 2.0 * np.pi, size=n)

    pts_c = gt_pose.apply(kps.points3d)
    uv_true, in_front = project_points(pts_c, intr, z_min)
    geometric = in_front & in_image(uv_true, intr)
    if profile.occluder_half is not None:
        geometric &= ~_occluded(uv_true, intr, profile.occluder_half)

    visible = geometric & (u_drop >= profile.dropout_prob)
    if profile.blackout_frames is not None and frame is not None:
        start, stop = profile.blackout_frames
        if start <= frame < stop:
            visible = np.zeros(n, dtype=bool)

    # True sampling covariance: random orientation, axis stds sigma_px and
    # anisotropy * sigma_px.
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    rot = np.zeros((n, 2, 2))
    rot[:, 0, 0] = cos_a
    rot[:, 0, 1] = -sin_a
    rot[:, 1, 0] = sin_a
    rot[:, 1, 1] = cos_a
    stds = np.stack([np.full(n, profile.sigma_px),
                     np.full(n, profile.anisotropy * profile.sigma_px)], axis=1)
    noise = np.einsum("nij,nj->ni", rot, stds * gauss)
    cov_true = np.einsum("nij,nj,nkj->nik", rot, stds**2, rot)

    is_outlier = u_out < profile.outlier_prob
    outlier_vec = profile.outlier_px * np.stack([np.cos(out_dir),
                                                 np.sin(out_dir)], axis=1)
    noise = np.where(is_outlier[:, None], outlier_vec, noise)

    uv = uv_true + noise
    cov = cov_true * profile.reported_scale
    cov += REPORTED_SIGMA_FLOOR_PX**2 * np.eye(2)
    uv[~visible] = np.nan
    cov[~visible] = np.nan
    return Measurement(uv=uv, cov=cov, visible=visible)


def _occluded(uv, intr: Intrinsics, half: str) -> np.ndarray:
    u, v = uv[:, 0], uv[:, 1]
    if half == "left":
        return u < intr.width / 2.0
    if half == "right":
        return u >= intr.width / 2.0
    if half == "top":
        return v < intr.height / 2.0
    return v >= intr.height / 2.0
