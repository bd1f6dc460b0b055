"""Error-state EKF over the object-in-camera pose.

The belief is a Pose mean plus a 6x6 covariance over the tangent error
[dt, dphi]. A single error convention is used throughout: the left
perturbation

    t_true = t + dt,    C_true = exp(hat(dphi)) @ C.

Propagation follows the discrete constant-velocity model driven by the
commanded camera twist:

    t' = exp(-hat(w) dt) t - v dt,    C' = exp(-hat(w) dt) C,

whose error transition under the left convention is block-diagonal with
both blocks equal to exp(-hat(w) dt). An alternative rotation block,
J_r^{-1}(log(exp(-hat(w) dt) C)), is kept behind `variant="mixed-jr"` for
comparison; it mixes error conventions and fails the finite-difference
cross-check, which is exactly why it is not the default.

Covariance propagation adds R * dt with R = diag(sigma_vp^2 I, sigma_vw^2 I)
and an identity noise Jacobian, i.e. the velocity-noise stds are treated as
a continuous-time intensity.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import chi2

from .camera import DEFAULT_Z_MIN, Intrinsics, projection_jacobians, project_points
from .keypoints import KeypointSet, Measurement
from .lie import (
    Pose,
    clamp_psd,
    exp_so3,
    log_so3,
    pose_boxplus,
    right_jacobian_inv,
    symmetrize,
)

PROPAGATION_VARIANTS = ("left", "mixed-jr")
INNOVATION_COND_LIMIT = 1e12


class SingularInnovation(RuntimeError):
    """Innovation matrix is numerically singular (degenerate geometry)."""


@dataclass(frozen=True)
class NoiseParams:
    """Velocity-noise standard deviations of the motion prior."""

    sigma_vp: float
    sigma_vw: float

    def __post_init__(self):
        if self.sigma_vp <= 0 or self.sigma_vw <= 0:
            raise ValueError("velocity noise stds must be positive")

    @property
    def rate_covariance(self) -> np.ndarray:
        r = np.zeros((6, 6))
        r[:3, :3] = self.sigma_vp**2 * np.eye(3)
        r[3:, 3:] = self.sigma_vw**2 * np.eye(3)
        return r


@dataclass
class FilterState:
    mean: Pose
    P: np.ndarray

    def copy(self) -> "FilterState":
        return FilterState(self.mean, self.P.copy())


def initialize(prior: Pose, init_sigma_t: float, init_sigma_phi: float) -> FilterState:
    """Belief from a pose prior with isotropic translation/rotation stds."""
    p = np.zeros((6, 6))
    p[:3, :3] = init_sigma_t**2 * np.eye(3)
    p[3:, 3:] = init_sigma_phi**2 * np.eye(3)
    return FilterState(prior, p)


def propagate(state: FilterState, twist, dt: float, noise: NoiseParams,
              variant: str = "left") -> FilterState:
    """Constant-velocity prediction with the commanded camera twist."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if variant not in PROPAGATION_VARIANTS:
        raise ValueError(f"variant must be one of {PROPAGATION_VARIANTS}")
    v, w = _twist_parts(twist)
    r = exp_so3(-w * dt)
    t_new = r @ state.mean.t - v * dt
    c_new = r @ state.mean.C

    f = np.zeros((6, 6))
    f[:3, :3] = r
    if variant == "left":
        f[3:, 3:] = r
    else:
        f[3:, 3:] = right_jacobian_inv(log_so3(c_new))
    p_new = f @ state.P @ f.T + noise.rate_covariance * dt
    return FilterState(Pose(c_new, t_new), symmetrize(p_new))


def predict_keypoints(state: FilterState, kps: KeypointSet, intr: Intrinsics,
                      z_min: float = DEFAULT_Z_MIN) -> tuple[np.ndarray, np.ndarray]:
    """Predicted pixel locations of the model keypoints under the belief mean.

    Returns (uv, ok); keypoints behind the camera have ok == False and NaN
    rows, and are excluded from updates.
    """
    pts_c = state.mean.apply(kps.points3d)
    return project_points(pts_c, intr, z_min)


def measurement_jacobian(state: FilterState, kps: KeypointSet, intr: Intrinsics,
                         z_min: float = DEFAULT_Z_MIN) -> tuple[np.ndarray, np.ndarray]:
    """Per-keypoint residual Jacobians d(measured - predicted)/d[dt, dphi].

    With the left perturbation, the camera-frame point moves as
    I * dt - hat(dphi) acting on C @ X, so each 2x6 block is
    [-J_proj, J_proj @ hat(C @ X)]. Returns (H blocks (N, 2, 6), ok mask).
    """
    rotated = kps.points3d @ state.mean.C.T  # C @ X per keypoint
    pts_c = rotated + state.mean.t
    ok = pts_c[:, 2] > z_min
    n = len(kps)
    blocks = np.zeros((n, 2, 6))
    if np.any(ok):
        jp = projection_jacobians(pts_c[ok], intr)
        blocks[ok, :, :3] = -jp
        hats = np.zeros((int(ok.sum()), 3, 3))
        rx = rotated[ok]
        hats[:, 0, 1] = -rx[:, 2]
        hats[:, 0, 2] = rx[:, 1]
        hats[:, 1, 0] = rx[:, 2]
        hats[:, 1, 2] = -rx[:, 0]
        hats[:, 2, 0] = -rx[:, 1]
        hats[:, 2, 1] = rx[:, 0]
        blocks[ok, :, 3:] = np.einsum("nij,njk->nik", jp, hats)
    return blocks, ok


@lru_cache(maxsize=16)
def _gate_threshold(level: float) -> float:
    if level >= 1.0:
        return np.inf
    return float(chi2.ppf(level, df=2))


def gate(residuals, h_blocks, p_prior, covs, level: float = 0.999) -> np.ndarray:
    """Per-keypoint Mahalanobis gate against the chi-square(2) quantile.

    residuals (M, 2), h_blocks (M, 2, 6), covs (M, 2, 2). A level of 1.0
    accepts everything.
    """
    residuals = np.asarray(residuals, dtype=float).reshape(-1, 2)
    thresh = _gate_threshold(level)
    keep = np.zeros(residuals.shape[0], dtype=bool)
    for i in range(residuals.shape[0]):
        s = h_blocks[i] @ p_prior @ h_blocks[i].T + covs[i]
        try:
            m2 = float(residuals[i] @ np.linalg.solve(s, residuals[i]))
        except np.linalg.LinAlgError:
            continue
        keep[i] = m2 <= thresh
    return keep


@dataclass
class UpdateResult:
    state: FilterState
    used: np.ndarray          # per-keypoint flag: entered the update
    n_visible: int            # measured-visible keypoints this frame
    residual_rms: float       # RMS of used residual components, NaN if none
    all_rejected: bool        # visible keypoints existed but all were gated


def update(state: FilterState, meas: Measurement, kps: KeypointSet,
           intr: Intrinsics, gate_level: float = 0.999,
           joseph: bool = False, z_min: float = DEFAULT_Z_MIN) -> UpdateResult:
    """Keypoint update with on-manifold injection.

    K = P H^T (H P H^T + Q)^-1 with H the *residual* Jacobian; since
    eps ~ -H * (true error), the injected correction is dx = -K eps,
    then t += dt and C <- exp(hat(dphi)) C. The covariance update
    (I - K H) P is insensitive to that sign choice. Only
    measured-visible, predictable, gated keypoints enter; with none, the
    prediction is returned unchanged.
    """
    n = len(kps)
    uv_pred, ok = predict_keypoints(state, kps, intr, z_min)
    usable = meas.visible & ok
    n_visible = int(meas.visible.sum())
    if not np.any(usable):
        return UpdateResult(state.copy(), np.zeros(n, dtype=bool),
                            n_visible, float("nan"), False)

    blocks, _ = measurement_jacobian(state, kps, intr, z_min)
    idx = np.flatnonzero(usable)
    residuals = meas.uv[idx] - uv_pred[idx]
    keep = gate(residuals, blocks[idx], state.P, meas.cov[idx], gate_level)
    if not np.any(keep):
        return UpdateResult(state.copy(), np.zeros(n, dtype=bool),
                            n_visible, float("nan"), True)
    idx = idx[keep]
    residuals = residuals[keep]

    m = len(idx)
    h = blocks[idx].reshape(2 * m, 6)
    eps = residuals.reshape(2 * m)
    q = np.zeros((2 * m, 2 * m))
    for j, i in enumerate(idx):
        q[2 * j:2 * j + 2, 2 * j:2 * j + 2] = meas.cov[i]

    s = h @ state.P @ h.T + q
    if np.linalg.cond(s) > INNOVATION_COND_LIMIT:
        raise SingularInnovation(
            f"innovation condition number exceeds {INNOVATION_COND_LIMIT:.0e}")
    k = np.linalg.solve(s, h @ state.P).T  # P H^T S^-1, using P symmetric
    delta = -(k @ eps)
    ikh = np.eye(6) - k @ h
    if joseph:
        p_new = ikh @ state.P @ ikh.T + k @ q @ k.T
    else:
        p_new = ikh @ state.P
    p_new = clamp_psd(p_new)

    mean = pose_boxplus(state.mean, delta)
    used = np.zeros(n, dtype=bool)
    used[idx] = True
    rms = float(np.sqrt(np.mean(eps**2)))
    return UpdateResult(FilterState(mean, p_new), used, n_visible, rms, False)


def _twist_parts(twist) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(twist, "vector"):
        twist = twist.vector()
    vec = np.asarray(twist, dtype=float).reshape(6)
    return vec[:3], vec[3:]
