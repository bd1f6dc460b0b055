"""SO(3)/SE(3) primitives: exponential and log maps, Jacobians, pose algebra.

Rotations are plain 3x3 orthonormal matrices with determinant +1; rotation
vectors are axis * angle in radians. Twists are 6-vectors ordered
[translational, angular]. All functions are pure and allocate fresh arrays,
so they are safe to call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below these angles the closed forms lose digits to 0/0 cancellation, so
# low-order series (relative error < 1e-12 at the switch point) take over.
_EXP_SERIES_EPS = 1e-6
_JAC_SERIES_EPS = 1e-5


def hat(v) -> np.ndarray:
    """Cross-product matrix: hat(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m) -> np.ndarray:
    """Inverse of hat on antisymmetric matrices."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(phi) -> np.ndarray:
    """Rodrigues formula; second-order series below the small-angle switch."""
    phi = np.asarray(phi, dtype=float)
    k = hat(phi)
    theta = float(np.linalg.norm(phi))
    if theta < _EXP_SERIES_EPS:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(c) -> np.ndarray:
    """Rotation vector of a rotation matrix, with norm <= pi.

    Near a half turn the antisymmetric part of the matrix vanishes, so the
    axis is recovered from the symmetric part instead: the squared axis
    components sit on the diagonal, and the column of the largest diagonal
    entry fixes the relative signs. The overall sign follows the
    antisymmetric part while it carries signal; at exactly pi it is pinned
    by making the first nonzero axis component positive.
    """
    c = np.asarray(c, dtype=float)
    w = vee(c - c.T)  # 2 sin(theta) * axis
    sin_t = 0.5 * float(np.linalg.norm(w))
    cos_t = np.clip(0.5 * (np.trace(c) - 1.0), -1.0, 1.0)
    theta = float(np.arctan2(sin_t, cos_t))  # well conditioned at 0 and pi
    if theta < 1e-7:
        return 0.5 * w
    if theta < np.pi - 1e-4:
        return (0.5 * theta / sin_t) * w
    # theta close to pi: (C + C^T)/2 = cos(theta) I + (1 - cos(theta)) a a^T
    aat = (0.5 * (c + c.T) - cos_t * np.eye(3)) / (1.0 - cos_t)
    k = int(np.argmax(np.diag(aat)))
    axis = aat[:, k] / np.sqrt(max(aat[k, k], 1e-16))
    axis = axis / np.linalg.norm(axis)
    w = vee(c - c.T)  # equals 2 sin(theta) * axis
    if np.linalg.norm(w) > 1e-12:
        if float(np.dot(w, axis)) < 0.0:
            axis = -axis
    else:
        for comp in axis:
            if abs(comp) > 1e-12:
                if comp < 0.0:
                    axis = -axis
                break
    return theta * axis


def axis_angle(c) -> np.ndarray:
    """Alias of log_so3; the control law is written in axis-angle terms."""
    return log_so3(c)


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): exp(phi + d) ~ exp(phi) exp(J_r(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    k = hat(phi)
    theta = float(np.linalg.norm(phi))
    if theta < _JAC_SERIES_EPS:
        return np.eye(3) - 0.5 * k + (k @ k) / 6.0
    b = (1.0 - np.cos(theta)) / theta**2
    cc = (theta - np.sin(theta)) / theta**3
    return np.eye(3) - b * k + cc * (k @ k)


def right_jacobian_inv(phi) -> np.ndarray:
    """Inverse right Jacobian; requires ||phi|| < pi."""
    phi = np.asarray(phi, dtype=float)
    k = hat(phi)
    theta = float(np.linalg.norm(phi))
    if theta < _JAC_SERIES_EPS:
        return np.eye(3) + 0.5 * k + (k @ k) / 12.0
    d = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * k + d * (k @ k)


def left_jacobian(phi) -> np.ndarray:
    """Left Jacobian of SO(3); equals right_jacobian(-phi)."""
    phi = np.asarray(phi, dtype=float)
    k = hat(phi)
    theta = float(np.linalg.norm(phi))
    if theta < _JAC_SERIES_EPS:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    b = (1.0 - np.cos(theta)) / theta**2
    cc = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + b * k + cc * (k @ k)


def exp_se3(xi, dt: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """SE(3) exponential of the scaled twist xi * dt.

    xi is ordered [v, w]; returns (rotation, translation) of the resulting
    rigid transform.
    """
    xi = np.asarray(xi, dtype=float)
    rho = xi[:3] * dt
    phi = xi[3:] * dt
    c = exp_so3(phi)
    t = left_jacobian(phi) @ rho
    return c, t


def orthonormalize(c) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(c, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def is_rotation(c, tol: float = 1e-9) -> bool:
    c = np.asarray(c, dtype=float)
    if c.shape != (3, 3) or not np.all(np.isfinite(c)):
        return False
    ortho = np.linalg.norm(c @ c.T - np.eye(3)) <= tol
    return bool(ortho and abs(np.linalg.det(c) - 1.0) <= tol)


def rotation_to_quaternion(c) -> np.ndarray:
    """Unit quaternion (w, x, y, z); used for logging only."""
    c = np.asarray(c, dtype=float)
    tr = np.trace(c)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (c[2, 1] - c[1, 2]) / s,
                      (c[0, 2] - c[2, 0]) / s,
                      (c[1, 0] - c[0, 1]) / s])
    elif c[0, 0] >= c[1, 1] and c[0, 0] >= c[2, 2]:
        s = np.sqrt(1.0 + c[0, 0] - c[1, 1] - c[2, 2]) * 2.0
        q = np.array([(c[2, 1] - c[1, 2]) / s,
                      0.25 * s,
                      (c[0, 1] + c[1, 0]) / s,
                      (c[0, 2] + c[2, 0]) / s])
    elif c[1, 1] >= c[2, 2]:
        s = np.sqrt(1.0 + c[1, 1] - c[0, 0] - c[2, 2]) * 2.0
        q = np.array([(c[0, 2] - c[2, 0]) / s,
                      (c[0, 1] + c[1, 0]) / s,
                      0.25 * s,
                      (c[1, 2] + c[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + c[2, 2] - c[0, 0] - c[1, 1]) * 2.0
        q = np.array([(c[1, 0] - c[0, 1]) / s,
                      (c[0, 2] + c[2, 0]) / s,
                      (c[1, 2] + c[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def symmetrize(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def clamp_psd(m, tol: float = 1e-12) -> np.ndarray:
    """Symmetrize and clamp slightly negative eigenvalues to zero.

    Eigenvalues below -tol are still clamped, but indicate a bug upstream;
    callers that care assert on eigmin separately.
    """
    s = symmetrize(m)
    w, v = np.linalg.eigh(s)
    if w[0] >= 0.0:
        return s
    w = np.clip(w, 0.0, None)
    return symmetrize((v * w) @ v.T)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping source-frame points: x_dst = C @ x_src + t."""

    C: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.C @ other.C, self.C @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.C.T, -(self.C.T @ self.t))

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a stack of points (N, 3)."""
        return np.asarray(points, dtype=float) @ self.C.T + self.t

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.C
        m[:3, 3] = self.t
        return m

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return Pose(m[:3, :3], m[:3, 3])


def pose_boxplus(pose: Pose, delta) -> Pose:
    """Apply a tangent increment [dt, dphi] under the left convention:
    t + dt, exp(hat(dphi)) @ C."""
    delta = np.asarray(delta, dtype=float).reshape(6)
    return Pose(exp_so3(delta[3:]) @ pose.C, pose.t + delta[:3])


def pose_boxminus(a: Pose, b: Pose) -> np.ndarray:
    """Tangent difference of a relative to b, inverse of pose_boxplus:
    [a.t - b.t, log(a.C @ b.C^T)]."""
    return np.concatenate([a.t - b.t, log_so3(a.C @ b.C.T)])
