"""Rigid-body pose algebra on rotation matrices.

Poses are stored as a 3x3 rotation matrix plus a 3-vector translation.
Twists are 6-vectors ordered [rotation, translation]; all perturbations
are applied on the right (body frame): X <- X * exp(delta).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Below this rotation magnitude the closed forms are replaced by series
# expansions to avoid 0/0.
_SMALL_ANGLE = 1e-6

# log() is undefined at pi; refuse anything this close to it.
_MAX_LOG_ANGLE = np.pi - 1e-9


class DegenerateRotationError(ValueError):
    """Rotation angle too close to pi for a well-defined logarithm."""


@dataclass
class Pose:
    """Rigid transform: world point = rotation @ local point + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def copy(self) -> "Pose":
        return Pose(self.rotation.copy(), self.translation.copy())

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        return Pose(np.array(m[:3, :3]), np.array(m[:3, 3]))


def identity() -> Pose:
    return Pose()


def compose(a: Pose, b: Pose) -> Pose:
    """Return a * b."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt.copy(), -rt @ p.translation)


def relative(a: Pose, b: Pose) -> Pose:
    """Return a^-1 * b."""
    rt = a.rotation.T
    return Pose(rt @ b.rotation, rt @ (b.translation - a.translation))


def transform_point(p: Pose, x: np.ndarray) -> np.ndarray:
    return p.rotation @ x + p.translation


def transform_points(p: Pose, xs: np.ndarray) -> np.ndarray:
    """Apply a pose to an (n, 3) array of points."""
    return xs @ p.rotation.T + p.translation


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _rotation_coeffs(theta: float) -> tuple[float, float, float]:
    # A = sin(t)/t, B = (1-cos(t))/t^2, C = (1-A)/t^2
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0)
        b = 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0)
        c = 1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0)
        return a, b, c
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    c = (1.0 - a) / (theta * theta)
    return a, b, c


def exp(twist: np.ndarray) -> Pose:
    """Exponential map from a [rotation, translation] twist to a pose."""
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    omega, rho = twist[:3], twist[3:]
    theta = float(np.linalg.norm(omega))
    k = skew(omega)
    k2 = k @ k
    a, b, c = _rotation_coeffs(theta)
    rotation = np.eye(3) + a * k + b * k2
    v = np.eye(3) + b * k + c * k2
    return Pose(rotation, v @ rho)


def rotation_angle(rotation: np.ndarray) -> float:
    cos = (np.trace(rotation) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def log(p: Pose) -> np.ndarray:
    """Logarithm map; raises DegenerateRotationError with angle near pi."""
    theta = rotation_angle(p.rotation)
    if theta >= _MAX_LOG_ANGLE:
        raise DegenerateRotationError(
            f"rotation angle {theta:.9f} too close to pi for log"
        )
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        # theta / (2 sin(theta)) expanded around 0
        half_fac = 0.5 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0
        d = 1.0 / 12.0 + t2 / 720.0
    else:
        half_fac = 0.5 * theta / np.sin(theta)
        # V^-1 = I - skew/2 + d * skew^2
        d = (1.0 - 0.5 * theta * np.sin(theta) / (1.0 - np.cos(theta))) / (
            theta * theta
        )
    omega = half_fac * vee(p.rotation - p.rotation.T)
    k = skew(omega)
    v_inv = np.eye(3) - 0.5 * k + d * (k @ k)
    twist = np.empty(6)
    twist[:3] = omega
    twist[3:] = v_inv @ p.translation
    return twist


def retract(p: Pose, twist: np.ndarray) -> Pose:
    """Right-perturb: p * exp(twist)."""
    return compose(p, exp(twist))


def project_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar factor).

    Matrix products preserve an orthonormality defect instead of removing
    it, and a defect fed back through a compose/relative recurrence compounds
    geometrically, so any extrapolation loop must reproject its result.
    """
    u, _, vt = np.linalg.svd(m)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
    return u @ vt


def local(ref: Pose, p: Pose) -> np.ndarray:
    """Twist delta with retract(ref, delta) == p."""
    return log(relative(ref, p))


def quaternion_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Return [qx, qy, qz, qw] with qw >= 0."""
    m = rotation
    t = np.trace(m)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(m[i, i] - m[j, j] - m[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[i] = 0.25 * s
        q[j] = (m[j, i] + m[i, j]) / s
        q[k] = (m[k, i] + m[i, k]) / s
        q[3] = (m[k, j] - m[j, k]) / s
    if q[3] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Build a rotation matrix from [qx, qy, qz, qw]."""
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
