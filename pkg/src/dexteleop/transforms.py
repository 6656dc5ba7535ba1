"""Rigid transforms and SO(3) helpers used across the pipeline.

All rotations are 3x3 orthonormal matrices (det +1), all translations are
3-vectors in meters. Angles are radians everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHONORMAL_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation matrix for the axis-angle vector w."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def rotation_log(rot: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, robust near 0 and pi."""
    cos_theta = np.clip((np.trace(rot) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-9:
        # First-order: log(R) ~ (R - R^T)/2
        return np.array([rot[2, 1] - rot[1, 2],
                         rot[0, 2] - rot[2, 0],
                         rot[1, 0] - rot[0, 1]]) * 0.5
    if np.pi - theta < 1e-6:
        # Near pi the sine form loses precision. (R + R^T)/2 = cos*I + (1-cos)*aa^T,
        # so the axis outer product is recoverable from the symmetric part.
        outer = ((rot + rot.T) * 0.5 - cos_theta * np.eye(3)) / (1.0 - cos_theta)
        i = int(np.argmax(np.diag(outer)))
        axis = outer[i] / np.sqrt(max(outer[i, i], 1e-300))
        axis /= np.linalg.norm(axis)
        # Sign is ambiguous at exactly pi; below pi the skew part decides it.
        v = np.array([rot[2, 1] - rot[1, 2],
                      rot[0, 2] - rot[2, 0],
                      rot[1, 0] - rot[0, 1]])
        if v @ axis < 0.0:
            axis = -axis
        return axis * theta
    factor = theta / (2.0 * np.sin(theta))
    return np.array([rot[2, 1] - rot[1, 2],
                     rot[0, 2] - rot[2, 0],
                     rot[1, 0] - rot[0, 1]]) * factor


def orthonormalize(rot: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def slerp(rot_a: np.ndarray, rot_b: np.ndarray, t: float) -> np.ndarray:
    """Constant-angular-velocity interpolation along the geodesic a -> b."""
    return rot_a @ rotation_exp(t * rotation_log(rot_a.T @ rot_b))


def geodesic_angle(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    cos_theta = np.clip((np.trace(rot_a.T @ rot_b) - 1.0) * 0.5, -1.0, 1.0)
    return float(np.arccos(cos_theta))


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """URDF fixed-axis convention: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (quaternion method)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def is_rotation(rot: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    if rot.shape != (3, 3):
        return False
    if not np.all(np.isfinite(rot)):
        return False
    if np.linalg.norm(rot.T @ rot - np.eye(3)) > tol:
        return False
    return abs(np.linalg.det(rot) - 1.0) <= tol


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: x_out = rotation @ x_in + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        if not is_rotation(rot):
            raise ValueError("rotation is not orthonormal with det +1")
        if not np.all(np.isfinite(trans)):
            raise ValueError("translation is not finite")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(mat: np.ndarray) -> "RigidTransform":
        mat = np.asarray(mat, dtype=float)
        return RigidTransform(mat[:3, :3], mat[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply `other` first, then `self`."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def orthonormalized(self) -> "RigidTransform":
        return RigidTransform(orthonormalize(self.rotation), self.translation)

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (geodesic_angle(self.rotation, other.rotation) <= tol
                and float(np.linalg.norm(self.translation - other.translation)) <= tol)
