"""Rigid-body poses, Euler conversions, and pose interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ORTHO_TOL = 1e-9
_GIMBAL_TOL = 1e-9


class GimbalLockError(ValueError):
    """Pitch too close to +-90 deg for an XYZ Euler decomposition."""


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] *= -1.0
        r = u @ vt
    return r


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform: rotation (3x3, det +1) plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.linalg.det(r) < 0:
            raise ValueError("rotation has negative determinant")
        if np.linalg.norm(r.T @ r - np.eye(3)) > _ORTHO_TOL:
            r = _nearest_rotation(r)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "PoseSE3":
        m = np.asarray(m, dtype=float)
        return PoseSE3(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class EulerXYZ:
    """XYZ-order Euler angles in radians, pitch restricted to (-pi/2, pi/2)."""

    rx: float
    ry: float
    rz: float


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Transform applying b then a (matrix product a . b)."""
    return PoseSE3(a.rotation @ b.rotation,
                   a.rotation @ b.translation + a.translation)


def inverse(a: PoseSE3) -> PoseSE3:
    rt = a.rotation.T
    return PoseSE3(rt, -rt @ a.translation)


def accumulate(relatives, j: int, k: int) -> PoseSE3:
    """Product relatives[j] . relatives[j+1] ... relatives[k]."""
    n = len(relatives)
    if not (0 <= j <= k < n):
        raise IndexError(f"range [{j}, {k}] out of bounds for {n} poses")
    out = relatives[j]
    for i in range(j + 1, k + 1):
        out = compose(out, relatives[i])
    return out


def eulers2r(e: EulerXYZ) -> np.ndarray:
    """Rotation matrix Rx(rx) @ Ry(ry) @ Rz(rz)."""
    cx, sx = np.cos(e.rx), np.sin(e.rx)
    cy, sy = np.cos(e.ry), np.sin(e.ry)
    cz, sz = np.cos(e.rz), np.sin(e.rz)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx @ ry @ rz


def r2eulers(r: np.ndarray) -> EulerXYZ:
    """Inverse of eulers2r on the canonical pitch domain.

    Raises GimbalLockError near pitch +-90 deg, where the decomposition
    is ill-conditioned; callers fall back to axis-angle interpolation.
    """
    r = np.asarray(r, dtype=float)
    s = r[0, 2]
    if abs(s) > 1.0 - _GIMBAL_TOL:
        raise GimbalLockError(f"pitch too close to +-90 deg (sin={s:.12f})")
    ry = np.arcsin(s)
    rx = np.arctan2(-r[1, 2], r[2, 2])
    rz = np.arctan2(-r[0, 1], r[0, 0])
    return EulerXYZ(rx, ry, rz)


def fractional_pose(delta: PoseSE3, fraction: float) -> PoseSE3:
    """Scale a pose delta: Euler angles and translation times `fraction`."""
    e = r2eulers(delta.rotation)
    r = eulers2r(EulerXYZ(fraction * e.rx, fraction * e.ry, fraction * e.rz))
    return PoseSE3(r, fraction * delta.translation)


def _rotvec_from_matrix(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (internal fallback only)."""
    r = np.asarray(r, dtype=float)
    cos_a = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_a)
    if angle < 1e-12:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # near pi: axis from the symmetric part
        m = (r + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        # fix signs from off-diagonals
        i = int(np.argmax(axis))
        if axis[i] > 0:
            for j in range(3):
                if j != i:
                    axis[j] = m[i, j] / axis[i] if axis[i] > 1e-12 else axis[j]
        axis /= np.linalg.norm(axis)
        return angle * axis
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    axis /= (2.0 * np.sin(angle))
    return angle * axis


def _matrix_from_rotvec(v: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(v))
    if angle < 1e-12:
        return np.eye(3)
    k = np.asarray(v, dtype=float) / angle
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def _fractional_pose_rotvec(delta: PoseSE3, fraction: float) -> PoseSE3:
    """Axis-angle variant of fractional_pose, used when Eulers gimbal-lock."""
    r = _matrix_from_rotvec(fraction * _rotvec_from_matrix(delta.rotation))
    return PoseSE3(r, fraction * delta.translation)
