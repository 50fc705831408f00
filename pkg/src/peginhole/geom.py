"""SE(3)/SO(3) helpers, keypoint-to-pose conversion and the Gaussian label.

Vectors are plain ``numpy`` arrays of shape (3,). Rotations are (3, 3)
arrays whose columns are the x, y and z axes of the rotated frame. Everything
is computed in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateKeypoints, GimbalLock, InvalidSigma

DEGENERACY_EPS = 1e-12
GIMBAL_EPS = 1e-9


def _vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return a


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < DEGENERACY_EPS:
        raise DegenerateKeypoints(f"cannot normalize vector of norm {n:.3e}")
    return v / n


@dataclass(frozen=True)
class KeypointTriple:
    """Hole center plus markers 25 mm along the hole x and z axes."""

    k1: np.ndarray
    k2: np.ndarray
    k3: np.ndarray

    def __post_init__(self):
        for name in ("k1", "k2", "k3"):
            object.__setattr__(self, name, _vec(getattr(self, name)))

    @classmethod
    def from_array(cls, a) -> "KeypointTriple":
        a = np.asarray(a, dtype=np.float64).reshape(3, 3)
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.stack([self.k1, self.k2, self.k3])


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = _vec(self.translation)
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0, atol=atol)
        )


def rotation_from_keypoints(k: KeypointTriple) -> np.ndarray:
    v_x = k.k2 - k.k1
    v_z = k.k3 - k.k1
    if np.linalg.norm(v_x) < DEGENERACY_EPS or np.linalg.norm(v_z) < DEGENERACY_EPS:
        raise DegenerateKeypoints("keypoint markers coincide with the center")
    cross = np.cross(v_z, v_x)
    if np.linalg.norm(cross) < DEGENERACY_EPS:
        raise DegenerateKeypoints("x and z marker directions are parallel")
    z = normalize(v_z)
    y = normalize(cross)
    # every column is normalized so the result is exactly in SO(3)
    x = normalize(np.cross(y, z))
    return np.column_stack([x, y, z])


def pose_from_keypoints(k: KeypointTriple) -> Pose:
    return Pose(rotation_from_keypoints(k), k.k1)


def compose(a: Pose, b: Pose) -> Pose:
    """Return ``a * b`` (apply ``b`` first, then ``a``)."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def apply(p: Pose, v) -> np.ndarray:
    """Transform a point, or an (..., 3) array of points."""
    v = np.asarray(v, dtype=np.float64)
    return v @ p.rotation.T + p.translation


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    u = normalize(_vec(axis))
    k = np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def _wrap(a: float) -> float:
    # map into (-pi, pi]
    a = float(np.arctan2(np.sin(a), np.cos(a)))
    return np.pi if a <= -np.pi else a


def euler_to_rotation(e) -> np.ndarray:
    """Fixed-axis X, then Y, then Z: ``R = Rz(tz) @ Ry(ty) @ Rx(tx)``."""
    tx, ty, tz = _vec(e)
    return rot_z(tz) @ rot_y(ty) @ rot_x(tx)


def rotation_to_euler(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    s = -r[2, 0]
    if abs(r[2, 0]) >= 1.0 - GIMBAL_EPS:
        raise GimbalLock(f"pitch too close to +-pi/2 (R31={r[2, 0]:.12f})")
    ty = np.arcsin(np.clip(s, -1.0, 1.0))
    tx = np.arctan2(r[2, 1], r[2, 2])
    tz = np.arctan2(r[1, 0], r[0, 0])
    return np.array([_wrap(tx), _wrap(ty), _wrap(tz)])


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in radians."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def gaussian_confidence(x, p, sigma: float):
    """Gaussian weight of point(s) ``x`` around ``p``; works on (..., 3) arrays."""
    if not sigma > 0:
        raise InvalidSigma(f"sigma must be positive, got {sigma}")
    d2 = np.sum((np.asarray(x, dtype=np.float64) - _vec(p)) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * sigma**2))


def is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    r = np.asarray(r)
    return bool(
        np.max(np.abs(r.T @ r - np.eye(3))) < tol and abs(np.linalg.det(r) - 1.0) < tol
    )
