"""Rigid-body primitives: rotations, poses, camera rays and pose rectification.

Conventions
-----------
- Quaternions are (w, x, y, z) and always unit length. Because q and -q
  encode the same rotation, every constructor canonicalizes the sign so the
  first nonzero component (in w, x, y, z order) is positive.
- Rotations act on column vectors: ``r.apply(v) == R @ v``.
- Pose composition ``a @ b`` applies b first, then a:
  ``(a @ b).apply(x) == a.apply(b.apply(x))``.
- Angles are radians, translations are meters, pixel quantities are pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRay, InvalidScale

_SQRT2 = math.sqrt(2.0)


def _canonical(q: np.ndarray) -> np.ndarray:
    """Flip the quaternion sign so the first nonzero component is positive."""
    for c in q:
        if c > 0.0:
            return q
        if c < 0.0:
            return -q
    raise ValueError("zero quaternion has no direction")


@dataclass(frozen=True, eq=False)
class Rotation:
    """A 3-D rotation stored as a canonical unit quaternion (w, x, y, z)."""

    q: np.ndarray

    def __init__(self, q) -> None:
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (4,):
            raise ValueError(f"quaternion must have shape (4,), got {q.shape}")
        n = math.sqrt(float(q @ q))
        if n == 0.0:
            raise ValueError("zero quaternion is not a rotation")
        if abs(n - 1.0) > 1e-12:  # skip noise-only renormalization: keeps
            q = q / n             # serialized quaternions bit-stable
        object.__setattr__(self, "q", _canonical(q))

    @staticmethod
    def identity() -> "Rotation":
        return Rotation((1.0, 0.0, 0.0, 0.0))

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("rotation axis must be nonzero")
        half = 0.5 * float(angle)
        return Rotation(np.concatenate(([math.cos(half)], math.sin(half) / n * axis)))

    @staticmethod
    def from_matrix(m) -> "Rotation":
        """Quaternion from a 3x3 rotation matrix (Shepperd's method)."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        t = np.trace(m)
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
                 (m[1, 0] - m[0, 1]) / s)
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s,
                 (m[0, 2] + m[2, 0]) / s)
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s,
                 (m[1, 2] + m[2, 1]) / s)
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                 (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return Rotation(q)

    @staticmethod
    def random(rng: np.random.Generator) -> "Rotation":
        """Uniform random rotation (normalized 4-D Gaussian)."""
        return Rotation(rng.standard_normal(4))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        xx, yy, zz = x * x, y * y, z * z
        wx, wy, wz = w * x, w * y, w * z
        xy, xz, yz = x * y, x * z, y * z
        return np.array([
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ])

    def compose(self, other: "Rotation") -> "Rotation":
        """self applied after other (matrix product R_self @ R_other)."""
        return Rotation(quat_multiply(self.q, other.q))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation((w, -x, -y, -z))

    def apply(self, pts) -> np.ndarray:
        """Rotate a (3,) vector or (n, 3) array of points."""
        pts = np.asarray(pts, dtype=np.float64)
        m = self.as_matrix()
        if pts.ndim == 1:
            return m @ pts
        return pts @ m.T

    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        w = abs(float(self.q[0]))
        v = math.sqrt(float(self.q[1:] @ self.q[1:]))
        return 2.0 * math.atan2(v, w)

    def __repr__(self) -> str:
        w, x, y, z = self.q
        return f"Rotation(({w:.9g}, {x:.9g}, {y:.9g}, {z:.9g}))"


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform: rotation then translation (meters)."""

    r: Rotation
    t: np.ndarray

    def __init__(self, r: Rotation, t) -> None:
        t = np.asarray(t, dtype=np.float64)
        if t.shape != (3,):
            raise ValueError(f"translation must have shape (3,), got {t.shape}")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(Rotation.identity(), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (R1 R2, R1 t2 + t1)."""
        return Pose(self.r @ other.r, self.r.apply(other.t) + self.t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rinv = self.r.inverse()
        return Pose(rinv, -rinv.apply(self.t))

    def apply(self, pts) -> np.ndarray:
        return self.r.apply(pts) + self.t

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r.as_matrix()
        m[:3, 3] = self.t
        return m

    def __repr__(self) -> str:
        return f"Pose(r={self.r!r}, t={np.array2string(self.t, precision=6)})"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point, all in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")


def geodesic_distance(r1: Rotation, r2: Rotation) -> float:
    """Geodesic rotation distance: half the Frobenius norm of log(R1^T R2).

    Equals theta / sqrt(2) for relative rotation angle theta in [0, pi];
    computed through the relative quaternion, which is exact and stable for
    all angles (no matrix logarithm needed). Arguments are ordered first so
    the result is bitwise symmetric.
    """
    a, b = (r1.q, r2.q) if tuple(r1.q) <= tuple(r2.q) else (r2.q, r1.q)
    q = quat_multiply(np.concatenate((a[:1], -a[1:])), b)
    w = abs(float(q[0]))
    v = math.sqrt(float(q[1:] @ q[1:]))
    theta = 2.0 * math.atan2(v, w)
    return theta / _SQRT2


def view_ray(x: float, y: float, k: CameraIntrinsics) -> np.ndarray:
    """Un-normalized ray through pixel (x, y): ((x-cx)/fx, (y-cy)/fy, 1)."""
    return np.array([(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0])


def rectification_rotation(v) -> Rotation:
    """Rotation whose rows are the rectified axes for view ray v.

    The third row is v normalized; the first row is the unit cross product
    of the image Y axis (0, 1, 0) with it, the second completes the frame.
    The result maps v/|v| onto (0, 0, 1). All rows are renormalized so the
    matrix is orthonormal even for oblique rays.

    Raises DegenerateRay for zero rays or rays parallel to (0, 1, 0).
    """
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DegenerateRay("view ray has zero length")
    z = v / n
    x = np.cross([0.0, 1.0, 0.0], z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise DegenerateRay("view ray is parallel to the image Y axis")
    x = x / nx
    y = np.cross(z, x)
    y = y / np.linalg.norm(y)
    return Rotation.from_matrix(np.stack([x, y, z]))


def rectify_pose(p: Pose, rv: Rotation) -> Pose:
    """Express pose p in the rectified (ray-aligned) frame: (Rv R, Rv T)."""
    return Pose(rv @ p.r, rv.apply(p.t))


def derectify_pose(p: Pose, rv: Rotation) -> Pose:
    """Exact inverse of rectify_pose."""
    rinv = rv.inverse()
    return Pose(rinv @ p.r, rinv.apply(p.t))


def rescale_depth(z: float, s_before: float, s_after: float) -> float:
    """Depth adjusted for an ROI rescale: z * s_after / s_before.

    Raises InvalidScale if either scale is non-positive.
    """
    if s_before <= 0.0 or s_after <= 0.0:
        raise InvalidScale(f"image scales must be positive, got {s_before} -> {s_after}")
    return z * s_after / s_before
