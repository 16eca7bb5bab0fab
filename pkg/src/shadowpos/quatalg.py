"""Quaternion algebra and the matrix operators used by the Jacobian derivations.

Component order is fixed as (scalar, i, j, k) everywhere. The value types are
immutable; the hot paths of the controller work directly on 4-vectors, so every
operator here accepts either a quaternion object or anything array-like of
length 4 (length 3 is read as a pure quaternion).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("w", "x", "y", "z"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"quaternion component {name} is not finite: {v}")
            object.__setattr__(self, name, v)

    @classmethod
    def from_vec4(cls, v) -> "Quaternion":
        v = np.asarray(v, dtype=float).reshape(4)
        return cls(v[0], v[1], v[2], v[3])

    def vec4(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec4()))

    def conj(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def real(self) -> float:
        return self.w

    def imag(self) -> "PureQuaternion":
        return PureQuaternion(self.x, self.y, self.z)

    def __add__(self, other):
        return _wrap(self.vec4() + vec4(other))

    def __sub__(self, other):
        return _wrap(self.vec4() - vec4(other))

    def __neg__(self):
        return _wrap(-self.vec4())

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return _wrap(self.vec4() * float(other))
        return _wrap(qmul(self.vec4(), vec4(other)))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return _wrap(self.vec4() * float(other))
        return NotImplemented

    def __truediv__(self, s: float):
        return _wrap(self.vec4() / float(s))

    def isclose(self, other, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.vec4() - vec4(other))) <= tol)


class PureQuaternion(Quaternion):
    """Quaternion whose real part is structurally zero; used for points and directions."""

    def __init__(self, x: float, y: float, z: float):
        super().__init__(0.0, x, y, z)

    @classmethod
    def from_vec3(cls, v) -> "PureQuaternion":
        v = np.asarray(v, dtype=float).reshape(3)
        return cls(v[0], v[1], v[2])

    @classmethod
    def from_vec4(cls, v) -> "PureQuaternion":
        v = np.asarray(v, dtype=float).reshape(4)
        return cls(v[1], v[2], v[3])

    def vec3(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def __repr__(self):
        return f"PureQuaternion(x={self.x!r}, y={self.y!r}, z={self.z!r})"


class UnitQuaternion(Quaternion):
    """Rotation quaternion; the norm is checked to within ``UNIT_TOL`` on construction."""

    def __init__(self, w: float, x: float, y: float, z: float):
        super().__init__(w, x, y, z)
        n = math.sqrt(self.w ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)
        if abs(n - 1.0) > UNIT_TOL:
            raise ValueError(f"not a unit quaternion (norm={n!r})")

    @classmethod
    def from_vec4(cls, v) -> "UnitQuaternion":
        v = np.asarray(v, dtype=float).reshape(4)
        return cls(v[0], v[1], v[2], v[3])

    @classmethod
    def normalized(cls, v) -> "UnitQuaternion":
        """Build from an arbitrary nonzero 4-vector, renormalizing first."""
        v = vec4(v)
        n = np.linalg.norm(v)
        if n < 1e-15:
            raise ValueError("cannot normalize a zero quaternion")
        return cls.from_vec4(v / n)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        a = np.asarray(axis, dtype=float).reshape(-1)[-3:]
        a = a / np.linalg.norm(a)
        s = math.sin(angle / 2.0)
        return cls.normalized([math.cos(angle / 2.0), a[0] * s, a[1] * s, a[2] * s])

    def __repr__(self):
        return f"UnitQuaternion(w={self.w!r}, x={self.x!r}, y={self.y!r}, z={self.z!r})"


QuaternionLike = Union[Quaternion, np.ndarray, list, tuple, float, int]


def _wrap(v: np.ndarray) -> Quaternion:
    return Quaternion(v[0], v[1], v[2], v[3])


def vec4(h: QuaternionLike) -> np.ndarray:
    """Return (w, x, y, z) as a float array. Scalars map to real quaternions and
    3-vectors to pure quaternions."""
    if type(h) is np.ndarray and h.shape == (4,) and h.dtype == np.float64:
        return h
    if isinstance(h, Quaternion):
        return h.vec4()
    if isinstance(h, (int, float)):
        return np.array([float(h), 0.0, 0.0, 0.0])
    v = np.asarray(h, dtype=float).reshape(-1)
    if v.shape[0] == 3:
        return np.array([0.0, v[0], v[1], v[2]])
    if v.shape[0] != 4:
        raise ValueError(f"expected 3 or 4 components, got {v.shape[0]}")
    return v


def unvec4(v) -> Quaternion:
    return Quaternion.from_vec4(v)


def qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of two 4-vectors."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def hamilton_plus(h: QuaternionLike) -> np.ndarray:
    """H+ with vec4(h h') = H+(h) vec4(h')."""
    w, x, y, z = vec4(h)
    return np.array([
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ])


def hamilton_minus(h: QuaternionLike) -> np.ndarray:
    """H- with vec4(h' h) = H-(h) vec4(h')."""
    w, x, y, z = vec4(h)
    return np.array([
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ])


C4 = np.diag([1.0, -1.0, -1.0, -1.0])
C4.setflags(write=False)


def conj_matrix() -> np.ndarray:
    return C4.copy()


def conj(h: QuaternionLike):
    if isinstance(h, Quaternion):
        return h.conj()
    return C4 @ vec4(h)


def cross_matrix(h: QuaternionLike) -> np.ndarray:
    """4x4 cross-product operator: vec4(a x b) = cross_matrix(a) vec4(b)."""
    _, x, y, z = vec4(h)
    return np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, -z, y],
        [0.0, z, 0.0, -x],
        [0.0, -y, x, 0.0],
    ])


def cross(a: QuaternionLike, b: QuaternionLike):
    va, vb = vec4(a), vec4(b)
    c = np.cross(va[1:], vb[1:])
    if isinstance(a, Quaternion) or isinstance(b, Quaternion):
        return PureQuaternion(c[0], c[1], c[2])
    return np.array([0.0, c[0], c[1], c[2]])


def dot(a: QuaternionLike, b: QuaternionLike) -> float:
    """Inner product between pure quaternions (the real parts are ignored)."""
    va, vb = vec4(a), vec4(b)
    return float(va[1] * vb[1] + va[2] * vb[2] + va[3] * vb[3])


def rotate(r: QuaternionLike, p: QuaternionLike) -> np.ndarray:
    """r p r* as a 4-vector."""
    vr = vec4(r)
    return qmul(qmul(vr, vec4(p)), C4 @ vr)


_K = np.array([0.0, 0.0, 0.0, 1.0])


def rotate_axis_z(r: QuaternionLike):
    """Body z-axis expressed in the world frame, r k r*."""
    w, x, y, z = vec4(r)
    v = np.array([0.0, 2.0 * (x * z + w * y), 2.0 * (y * z - w * x), w * w - x * x - y * y + z * z])
    if isinstance(r, Quaternion):
        return PureQuaternion(v[1], v[2], v[3])
    return v


def axis_z_jacobian(r: np.ndarray) -> np.ndarray:
    """Matrix H with vec4(d/dt (r k r*)) = H vec4(dr/dt).

    Closed form of H^-(k r*) + H^+(r k) C4.
    """
    w, x, y, z = vec4(r)
    return 2.0 * np.array([
        [0.0, 0.0, 0.0, 0.0],
        [y, z, w, x],
        [-x, -w, z, y],
        [w, -x, -y, z],
    ])


def renormalize(r: QuaternionLike) -> UnitQuaternion:
    return UnitQuaternion.normalized(r)


def rotation_matrix(r: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix of a unit 4-vector."""
    w, x, y, z = r
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


I_HAT = PureQuaternion(1.0, 0.0, 0.0)
J_HAT = PureQuaternion(0.0, 1.0, 0.0)
K_HAT = PureQuaternion(0.0, 0.0, 1.0)
