"""Forward and differential kinematics of DH-parameterized serial arms.

Rotations are chained as quaternions so that ``r(q)`` is continuous in ``q``
(no sign flips from matrix conversion), which keeps the rotation Jacobian
consistent with finite differences of ``fkm``.

Joint points follow the DH convention: the k-th joint (1-based) acts about the
z-axis of frame k-1, so ``joint_point(model, q, k)`` is the origin of frame k-1
and only joints 1..k-1 move it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .quatalg import (
    PureQuaternion,
    UnitQuaternion,
    hamilton_minus,
    vec4,
)

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


@dataclass(frozen=True)
class DHRow:
    theta_offset: float = 0.0
    d: float = 0.0
    a: float = 0.0
    alpha: float = 0.0
    kind: str = REVOLUTE

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.kind!r}")


@dataclass(frozen=True)
class Pose:
    r: UnitQuaternion
    t: PureQuaternion


@dataclass(frozen=True)
class SerialManipulator:
    """Serial chain: ``joints`` are actuated, ``tool`` rows are fixed distal transforms.

    Lengths in mm, angles in rad. ``base_rotation`` is a (w, x, y, z) unit
    quaternion and ``base_translation`` an (x, y, z) point, both in the world frame.
    """

    joints: Tuple[DHRow, ...]
    q_min: np.ndarray
    q_max: np.ndarray
    base_rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    base_translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    tool: Tuple[DHRow, ...] = ()
    name: str = "arm"

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "tool", tuple(self.tool))
        n = len(self.joints)
        if n < 1:
            raise ValueError("a manipulator needs at least one joint")
        q_min = np.asarray(self.q_min, dtype=float).reshape(-1)
        q_max = np.asarray(self.q_max, dtype=float).reshape(-1)
        if q_min.shape != (n,) or q_max.shape != (n,):
            raise ValueError("joint limits must have one entry per joint")
        if np.any(q_min >= q_max):
            raise ValueError("q_min must be strictly below q_max")
        q_min.setflags(write=False)
        q_max.setflags(write=False)
        object.__setattr__(self, "q_min", q_min)
        object.__setattr__(self, "q_max", q_max)
        UnitQuaternion(*self.base_rotation)  # validates the base rotation
        object.__setattr__(self, "base_rotation", tuple(float(v) for v in self.base_rotation))
        object.__setattr__(self, "base_translation", tuple(float(v) for v in self.base_translation))

    @property
    def n(self) -> int:
        return len(self.joints)

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other


@dataclass
class ChainState:
    """Everything the controller needs from one arm at one configuration.

    ``origins[k]`` is the origin of frame k (k = 0 is the base frame) and
    ``axes[k]`` its z-axis; index n is the flange, the last index the tool tip.
    """

    q: np.ndarray
    r: np.ndarray
    t: np.ndarray
    origins: np.ndarray
    axes: np.ndarray
    prismatic: np.ndarray
    _J_t: Optional[np.ndarray] = field(default=None, repr=False)
    _J_r: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def J_t(self) -> np.ndarray:
        if self._J_t is None:
            self._J_t = self.point_jacobian(self.t[1:], self.n)
        return self._J_t

    @property
    def J_r(self) -> np.ndarray:
        if self._J_r is None:
            n = self.n
            w = np.zeros((4, n))
            rev = ~self.prismatic
            w[1:, rev] = self.axes[:n][rev].T
            self._J_r = 0.5 * hamilton_minus(self.r) @ w
        return self._J_r

    def point_jacobian(self, p: np.ndarray, upto: int) -> np.ndarray:
        """4xn Jacobian of a point rigidly attached to frame ``upto``."""
        n = self.n
        J = np.zeros((4, n))
        if upto <= 0:
            return J
        z = self.axes[:upto]
        lever = p[None, :] - self.origins[:upto]
        cols = np.empty_like(lever)
        cols[:, 0] = z[:, 1] * lever[:, 2] - z[:, 2] * lever[:, 1]
        cols[:, 1] = z[:, 2] * lever[:, 0] - z[:, 0] * lever[:, 2]
        cols[:, 2] = z[:, 0] * lever[:, 1] - z[:, 1] * lever[:, 0]
        pri = self.prismatic[:upto]
        if pri.any():
            cols[pri] = z[pri]
        J[1:, :upto] = cols.T
        return J

    def joint_point(self, k: int) -> np.ndarray:
        return np.concatenate(([0.0], self.origins[k - 1]))

    def joint_point_jacobian(self, k: int) -> np.ndarray:
        return self.point_jacobian(self.origins[k - 1], k - 1)


def _frame_axes(w, x, y, z):
    """Columns x, y, z of the rotation matrix of the unit quaternion (w, x, y, z)."""
    return (
        (1 - 2 * (y * y + z * z), 2 * (x * y + w * z), 2 * (x * z - w * y)),
        (2 * (x * y - w * z), 1 - 2 * (x * x + z * z), 2 * (y * z + w * x)),
        (2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)),
    )


def chain_state(model: SerialManipulator, q) -> ChainState:
    q = np.asarray(q, dtype=float).reshape(-1)
    n = model.n
    if q.shape[0] != n:
        raise ValueError(f"expected {n} joint values, got {q.shape[0]}")
    rows = model.joints + model.tool
    qs = q.tolist()
    # scalar arithmetic: these chains are short and numpy call overhead dominates
    w, x, y, z = (float(v) for v in model.base_rotation)
    px, py, pz = (float(v) for v in model.base_translation)
    ax, ay, az = _frame_axes(w, x, y, z)
    origins = [(px, py, pz)]
    axes = [az]
    prismatic = np.zeros(n, dtype=bool)
    for i, row in enumerate(rows):
        theta, d = row.theta_offset, row.d
        if i < n:
            if row.kind == REVOLUTE:
                theta += qs[i]
            else:
                d += qs[i]
                prismatic[i] = True
        # translate d along current z, then a along the rotated x
        ct, st = math.cos(theta), math.sin(theta)
        a = row.a
        px += az[0] * d + (ax[0] * ct + ay[0] * st) * a
        py += az[1] * d + (ax[1] * ct + ay[1] * st) * a
        pz += az[2] * d + (ax[2] * ct + ay[2] * st) * a
        # r <- r * rot_z(theta) * rot_x(alpha)
        c2, s2 = math.cos(theta / 2.0), math.sin(theta / 2.0)
        ca, sa = math.cos(row.alpha / 2.0), math.sin(row.alpha / 2.0)
        bw, bx, by, bz = c2 * ca, c2 * sa, s2 * sa, s2 * ca
        w, x, y, z = (
            w * bw - x * bx - y * by - z * bz,
            w * bx + x * bw + y * bz - z * by,
            w * by - x * bz + y * bw + z * bx,
            w * bz + x * by - y * bx + z * bw,
        )
        ax, ay, az = _frame_axes(w, x, y, z)
        origins.append((px, py, pz))
        axes.append(az)
    return ChainState(q=q, r=np.array([w, x, y, z]), t=np.array([0.0, px, py, pz]),
                      origins=np.array(origins), axes=np.array(axes), prismatic=prismatic)


def fkm(model: SerialManipulator, q) -> Pose:
    s = chain_state(model, q)
    return Pose(UnitQuaternion.normalized(s.r), PureQuaternion.from_vec4(s.t))


def translation_jacobian(model: SerialManipulator, q) -> np.ndarray:
    return chain_state(model, q).J_t


def rotation_jacobian(model: SerialManipulator, q) -> np.ndarray:
    return chain_state(model, q).J_r


def _check_index(model: SerialManipulator, k: int):
    if not 1 <= k <= model.n:
        raise IndexError(f"joint index {k} outside 1..{model.n}")


def joint_point(model: SerialManipulator, q, k: int) -> PureQuaternion:
    _check_index(model, k)
    return PureQuaternion.from_vec4(chain_state(model, q).joint_point(k))


def joint_point_jacobian(model: SerialManipulator, q, k: int) -> np.ndarray:
    _check_index(model, k)
    return chain_state(model, q).joint_point_jacobian(k)


def dh_matrix(row: DHRow, qi: float = 0.0) -> np.ndarray:
    """Homogeneous 4x4 transform of one DH row; used as an independent check of ``fkm``."""
    theta = row.theta_offset + (qi if row.kind == REVOLUTE else 0.0)
    d = row.d + (qi if row.kind == PRISMATIC else 0.0)
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(row.alpha), math.sin(row.alpha)
    return np.array([
        [ct, -st * ca, st * sa, row.a * ct],
        [st, ct * ca, -ct * sa, row.a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def solve_tool_pose(model: SerialManipulator, q0, tip, direction, iters: int = 200,
                    tol: float = 1e-10, damping: float = 1e-4) -> np.ndarray:
    """Damped least-squares IK for a tip position plus a shaft direction.

    Used to place the arms at a configuration whose shaft passes through a given
    point; the spin about the shaft is left to the redundancy (stays near ``q0``).
    """
    q = np.asarray(q0, dtype=float).copy()
    tip = np.asarray(tip, dtype=float).reshape(3)
    direction = np.asarray(direction, dtype=float).reshape(3)
    direction = direction / np.linalg.norm(direction)
    from .quatalg import axis_z_jacobian, rotate_axis_z

    for _ in range(iters):
        s = chain_state(model, q)
        l = rotate_axis_z(s.r)[1:]
        err = np.concatenate((s.t[1:] - tip, l - direction))
        if np.linalg.norm(err) < tol:
            break
        J = np.vstack((s.J_t[1:], (axis_z_jacobian(s.r) @ s.J_r)[1:]))
        dq = -J.T @ np.linalg.solve(J @ J.T + damping * np.eye(6), err)
        q = q + dq
    return q
