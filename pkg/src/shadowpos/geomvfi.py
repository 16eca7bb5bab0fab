"""Distance functions, their Jacobians, and vector-field-inequality rows.

All points and directions are 4-vectors (pure quaternions, leading zero) and
all Jacobians are 4 x m blocks over the *stacked* joint vector of both arms,
so rows from different primitives can be stacked without re-indexing. A
``None`` Jacobian means the primitive is static.

Safe zones keep a squared distance below its safe value, restricted zones keep
it above; the right-hand sides use the static-primitive form (no residual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .kinematics import ChainState, chain_state
from .quatalg import axis_z_jacobian, rotate_axis_z, vec4


@dataclass
class ConstraintRows:
    """Stacked linear inequalities ``W u <= w`` with one label per row."""

    W: np.ndarray
    w: np.ndarray
    labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.w = np.asarray(self.w, dtype=float).reshape(-1)
        if self.W.shape[0] != self.w.shape[0]:
            raise ValueError(f"row count mismatch: W has {self.W.shape[0]}, w has {self.w.shape[0]}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.w))):
            raise ValueError("constraint rows contain non-finite entries")
        if not self.labels:
            self.labels = [""] * self.w.shape[0]
        elif len(self.labels) != self.w.shape[0]:
            raise ValueError("one label per row required")

    def __len__(self):
        return self.w.shape[0]

    @classmethod
    def empty(cls, m: int) -> "ConstraintRows":
        return cls(np.zeros((0, m)), np.zeros(0), [])

    @classmethod
    def stack(cls, *blocks: "ConstraintRows") -> "ConstraintRows":
        blocks = [b for b in blocks if b is not None]
        return cls(
            np.vstack([b.W for b in blocks]),
            np.concatenate([b.w for b in blocks]),
            [lab for b in blocks for lab in b.labels],
        )

    def slack(self, u) -> np.ndarray:
        return self.w - self.W @ np.asarray(u, dtype=float)


@dataclass(frozen=True)
class VfiGains:
    """Gains (1/s) and squared safe distances (mm^2) of every VFI row."""

    eta_R: float = 0.01
    eta_r: float = 0.01
    eta_s: float = 1.0
    eta_tr: float = 0.01
    eta_m: float = 1.0
    eta_ro: float = 1.0
    eta_tip: float = 0.01
    eta_1: float = 0.1
    eta_2: float = 0.1
    D_R_safe: float = 0.5 ** 2
    D_r_safe: float = 10.0 ** 2
    D_s_safe: float = 0.5 ** 2
    D_tr_safe: float = 5.0 ** 2
    D_m_safe: float = 60.0 ** 2
    D_tip_safe: float = 10.0 ** 2
    d_ro_margin: float = 0.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"{k} must be nonnegative, got {v}")


# -- distances ---------------------------------------------------------------

def _J(J, m):
    return np.zeros((4, m)) if J is None else J


def _width(*Js) -> int:
    for J in Js:
        if J is not None:
            return J.shape[1]
    return 0


def dist_pp_sq(p1, p2, J1=None, J2=None) -> Tuple[float, np.ndarray]:
    """Squared point-to-point distance and its 1 x m Jacobian."""
    v = vec4(p1) - vec4(p2)
    m = _width(J1, J2)
    D = float(v @ v)
    return D, 2.0 * v @ (_J(J1, m) - _J(J2, m))


def _point_line(v, l, Jv, Jl):
    # v = p - p0, |l| = 1. D = |w|^2 with w = v - <v,l> l; this avoids the
    # cancellation in |v|^2 - <v,l>^2 when the point sits on the line
    vl = float(v @ l)
    w = v - vl * l
    D = float(w @ w)
    J = 2.0 * w @ Jv
    if Jl is not None:
        # l . dl = 0 for a unit direction, so v . dl = w . dl
        J = J - 2.0 * vl * (w @ Jl)
    return D, J


def dist_point_line_sq(p, line, J_p=None, J_l=None, J_p0=None) -> Tuple[float, np.ndarray]:
    """Squared distance from ``p`` to the line ``(direction, point)``.

    ``J_l`` and ``J_p0`` are the Jacobians of the line direction and of its
    point when the line moves with the robots.
    """
    l, p0 = vec4(line[0]), vec4(line[1])
    nl = math.sqrt(float(l @ l))
    if nl < 1e-12:
        raise ValueError("line direction has zero length")
    if abs(nl - 1.0) > 1e-9:
        if J_l is not None:
            raise ValueError("moving line directions must be unit length")
        l = l / nl
    m = _width(J_p, J_l, J_p0)
    Jv = _J(J_p, m) - _J(J_p0, m)
    return _point_line(vec4(p) - p0, l, Jv, J_l)


def dist_line_point_sq(r, t, p_static, J_t, J_r) -> Tuple[float, np.ndarray]:
    """Squared distance from a static point to the shaft line through ``t``
    with direction ``r k r*``; differentiates through both ``t`` and ``r``."""
    r = vec4(r)
    l = rotate_axis_z(r)
    J_l = axis_z_jacobian(r) @ J_r
    return _point_line(vec4(p_static) - vec4(t), l, -J_t, J_l)


def dist_point_plane(p, plane, J_p=None) -> Tuple[float, np.ndarray]:
    """Signed distance from ``p`` to the plane ``(unit normal, offset)``."""
    n = vec4(plane[0])
    d_off = float(plane[1])
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("plane normal must be unit length")
    d = float(n @ vec4(p)) - d_off
    J = n @ J_p if J_p is not None else np.zeros(0)
    return d, J


# -- rows ----------------------------------------------------------------------

def vfi_safe_row(J_D, D, D_safe, eta, label="") -> ConstraintRows:
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    return ConstraintRows(np.atleast_2d(J_D), [eta * (D_safe - D)], [label])


def vfi_restricted_row(J_D, D, D_safe, eta, label="") -> ConstraintRows:
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    return ConstraintRows(-np.atleast_2d(J_D), [eta * (D - D_safe)], [label])


def joint_limit_rows(q, q_min, q_max) -> ConstraintRows:
    """Box rows ``[-I; I] u <= [q - q_min; q_max - q]``."""
    q = np.asarray(q, dtype=float).reshape(-1)
    n = q.shape[0]
    I = np.eye(n)
    labels = [f"jl_min_{i + 1}" for i in range(n)] + [f"jl_max_{i + 1}" for i in range(n)]
    return ConstraintRows(
        np.vstack((-I, I)),
        np.concatenate((q - np.asarray(q_min), np.asarray(q_max) - q)),
        labels,
    )


def _embed(J_local, offset, m):
    J = np.zeros((J_local.shape[0], m))
    J[:, offset:offset + J_local.shape[1]] = J_local
    return J


@dataclass
class VitreoTerms:
    """Raw distances behind each vitreoretinal row, kept for logging and audits."""

    D: dict
    rows: ConstraintRows


def arm_states(models, q) -> Tuple[ChainState, ChainState]:
    n1 = models[0].n
    q = np.asarray(q, dtype=float)
    return chain_state(models[0], q[:n1]), chain_state(models[1], q[n1:])


def _plane_block(s: ChainState, plane, off: int, m: int):
    """Signed distances of joint points 2..n to ``plane`` and their Jacobians, vectorized."""
    n = s.n
    nv = np.asarray(plane[0], dtype=float)
    pts = s.origins[1:n]                      # joint_point(k) for k = 2..n
    d = pts @ nv - float(plane[1])
    # d/dq_j of nv . o_{k-1} = nv . (z_j x (o_{k-1} - o_j)) = (o_{k-1} - o_j) . (nv x z_j)
    z = s.axes[:n - 1]
    A = np.empty_like(z)                      # rows nv x z_j
    A[:, 0] = nv[1] * z[:, 2] - nv[2] * z[:, 1]
    A[:, 1] = nv[2] * z[:, 0] - nv[0] * z[:, 2]
    A[:, 2] = nv[0] * z[:, 1] - nv[1] * z[:, 0]
    J = pts @ A.T - (s.origins[:n - 1] * A).sum(axis=1)[None, :]
    J = np.tril(J)                            # joint j moves o_{k-1} only when j < k - 1
    pri = s.prismatic[:n - 1]
    if pri.any():
        Jp = np.tril(np.ones((n - 1, n - 1))) * (s.axes[:n - 1] @ nv)[None, :]
        J[:, pri] = Jp[:, pri]
    out = np.zeros((n - 1, m))
    out[:, off:off + n - 1] = J
    return d, out


def vitreo_terms(scene, models, q, states=None) -> VitreoTerms:
    m1, m2 = models
    n1, n2 = m1.n, m2.n
    m = n1 + n2
    q = np.asarray(q, dtype=float)
    s1, s2 = states if states is not None else arm_states(models, q)
    g = scene.gains

    Jt1 = _embed(s1.J_t, 0, m)
    Jt2 = _embed(s2.J_t, n1, m)
    Jr1 = _embed(s1.J_r, 0, m)
    Jr2 = _embed(s2.J_r, n1, m)
    n_rows = 8 + (n1 - 1) + (n2 - 1) + 2 * m
    W = np.zeros((n_rows, m))
    w = np.zeros(n_rows)
    labels = []
    D = {}

    def put(i, key, val, J, D_safe, eta, safe):
        D[key] = val
        if safe:
            W[i], w[i] = J, eta * (D_safe - val)
        else:
            W[i], w[i] = -J, eta * (val - D_safe)
        labels.append(key)

    val, J = dist_line_point_sq(s1.r, s1.t, scene.rcm_R1, Jt1, Jr1)
    put(0, "rcm_1", val, J, g.D_R_safe, g.eta_R, True)
    val, J = dist_line_point_sq(s2.r, s2.t, scene.rcm_R2, Jt2, Jr2)
    put(1, "rcm_2", val, J, g.D_R_safe, g.eta_R, True)
    val, J = dist_pp_sq(s2.t, scene.eye_center, Jt2)
    put(2, "retina_2", val, J, g.D_r_safe, g.eta_r, True)

    l1 = rotate_axis_z(s1.r)
    Jl1 = axis_z_jacobian(s1.r) @ Jr1
    val, J = dist_point_line_sq(s2.t, (l1, s1.t), Jt2, Jl1, Jt1)
    put(3, "shaft_2", val, J, g.D_s_safe, g.eta_s, False)
    val, J = dist_pp_sq(s1.t, scene.rcm_R1, Jt1)
    put(4, "trocar_1", val, J, g.D_tr_safe, g.eta_tr, False)
    val, J = dist_pp_sq(s2.t, scene.rcm_R2, Jt2)
    put(5, "trocar_2", val, J, g.D_tr_safe, g.eta_tr, False)

    axis = scene.microscope_axis
    for i, (s, off, n) in enumerate(((s1, 0, n1), (s2, n1, n2)), start=1):
        Jp = _embed(s.joint_point_jacobian(n), off, m)
        val, J = dist_point_line_sq(s.joint_point(n), axis, Jp)
        put(5 + i, f"micro_{i}", val, J, g.D_m_safe, g.eta_m, False)

    r = 8
    for i, (s, off, n) in enumerate(((s1, 0, n1), (s2, n1, n2)), start=1):
        d, J = _plane_block(s, scene.robot_planes[i - 1], off, m)
        W[r:r + n - 1] = -J
        w[r:r + n - 1] = g.eta_ro * (d - g.d_ro_margin)
        for k in range(2, n + 1):
            key = f"plane_{i}_{k}"
            D[key] = float(d[k - 2])
            labels.append(key)
        r += n - 1

    for i, (s, mod, off, n) in enumerate(((s1, m1, 0, n1), (s2, m2, n1, n2)), start=1):
        idx = np.arange(n)
        W[r + idx, off + idx] = -1.0
        w[r:r + n] = s.q - mod.q_min
        W[r + n + idx, off + idx] = 1.0
        w[r + n:r + 2 * n] = mod.q_max - s.q
        labels += [f"r{i}_jl_min_{j + 1}" for j in range(n)] + [f"r{i}_jl_max_{j + 1}" for j in range(n)]
        r += 2 * n
    return VitreoTerms(D, ConstraintRows(W, w, labels))


def build_vitreo_constraints(scene, models, q, states=None) -> ConstraintRows:
    """Rows in the order RCM-1, RCM-2, retina-2, shaft-2, trocar-1, trocar-2,
    micro-1, micro-2, robot-plane rows (arm 1 joints 2..n1, then arm 2), then
    joint limits (arm 1 lower, upper, arm 2 lower, upper)."""
    return vitreo_terms(scene, models, q, states).rows
