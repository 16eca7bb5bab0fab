"""Shadow-visibility constraints for the instrument/light-guide pair.

Geometry is expressed relative to the light-guide tip: ``p_R1`` is the
instrument tip and ``p_c`` the view center, both seen from the light guide.
Every Jacobian here is 4 x (n1 + n2) (or 1 x (n1 + n2) for scalars) over the
stacked joint vector, arm 1 (instrument) first.

Two conical zones are built:

* view cone (C1): the instrument tip must stay inside the cone spanned by the
  light-guide tip and the view circle of radius ``r_ws`` on the retina plane,
  which is exactly the condition for its shadow to fall inside the circle;
* illumination cone (C2): the instrument tip must stay within
  ``theta_c2_safe`` of the light-guide axis.

Both are written as differences of squared products so they are smooth
everywhere the context is defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .geomvfi import ConstraintRows, dist_pp_sq, vfi_safe_row
from .quatalg import axis_z_jacobian, cross_matrix, rotate_axis_z, vec4

K4 = np.array([0.0, 0.0, 0.0, 1.0])

# Remark-2 floor on |p_a - p_R1|: 10 um expressed in mm
EDGE_CLAMP = 0.010


class SingularConfiguration(ValueError):
    """Raised where a shadow quantity is undefined (vertical shaft, light guide at retina height)."""


@dataclass
class ShadowContext:
    """Shared per-tick quantities; build with :func:`shadow_context`."""

    p_c: np.ndarray
    p_R1: np.ndarray
    J_c: np.ndarray
    J_R1: np.ndarray
    r_ws: float
    theta_c2_safe: float
    r_R1: np.ndarray
    J_r1: np.ndarray
    r_R2: np.ndarray
    J_r2: np.ndarray
    # filled lazily
    _edge: Optional[tuple] = None
    _normal: Optional[tuple] = None

    @property
    def m(self) -> int:
        return self.J_R1.shape[1]

    @property
    def light_guide_above(self) -> bool:
        return self.p_c[3] < 0.0 and self.p_R1[3] < 0.0

    def edge(self):
        if self._edge is None:
            self._edge = _edge_point(self)
        return self._edge

    def normal(self):
        if self._normal is None:
            self._normal = unit_plane_normal(self.r_R1, self.J_r1)
        return self._normal


def shadow_context(t_R1, t_R2, J_t1, J_t2, r_R1, J_r1, r_R2, J_r2, view_center,
                   r_ws: float, theta_c2_safe: float) -> ShadowContext:
    """Assemble the context from both arms' tip poses.

    ``J_t1``/``J_r1`` are 4 x n1 and ``J_t2``/``J_r2`` are 4 x n2.
    """
    n1, n2 = J_t1.shape[1], J_t2.shape[1]
    m = n1 + n2
    t1, t2 = vec4(t_R1), vec4(t_R2)
    J_R1 = np.zeros((4, m))
    J_R1[:, :n1] = J_t1
    J_R1[:, n1:] = -J_t2
    J_c = np.zeros((4, m))
    J_c[:, n1:] = -J_t2
    Jr1 = np.zeros((4, m))
    Jr1[:, :n1] = J_r1
    Jr2 = np.zeros((4, m))
    Jr2[:, n1:] = J_r2
    return ShadowContext(
        p_c=vec4(view_center) - t2, p_R1=t1 - t2, J_c=J_c, J_R1=J_R1,
        r_ws=float(r_ws), theta_c2_safe=float(theta_c2_safe),
        r_R1=vec4(r_R1), J_r1=Jr1, r_R2=vec4(r_R2), J_r2=Jr2,
    )


def context_from_states(s1, s2, scene) -> ShadowContext:
    return shadow_context(s1.t, s2.t, s1.J_t, s2.J_t, s1.r, s1.J_r, s2.r, s2.J_r,
                          scene.view_center, scene.r_ws, scene.theta_c2_safe)


# -- overlap-prevention distance ----------------------------------------------

def unit_plane_normal(r_R1, J_r1) -> Tuple[np.ndarray, np.ndarray]:
    """Unit normal of the plane holding the vertical and the instrument shaft.

    ``J_r1`` may be 4 x n1 or already embedded in 4 x (n1 + n2); the returned
    Jacobian has the same width.
    """
    r = vec4(r_R1)
    l = rotate_axis_z(r)
    n = np.array([0.0, l[2], -l[1], 0.0])  # l x k
    nn = math.sqrt(n[1] * n[1] + n[2] * n[2])
    if nn < 1e-9:
        raise SingularConfiguration("instrument shaft is vertical; overlap plane undefined")
    J_n = cross_matrix(K4).T @ axis_z_jacobian(r) @ J_r1
    u1 = np.eye(4) / nn - np.outer(n, n) / nn ** 3
    return n / nn, u1 @ J_n


def d_op(ctx: ShadowContext, u_pi=None) -> Tuple[float, np.ndarray]:
    """Signed distance between the light-guide tip and the overlap plane."""
    if u_pi is None:
        u, J_u = ctx.normal()
    else:
        u, J_u = u_pi
    d = float(u @ ctx.p_R1)
    J = u @ ctx.J_R1 + ctx.p_R1 @ J_u
    return d, J


# -- view cone (C1) --------------------------------------------------------------

def _edge_point(ctx: ShadowContext):
    p_c, p, J_c, J_p = ctx.p_c, ctx.p_R1, ctx.J_c, ctx.J_R1
    cz = p_c[3]
    if abs(cz) < 1e-12:
        raise SingularConfiguration("light-guide tip at retina height")
    a1 = p[3] / cz
    J_a1 = J_p[3] / cz - p[3] * J_c[3] / (cz * cz)
    p_a = a1 * p_c
    J_a = np.outer(p_c, J_a1) + a1 * J_c
    # edge point on the same side of the view center as the tip's shadow
    h7 = p - p_a
    J_h7 = J_p - J_a
    nh = math.sqrt(float(h7 @ h7))
    clamped = nh < EDGE_CLAMP
    if clamped:
        a2 = h7 / EDGE_CLAMP
        J_a2 = J_h7 / EDGE_CLAMP
    else:
        a2 = h7 / nh
        J_a2 = J_h7 / nh - np.outer(h7, h7 @ J_h7) / nh ** 3
    p_e = p_c + a2 * ctx.r_ws
    J_e = J_c + ctx.r_ws * J_a2
    return dict(a1=a1, J_a1=J_a1, p_a=p_a, J_a=J_a, a2=a2, J_a2=J_a2,
                p_e=p_e, J_e=J_e, clamped=clamped)


def edge_point(ctx: ShadowContext) -> Tuple[np.ndarray, np.ndarray]:
    e = ctx.edge()
    return e["p_e"], e["J_e"]


def c1_pair(ctx: ShadowContext):
    """(d_C1, d_C1_safe, J_C1, J_C1_safe); inside the view cone iff d_C1 >= d_C1_safe."""
    p_c, p, J_c, J_p = ctx.p_c, ctx.p_R1, ctx.J_c, ctx.J_R1
    p_e, J_e = edge_point(ctx)
    h1 = float(p_e @ p_e)
    cp = float(p_c @ p)
    h2 = cp * cp
    J_h1 = 2.0 * p_e @ J_e
    J_h2 = 2.0 * cp * (p @ J_c + p_c @ J_p)
    h3 = float(p @ p)
    ce = float(p_c @ p_e)
    h4 = ce * ce
    J_h3 = 2.0 * p @ J_p
    J_h4 = 2.0 * ce * (p_e @ J_c + p_c @ J_e)
    return h1 * h2, h3 * h4, h2 * J_h1 + h1 * J_h2, h4 * J_h3 + h3 * J_h4


# -- illumination cone (C2) ---------------------------------------------------

def c2_pair(ctx: ShadowContext, r_R2=None, J_r2=None):
    """(d_C2, d_C2_safe, J_C2, J_C2_safe); inside the illumination cone iff d_C2 >= d_C2_safe."""
    r = ctx.r_R2 if r_R2 is None else vec4(r_R2)
    Jr = ctx.J_r2 if J_r2 is None else J_r2
    if Jr.shape[1] != ctx.m:
        Jfull = np.zeros((4, ctx.m))
        Jfull[:, ctx.m - Jr.shape[1]:] = Jr
        Jr = Jfull
    p, J_p = ctx.p_R1, ctx.J_R1
    l = rotate_axis_z(r)
    J_l = axis_z_jacobian(r) @ Jr
    lp = float(l @ p)
    d = lp * lp
    J = 2.0 * lp * (p @ J_l + l @ J_p)
    cos2 = math.cos(ctx.theta_c2_safe) ** 2
    h8 = float(l @ l)
    h9 = float(p @ p)
    J_h8 = 2.0 * l @ J_l
    J_h9 = 2.0 * p @ J_p
    return d, h8 * h9 * cos2, J, (h9 * J_h8 + h8 * J_h9) * cos2


# -- angles (independent of the squared formulation; used for audits) ---------

def _angle(a, b) -> float:
    c = float(a @ b) / math.sqrt(float(a @ a) * float(b @ b))
    return math.acos(max(-1.0, min(1.0, c)))


def c1_angles(ctx: ShadowContext) -> Tuple[float, float]:
    """(theta_C1, theta_C1_safe) from normalized dot products."""
    p_e, _ = edge_point(ctx)
    return _angle(ctx.p_R1, ctx.p_c), _angle(ctx.p_c, p_e)


def c2_angle(ctx: ShadowContext) -> float:
    return _angle(rotate_axis_z(ctx.r_R2), ctx.p_R1)


# -- rows ----------------------------------------------------------------------

def tip_row(t_R1, t_R2, J_t2, gains, n1: Optional[int] = None) -> ConstraintRows:
    """Safe zone keeping the light-guide tip near the instrument tip.

    Acts on the light-guide joints only; with ``n1`` given the row is padded
    to the stacked joint vector.
    """
    D, J = dist_pp_sq(t_R2, t_R1, J_t2)
    if n1 is not None:
        J = np.concatenate((np.zeros(n1), J))
    return vfi_safe_row(J, D, gains.D_tip_safe, gains.eta_tip, "tip")


def shadow_rows(ctx: ShadowContext, t_R1, t_R2, J_t2, gains, n1: int) -> ConstraintRows:
    d1, d1s, J1, J1s = c1_pair(ctx)
    d2, d2s, J2, J2s = c2_pair(ctx)
    cone = ConstraintRows(
        np.vstack((-(J1 - J1s), -(J2 - J2s))),
        [gains.eta_1 * (d1 - d1s), gains.eta_2 * (d2 - d2s)],
        ["cone_view", "cone_light"],
    )
    return ConstraintRows.stack(cone, tip_row(t_R1, t_R2, J_t2, gains, n1))


def build_shadow_constraints(scene, models, q, states=None, ctx=None) -> ConstraintRows:
    """Rows [view cone; illumination cone; tip distance] over the stacked joints."""
    from .geomvfi import arm_states

    s1, s2 = states if states is not None else arm_states(models, q)
    if ctx is None:
        ctx = context_from_states(s1, s2, scene)
    return shadow_rows(ctx, s1.t, s2.t, s2.J_t, scene.gains, s1.n)
