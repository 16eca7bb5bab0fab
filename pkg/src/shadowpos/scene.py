"""Eye-phantom geometry, the microscope-view model and start-up validation.

World frame: origin at the view center on the retina plane, z up. The
microscope looks straight down (orthographic), so a point's view coordinates
are its x and y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .geomvfi import VfiGains, arm_states, vitreo_terms
from .quatalg import vec4


class DegenerateRay(ValueError):
    """The light-guide tip is not above the instrument tip, so no shadow is cast."""


@dataclass(frozen=True)
class ViewPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("view coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance(self, other) -> float:
        o = other.as_array() if isinstance(other, ViewPoint) else np.asarray(other, dtype=float)[:2]
        return float(np.hypot(*(self.as_array() - o)))


def _p3(p) -> np.ndarray:
    return vec4(p)[1:]


@dataclass(frozen=True)
class EyeScene:
    """Static geometry of the phantom; lengths in mm."""

    eye_center: Tuple[float, float, float]
    retina_plane_z: float
    view_center: Tuple[float, float, float]
    r_ws: float
    rcm_R1: Tuple[float, float, float]
    rcm_R2: Tuple[float, float, float]
    robot_planes: Tuple[Tuple[Tuple[float, float, float], float], ...]
    theta_c2_safe: float = 0.5
    gains: VfiGains = field(default_factory=VfiGains)
    workspace_diameter: float = 7.0

    def __post_init__(self):
        for name in ("eye_center", "view_center", "rcm_R1", "rcm_R2"):
            v = tuple(float(c) for c in getattr(self, name))
            if len(v) != 3:
                raise ValueError(f"{name} needs 3 coordinates")
            object.__setattr__(self, name, v)
        planes = []
        for normal, offset in self.robot_planes:
            n = np.asarray(normal, dtype=float)
            if abs(np.linalg.norm(n) - 1.0) > 1e-9:
                raise ValueError("robot plane normals must be unit length")
            planes.append((tuple(float(c) for c in n), float(offset)))
        if len(planes) != 2:
            raise ValueError("one robot plane per arm is required")
        object.__setattr__(self, "robot_planes", tuple(planes))
        if self.r_ws <= 0:
            raise ValueError("r_ws must be positive")
        if not 0.0 < self.theta_c2_safe < math.pi / 2:
            raise ValueError("theta_c2_safe must lie in (0, pi/2)")
        for name in ("rcm_R1", "rcm_R2"):
            if getattr(self, name)[2] >= self.eye_center[2]:
                raise ValueError(f"{name} must lie below the eye centerline")
        if abs(self.view_center[2] - self.retina_plane_z) > 1e-12:
            raise ValueError("the view center must lie on the retina plane")

    @property
    def microscope_axis(self):
        return (np.array([0.0, 0.0, 0.0, 1.0]), vec4(self.view_center))

    def shadow_tip(self, t_lg, t_si) -> ViewPoint:
        return shadow_tip(t_lg, t_si, self.retina_plane_z)

    def view_distances(self, t_lg, t_si, shaft_dir) -> Tuple[float, float]:
        return view_distances(t_lg, t_si, shaft_dir, self.retina_plane_z)

    def in_workspace(self, xy, slack: float = 1e-9) -> bool:
        c = np.asarray(self.view_center[:2])
        return float(np.hypot(*(np.asarray(xy, dtype=float)[:2] - c))) <= self.workspace_diameter / 2 + slack


def shadow_tip(t_lg, t_si, retina_plane_z: float = 0.0) -> ViewPoint:
    """Point-light projection of the instrument tip onto the retina plane."""
    lg, si = _p3(t_lg), _p3(t_si)
    dz = lg[2] - si[2]
    if dz <= 0.0:
        raise DegenerateRay("light-guide tip must be above the instrument tip")
    s = (lg[2] - retina_plane_z) / dz
    xy = lg[:2] + s * (si[:2] - lg[:2])
    return ViewPoint(float(xy[0]), float(xy[1]))


def view_distances(t_lg, t_si, shaft_dir, retina_plane_z: float = 0.0) -> Tuple[float, float]:
    """(d_shaft, d_tip) in the view: shadow tip to the projected shaft and to
    the projected instrument tip.

    ``shaft_dir`` points along the shaft toward the tip, so the projected shaft
    is the half-line leaving the tip in the opposite direction; a shadow
    beyond the tip is nearest to the tip itself.
    """
    sh = shadow_tip(t_lg, t_si, retina_plane_z).as_array()
    tip = _p3(t_si)[:2]
    off = sh - tip
    d_tip = float(np.hypot(*off))
    l = _p3(shaft_dir)[:2]
    nl = float(np.hypot(*l))
    if nl < 1e-12:
        return d_tip, d_tip
    back = -l / nl
    if float(off @ back) <= 0.0:
        return d_tip, d_tip
    d_shaft = abs(float(off[0] * back[1] - off[1] * back[0]))
    return d_shaft, d_tip


# -- start-up validation ------------------------------------------------------

@dataclass
class ConstraintCheck:
    name: str
    margin: float
    passed: bool
    boundary: bool = False


@dataclass
class PremiseReport:
    checks: List[ConstraintCheck]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[ConstraintCheck]:
        return [c for c in self.checks if not c.passed]

    def margin(self, name: str) -> float:
        for c in self.checks:
            if c.name == name:
                return c.margin
        raise KeyError(name)


SAFE_KEYS = {"rcm_1": "D_R_safe", "rcm_2": "D_R_safe", "retina_2": "D_r_safe"}
RESTRICTED_KEYS = {
    "shaft_2": "D_s_safe", "trocar_1": "D_tr_safe", "trocar_2": "D_tr_safe",
    "micro_1": "D_m_safe", "micro_2": "D_m_safe",
}


def constraint_margins(scene: EyeScene, models, q, states=None, terms=None, ctx=None) -> dict:
    """Every constraint margin in natural units (mm, rad); negative means violated.

    Squared-distance zones are reported as distance differences, cones as
    angle differences, joint limits in rad.
    """
    from .shadowvfi import SingularConfiguration, c1_angles, c2_angle, context_from_states

    q = np.asarray(q, dtype=float)
    s1, s2 = states if states is not None else arm_states(models, q)
    if terms is None:
        terms = vitreo_terms(scene, models, q, (s1, s2))
    g = scene.gains
    out = {}
    for key, D in terms.D.items():
        if key in SAFE_KEYS:
            out[key] = math.sqrt(getattr(g, SAFE_KEYS[key])) - math.sqrt(max(D, 0.0))
        elif key in RESTRICTED_KEYS:
            out[key] = math.sqrt(max(D, 0.0)) - math.sqrt(getattr(g, RESTRICTED_KEYS[key]))
        else:
            out[key] = D - g.d_ro_margin
    out["tip"] = math.sqrt(g.D_tip_safe) - float(np.linalg.norm(s1.t - s2.t))
    for i, (m, s) in enumerate(zip(models, (s1, s2)), start=1):
        out[f"jl_{i}"] = float(min(np.min(s.q - m.q_min), np.min(m.q_max - s.q)))
    if ctx is None:
        ctx = context_from_states(s1, s2, scene)
    out["lg_above"] = float(min(-ctx.p_c[3], -ctx.p_R1[3]))
    if ctx.light_guide_above:
        try:
            th, th_safe = c1_angles(ctx)
            out["cone_view"] = th_safe - th
        except SingularConfiguration:
            out["cone_view"] = -math.inf
    else:
        out["cone_view"] = -math.inf
    out["cone_light"] = scene.theta_c2_safe - c2_angle(ctx)
    return out


def validate_premise_iii(scene: EyeScene, models, q0, tol: float = 0.0) -> PremiseReport:
    """Check that every constraint holds at ``q0``; margins exactly zero pass as boundary."""
    margins = constraint_margins(scene, models, q0)
    checks = []
    for name, m in margins.items():
        if name == "lg_above":
            passed = m > 0.0
        else:
            passed = m >= -tol
        checks.append(ConstraintCheck(name, m, passed, boundary=passed and m == 0.0))
    return PremiseReport(checks)
