"""Three-step positioning state machine and its fixed-rate simulation loop.

Phases: Planar (move the instrument tip over the target at constant height),
OverlapPrevention (push the light guide sideways until the shadow separates
from the shaft), Vertical (descend until the shadow tip meets the instrument
tip), Additional (a short open-loop descent computed from the remaining shadow
gap). Each tick builds one QP from the current configuration, integrates
``q += u / sample_rate`` and checks the phase transitions.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import qpsolve
from .geomvfi import ConstraintRows, arm_states, vitreo_terms
from .qpsolve import QpProblem
from .scene import DegenerateRay, EyeScene, constraint_margins, shadow_tip, view_distances
from .quatalg import rotate_axis_z, vec4
from .shadowvfi import (
    SingularConfiguration,
    c1_angles,
    c2_angle,
    context_from_states,
    d_op,
    shadow_rows,
)

log = logging.getLogger(__name__)


class Phase(str, enum.Enum):
    PLANAR = "Planar"
    OVERLAP = "OverlapPrevention"
    VERTICAL = "Vertical"
    ADDITIONAL = "Additional"
    DONE = "Done"
    FAILED = "Failed"


ALLOWED = {
    Phase.PLANAR: {Phase.OVERLAP, Phase.VERTICAL, Phase.FAILED},
    Phase.OVERLAP: {Phase.VERTICAL, Phase.FAILED},
    Phase.VERTICAL: {Phase.ADDITIONAL, Phase.FAILED},
    Phase.ADDITIONAL: {Phase.DONE},
    Phase.DONE: set(),
    Phase.FAILED: set(),
}


def is_valid_path(phases: Sequence) -> bool:
    """True when consecutive distinct phases follow the allowed edges from Planar."""
    seq = [Phase(p) for p in phases]
    if not seq or seq[0] is not Phase.PLANAR:
        return False
    for a, b in zip(seq, seq[1:]):
        if a is not b and b not in ALLOWED[a]:
            return False
    return True


class DegenerateGeometry(ValueError):
    """The light guide is directly above the instrument tip."""


@dataclass(frozen=True)
class ControlParams:
    beta: float = 0.99
    eta_planar: float = 140.0
    lambda_planar: float = 0.001
    eta_vertical: float = 150.0
    lambda_vertical: float = 0.0005
    lambda_op: float = 0.001
    d_op_rate: float = 0.5           # mm/s
    k_overlap: float = 0.5           # mm
    k_vertical: float = 0.3          # mm
    planar_tol: float = 0.1          # mm
    sample_rate: float = 150.0       # Hz
    convert: float = 0.015           # px/um
    extra_push: float = 100.0        # um
    threshold_px: float = 1.0
    descent_rate: float = 0.1        # mm/s
    max_planar_speed: float = 5.0    # mm/s
    max_vertical_speed: float = 2.0  # mm/s
    planar_stall_window: float = 1.0  # s
    overlap_stall_window: float = 2.0
    vertical_stall_window: float = 1.0
    stall_eps: float = 1e-4          # mm
    max_time: float = 60.0           # s
    planar_height: Optional[float] = None
    threshold_units: str = "mm"
    k_overlap_px: float = 20.0
    k_vertical_px: float = 1.0
    # the damping factors above are quoted for lengths in metres. A strict
    # unit conversion to mm would multiply them by 1e6; that over-damps the
    # light guide of the default arms, so a factor of 1e5 is used instead
    damping_scale: float = 1.0e5

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name in ("planar_height", "threshold_units"):
                continue
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0) and f.name != "beta":
                raise ValueError(f"{f.name} must be positive, got {v}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.threshold_units not in ("mm", "px"):
            raise ValueError("threshold_units must be 'mm' or 'px'")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "ControlParams":
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown control parameters: {sorted(unknown)}")
        return cls(**d)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def damping(self, lam: float) -> float:
        return lam * self.damping_scale

    def px_to_mm(self, px: float) -> float:
        return px / self.convert / 1000.0

    @property
    def overlap_threshold(self) -> float:
        return self.k_overlap if self.threshold_units == "mm" else self.px_to_mm(self.k_overlap_px)

    @property
    def vertical_threshold(self) -> float:
        return self.k_vertical if self.threshold_units == "mm" else self.px_to_mm(self.k_vertical_px)


# -- additional positioning ------------------------------------------------------

def d_rest(t_lg, t_si, convert: float, threshold_px: float = 1.0) -> float:
    """Remaining tip height (um) at which the shadow gap equals ``threshold_px``."""
    lg, si = vec4(t_lg)[1:], vec4(t_si)[1:]
    d_z = lg[2] - si[2]
    d_xy = float(np.hypot(*(lg[:2] - si[:2])))
    if d_xy < 1e-9:
        raise DegenerateGeometry("light guide directly above the instrument tip")
    if convert <= 0:
        raise ValueError("convert must be positive")
    return threshold_px * (d_z / d_xy) / convert


def d_add(t_lg, t_si, convert: float, extra_push: float = 100.0, threshold_px: float = 1.0) -> float:
    return d_rest(t_lg, t_si, convert, threshold_px) + extra_push


def additional_reference(st, rate: float) -> np.ndarray:
    """Descent reference: moves from the start point toward the target at ``rate`` mm/s."""
    start, goal = st.additional_start, st.additional_target
    span = float(np.linalg.norm(goal - start))
    if span == 0.0:
        return goal.copy()
    s = min(1.0, rate * (st.elapsed - st.additional_t0) / span)
    return goal.copy() if s >= 1.0 else start + s * (goal - start)


# -- per-tick evaluation ---------------------------------------------------------------

@dataclass
class Tick:
    """Quantities shared by the controller, the transitions and the log at one q."""

    q: np.ndarray
    states: tuple
    terms: object
    ctx: object
    t1: np.ndarray
    t2: np.ndarray
    shaft: np.ndarray

    @property
    def n1(self) -> int:
        return self.states[0].n

    @property
    def m(self) -> int:
        return self.q.shape[0]

    def J_t1(self) -> np.ndarray:
        J = np.zeros((4, self.m))
        J[:, :self.n1] = self.states[0].J_t
        return J

    def J_t2(self) -> np.ndarray:
        J = np.zeros((4, self.m))
        J[:, self.n1:] = self.states[1].J_t
        return J


def evaluate(scene: EyeScene, models, q) -> Tick:
    q = np.asarray(q, dtype=float)
    states = arm_states(models, q)
    terms = vitreo_terms(scene, models, q, states)
    ctx = context_from_states(states[0], states[1], scene)
    return Tick(q=q, states=states, terms=terms, ctx=ctx, t1=states[0].t, t2=states[1].t,
                shaft=rotate_axis_z(states[0].r))


def constraint_rows(scene: EyeScene, tick: Tick, with_conical: bool = True) -> ConstraintRows:
    s1, s2 = tick.states
    sh = shadow_rows(tick.ctx, s1.t, s2.t, s2.J_t, scene.gains, s1.n)
    if not with_conical:
        keep = [i for i, lab in enumerate(sh.labels) if not lab.startswith("cone")]
        sh = ConstraintRows(sh.W[keep], sh.w[keep], [sh.labels[i] for i in keep])
    return ConstraintRows.stack(tick.terms.rows, sh)


def _saturate(err: np.ndarray, eta: float, vmax: float) -> np.ndarray:
    n = float(np.linalg.norm(err))
    if eta * n > vmax:
        return err * (vmax / (eta * n))
    return err


# -- control laws ----------------------------------------------------------------------

def planar_problem(tick: Tick, rows: ConstraintRows, target, params: ControlParams,
                   eta: Optional[float] = None, vmax: Optional[float] = None) -> QpProblem:
    """Soft-priority tracking: instrument weight beta, light guide 1 - beta with zero error."""
    eta = params.eta_planar if eta is None else eta
    vmax = params.max_planar_speed if vmax is None else vmax
    n1, m = tick.n1, tick.m
    err = _saturate(tick.t1 - vec4(target), eta, vmax)
    H1, f1 = qpsolve.tracking_objective(tick.states[0].J_t, err, eta, 0.0, params.beta, slice(0, n1), m)
    H2, f2 = qpsolve.tracking_objective(tick.states[1].J_t, np.zeros(4), eta, 0.0, 1.0 - params.beta,
                                        slice(n1, m), m)
    H = H1 + H2 + 2.0 * params.damping(params.lambda_planar) * np.eye(m)
    return QpProblem(H, f1 + f2, rows.W, rows.w)


def planar_control(tick: Tick, rows: ConstraintRows, target, params: ControlParams) -> np.ndarray:
    return qpsolve.solve(planar_problem(tick, rows, target, params))


def overlap_problem(tick: Tick, rows: ConstraintRows, direction: float, params: ControlParams,
                    rate: Optional[float] = None) -> QpProblem:
    rate = params.d_op_rate if rate is None else rate
    _, J = d_op(tick.ctx)
    H, f = qpsolve.rate_objective(J, direction * rate, params.damping(params.lambda_op))
    return QpProblem(H, f, rows.W, rows.w, tick.J_t1(), np.zeros(4))


def overlap_control(tick: Tick, rows: ConstraintRows, direction: float, params: ControlParams) -> np.ndarray:
    return qpsolve.solve(overlap_problem(tick, rows, direction, params))


def vertical_problems(tick: Tick, rows: ConstraintRows, target, direction: float, params: ControlParams,
                      vmax: Optional[float] = None) -> Tuple[QpProblem, Optional[QpProblem]]:
    """First level tracks the retina target; second level pushes d_OP in the remaining freedom."""
    vmax = params.max_vertical_speed if vmax is None else vmax
    eta = params.eta_vertical
    m = tick.m
    err = _saturate(tick.t1 - vec4(target), eta, vmax)
    H, f = qpsolve.tracking_objective(tick.states[0].J_t, err, eta, 0.0, 1.0, slice(0, tick.n1), m)
    first = QpProblem(H + 2.0 * params.damping(params.lambda_vertical) * np.eye(m), f, rows.W, rows.w)
    try:
        _, J = d_op(tick.ctx)
    except SingularConfiguration:
        return first, None
    H2, f2 = qpsolve.rate_objective(J, direction * params.d_op_rate, params.damping(params.lambda_vertical))
    return first, QpProblem(H2, f2, rows.W, rows.w)


def vertical_control(tick: Tick, rows: ConstraintRows, target, direction: float,
                     params: ControlParams, vmax: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """Returns ``(u, coupling residual)``."""
    first, second = vertical_problems(tick, rows, target, direction, params, vmax)
    if second is None:
        return qpsolve.solve(first), 0.0
    coupling = tick.J_t1()
    u, u1 = qpsolve.cascade(first, second, coupling)
    return u, float(np.max(np.abs(coupling @ (u - u1))))


# -- state and log ---------------------------------------------------------------------

@dataclass
class PositioningState:
    phase: Phase
    q: np.ndarray
    target_retina: np.ndarray
    t_planar_d: np.ndarray
    elapsed: float = 0.0
    reason: str = ""
    stall_window: deque = field(default_factory=deque)
    op_direction: float = 1.0
    additional_target: Optional[np.ndarray] = None
    additional_start: Optional[np.ndarray] = None
    additional_t0: float = 0.0
    additional_deadline: float = 0.0
    phase_times: Dict[str, float] = field(default_factory=dict)
    events: List[str] = field(default_factory=list)

    def enter(self, phase: Phase, reason: str = ""):
        if phase not in ALLOWED[self.phase]:
            raise RuntimeError(f"illegal transition {self.phase.value} -> {phase.value}")
        log.debug("t=%.4f %s -> %s %s", self.elapsed, self.phase.value, phase.value, reason)
        self.phase = phase
        self.reason = reason
        self.stall_window = deque()


def initial_state(scene: EyeScene, models, q0, target_xy, params: ControlParams) -> PositioningState:
    q0 = np.asarray(q0, dtype=float)
    s1, _ = arm_states(models, q0)
    z = s1.t[3] if params.planar_height is None else params.planar_height
    tx, ty = float(target_xy[0]), float(target_xy[1])
    return PositioningState(
        phase=Phase.PLANAR, q=q0.copy(),
        target_retina=np.array([0.0, tx, ty, scene.retina_plane_z]),
        t_planar_d=np.array([0.0, tx, ty, z]),
    )


LOG_VERSION = 1


@dataclass
class TrajectoryLog:
    """One row per tick; column order is fixed by :meth:`columns`."""

    n_joints: int
    margin_keys: List[str]
    rows: List[list] = field(default_factory=list)

    def columns(self) -> List[str]:
        cols = ["tick", "time", "phase"]
        cols += [f"q{i + 1}" for i in range(self.n_joints)]
        cols += ["t1_x", "t1_y", "t1_z", "t2_x", "t2_y", "t2_z", "shadow_x", "shadow_y",
                 "shadow_r", "d_shaft", "d_tip", "d_op", "theta_c1", "theta_c1_safe", "theta_c2"]
        cols += [f"m_{k}" for k in self.margin_keys]
        return cols

    def append(self, row: list):
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        i = self.columns().index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self) -> str:
        lines = [f"# shadowpos trajectory log v{LOG_VERSION}", ",".join(self.columns())]
        for r in self.rows:
            lines.append(",".join(_fmt(v) for v in r))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


@dataclass
class RunResult:
    state: PositioningState
    log: TrajectoryLog
    summary: dict


def _tick_record(scene: EyeScene, models, tick: Tick, i: int, t: float, phase: str) -> Tuple[list, dict, dict]:
    margins = constraint_margins(scene, models, tick.q, tick.states, tick.terms, tick.ctx)
    try:
        sh = shadow_tip(tick.t2, tick.t1, scene.retina_plane_z)
        shx, shy = sh.x, sh.y
        d_shaft, d_tip = view_distances(tick.t2, tick.t1, tick.shaft, scene.retina_plane_z)
    except DegenerateRay:
        shx = shy = d_shaft = d_tip = math.nan
    vc = scene.view_center
    shr = math.hypot(shx - vc[0], shy - vc[1])
    try:
        dop, _ = d_op(tick.ctx)
    except SingularConfiguration:
        dop = math.nan
    try:
        th1, th1s = c1_angles(tick.ctx)
    except SingularConfiguration:
        th1 = th1s = math.nan
    th2 = c2_angle(tick.ctx)
    row = [i, t, phase] + list(tick.q) + list(tick.t1[1:]) + list(tick.t2[1:]) + \
        [shx, shy, shr, d_shaft, d_tip, dop, th1, th1s, th2] + [margins[k] for k in margins]
    view = dict(shadow_r=shr, d_shaft=d_shaft, d_tip=d_tip, d_op=dop)
    return row, margins, view


class Controller:
    """Runs one positioning task; see :func:`run`."""

    def __init__(self, scene: EyeScene, models, params: ControlParams, with_conical: bool = True):
        self.scene = scene
        self.models = tuple(models)
        self.params = params
        self.with_conical = with_conical

    def _stalled(self, st: PositioningState, value: float, window_s: float) -> bool:
        """True when ``value`` (to be minimized) improved less than stall_eps over the window."""
        n = int(round(window_s * self.params.sample_rate))
        st.stall_window.append(value)
        if len(st.stall_window) > n + 1:
            st.stall_window.popleft()
        if len(st.stall_window) <= n:
            return False
        return st.stall_window[0] - min(st.stall_window) < self.params.stall_eps

    def command(self, st: PositioningState, tick: Tick, rows: ConstraintRows) -> Tuple[np.ndarray, dict]:
        p = self.params
        info = {}
        if st.phase is Phase.PLANAR:
            u = planar_control(tick, rows, st.t_planar_d, p)
        elif st.phase is Phase.OVERLAP:
            u = overlap_control(tick, rows, st.op_direction, p)
            info["eq_residual"] = float(np.max(np.abs(tick.J_t1() @ u)))
        elif st.phase is Phase.VERTICAL:
            u, res = vertical_control(tick, rows, st.target_retina, st.op_direction, p)
            info["eq_residual"] = res
        elif st.phase is Phase.ADDITIONAL:
            ref = additional_reference(st, p.descent_rate)
            u = qpsolve.solve(planar_problem(tick, rows, ref, p, p.eta_vertical, p.max_vertical_speed))
        else:
            u = np.zeros(tick.m)
        return u, info

    def transition(self, st: PositioningState, tick: Tick, view: dict):
        p = self.params
        if st.phase is Phase.PLANAR:
            err = float(np.linalg.norm(tick.t1 - st.t_planar_d))
            if err <= p.planar_tol:
                if view["d_shaft"] > p.overlap_threshold:
                    st.enter(Phase.VERTICAL, "overlap skipped")
                else:
                    dop = view["d_op"]
                    st.op_direction = 1.0 if not (dop < 0.0) else -1.0
                    st.enter(Phase.OVERLAP)
            elif self._stalled(st, err, p.planar_stall_window):
                st.enter(Phase.FAILED, "planar stall")
        elif st.phase is Phase.OVERLAP:
            if view["d_shaft"] > p.overlap_threshold:
                st.enter(Phase.VERTICAL)
            elif self._stalled(st, -view["d_shaft"], p.overlap_stall_window):
                st.enter(Phase.FAILED, "overlap stall")
        elif st.phase is Phase.VERTICAL:
            if view["d_tip"] < p.vertical_threshold:
                dadd = d_add(tick.t2, tick.t1, p.convert, p.extra_push, p.threshold_px) / 1000.0
                tgt = tick.t1.copy()
                tgt[3] = max(tgt[3] - dadd, self.scene.retina_plane_z)
                st.additional_target = tgt
                st.additional_start = tick.t1.copy()
                st.additional_t0 = st.elapsed
                st.additional_deadline = st.elapsed + (tick.t1[3] - tgt[3]) / p.descent_rate + 1.0
                st.enter(Phase.ADDITIONAL, f"d_add={dadd * 1000.0:.3f}um")
            elif self._stalled(st, float(np.linalg.norm(tick.t1 - st.target_retina)), p.vertical_stall_window):
                st.enter(Phase.FAILED, "vertical stall")
        elif st.phase is Phase.ADDITIONAL:
            remaining = float(np.linalg.norm(tick.t1 - st.additional_target))
            ref_done = float(np.linalg.norm(additional_reference(st, p.descent_rate) - st.additional_target)) == 0.0
            if ref_done and remaining <= 1e-3:
                st.enter(Phase.DONE)
            elif st.elapsed >= st.additional_deadline:
                st.enter(Phase.DONE, f"additional descent short by {remaining * 1000.0:.1f}um")

    def run(self, q0, target_xy, max_time: Optional[float] = None,
            on_tick: Optional[Callable] = None) -> RunResult:
        p = self.params
        max_time = p.max_time if max_time is None else max_time
        st = initial_state(self.scene, self.models, q0, target_xy, p)
        return self.run_state(st, max_time, on_tick)

    def run_state(self, st: PositioningState, max_time: float, on_tick=None) -> RunResult:
        p = self.params
        scene, models = self.scene, self.models
        tick0 = evaluate(scene, models, st.q)
        margin_keys = list(constraint_margins(scene, models, st.q, tick0.states, tick0.terms, tick0.ctx))
        tlog = TrajectoryLog(st.q.shape[0], margin_keys)
        worst = {k: math.inf for k in margin_keys}
        worst_shadow_r = 0.0
        max_eq = 0.0
        max_tip_step_overlap = 0.0
        phases = [st.phase.value]
        i = 0
        tick = tick0
        while True:
            st.elapsed = i * p.dt
            row, margins, view = _tick_record(scene, models, tick, i, st.elapsed, st.phase.value)
            tlog.append(row)
            for k, v in margins.items():
                worst[k] = min(worst[k], v)
            if math.isfinite(view["shadow_r"]):
                worst_shadow_r = max(worst_shadow_r, view["shadow_r"])
            if st.phase in (Phase.DONE, Phase.FAILED):
                break
            before = st.phase
            self.transition(st, tick, view)
            if st.phase is not before:
                phases.append(st.phase.value)
                if st.phase in (Phase.DONE, Phase.FAILED):
                    tlog.rows[-1][2] = st.phase.value
                    break
            if st.elapsed >= max_time and st.phase is not Phase.ADDITIONAL:
                st.enter(Phase.FAILED, "timeout")
                phases.append(st.phase.value)
                tlog.rows[-1][2] = st.phase.value
                break
            rows = constraint_rows(scene, tick, self.with_conical)
            try:
                u, info = self.command(st, tick, rows)
            except (qpsolve.QpError, SingularConfiguration) as exc:
                # zero velocity is always admissible; stop where we are
                u, info = np.zeros(tick.m), {}
                st.events.append(f"t={st.elapsed:.4f}: {type(exc).__name__}: {exc}")
                if st.phase is Phase.ADDITIONAL:
                    st.enter(Phase.DONE, "solver failure during additional descent")
                else:
                    st.enter(Phase.FAILED, f"solver: {type(exc).__name__}")
                phases.append(st.phase.value)
                tlog.rows[-1][2] = st.phase.value
                break
            max_eq = max(max_eq, info.get("eq_residual", 0.0))
            st.phase_times[st.phase.value] = st.phase_times.get(st.phase.value, 0.0) + p.dt
            phase_now = st.phase
            st.q = st.q + u * p.dt
            t1_prev = tick.t1
            tick = evaluate(scene, models, st.q)
            if phase_now is Phase.OVERLAP:
                max_tip_step_overlap = max(max_tip_step_overlap, float(np.linalg.norm(tick.t1 - t1_prev)))
            if on_tick is not None:
                on_tick(st, tick, u)
            i += 1
        summary = {
            "final_phase": st.phase.value,
            "reason": st.reason,
            "phases": phases,
            "ticks": i,
            "time": i * p.dt,
            "phase_times": {k: round(v, 10) for k, v in st.phase_times.items()},
            "worst_margins": worst,
            "max_shadow_radius": worst_shadow_r,
            "max_equality_residual": max_eq,
            "max_overlap_tip_step": max_tip_step_overlap,
            "events": list(st.events),
            "final_tip": [float(v) for v in tick.t1[1:]],
        }
        return RunResult(st, tlog, summary)


def run(scene: EyeScene, models, q0, target_xy, params: Optional[ControlParams] = None,
        max_time: Optional[float] = None, with_conical: bool = True) -> RunResult:
    """Simulate one positioning task from ``q0`` toward the retina point ``target_xy``."""
    params = ControlParams() if params is None else params
    return Controller(scene, models, params, with_conical).run(q0, target_xy, max_time)


# -- scripted planar trajectories --------------------------------------------------------

def polyline_target(waypoints, speed: float) -> Tuple[Callable[[float], np.ndarray], float]:
    """Constant-speed parametrization of a polyline; returns ``(target(t), duration)``."""
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
        raise ValueError("waypoints must be a list of (x, y, z) points")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = float(cum[-1])
    if speed <= 0:
        raise ValueError("speed must be positive")

    def target(t: float) -> np.ndarray:
        s = min(max(t * speed, 0.0), total)
        if total == 0.0:
            return vec4(pts[0])
        k = int(np.searchsorted(cum, s, side="right") - 1)
        k = min(k, len(seg) - 1)
        frac = 0.0 if seg[k] == 0 else (s - cum[k]) / seg[k]
        return vec4(pts[k] + frac * (pts[k + 1] - pts[k]))

    return target, total / speed


def follow_trajectory(scene: EyeScene, models, q0, waypoints, speed: float,
                      params: Optional[ControlParams] = None, with_conical: bool = True,
                      settle: float = 0.5) -> RunResult:
    """Track a moving planar target with the planar control law only (no phase changes)."""
    params = ControlParams() if params is None else params
    target, duration = polyline_target(waypoints, speed)
    total = duration + settle
    n_ticks = int(math.ceil(total * params.sample_rate - 1e-9))
    q = np.asarray(q0, dtype=float).copy()
    tick = evaluate(scene, models, q)
    keys = list(constraint_margins(scene, models, q, tick.states, tick.terms, tick.ctx))
    tlog = TrajectoryLog(q.shape[0], keys)
    worst = {k: math.inf for k in keys}
    worst_r = 0.0
    events = []
    for i in range(n_ticks + 1):
        t = i * params.dt
        row, margins, view = _tick_record(scene, models, tick, i, t, Phase.PLANAR.value)
        tlog.append(row)
        for k, v in margins.items():
            worst[k] = min(worst[k], v)
        if math.isfinite(view["shadow_r"]):
            worst_r = max(worst_r, view["shadow_r"])
        if i == n_ticks:
            break
        rows = constraint_rows(scene, tick, with_conical)
        try:
            u = planar_control(tick, rows, target(t), params)
        except (qpsolve.QpError, SingularConfiguration) as exc:
            u = np.zeros(tick.m)
            events.append(f"t={t:.4f}: {type(exc).__name__}: {exc}")
        q = q + u * params.dt
        tick = evaluate(scene, models, q)
    st = PositioningState(Phase.PLANAR, q, vec4(target(total)), vec4(target(total)), elapsed=n_ticks * params.dt)
    st.events = events
    summary = {
        "with_conical": with_conical,
        "ticks": n_ticks,
        "time": n_ticks * params.dt,
        "path_length": duration * speed,
        "worst_margins": worst,
        "max_shadow_radius": worst_r,
        "events": events,
    }
    return RunResult(st, tlog, summary)
