"""Acceptance suite: one test per criterion, each emitting a single PASS/FAIL line."""

import math
import time

import numpy as np
import pytest

from shadowpos import qpsolve
from shadowpos.geomvfi import arm_states, vfi_restricted_row, vfi_safe_row, ConstraintRows
from shadowpos.pipeline import (
    Controller, constraint_rows, d_add, d_rest, evaluate, overlap_problem, planar_problem,
    vertical_problems,
)
from shadowpos.scene import shadow_tip, validate_premise_iii
from shadowpos.shadowvfi import c1_angles, c1_pair, c2_angle, c2_pair, context_from_states
from shadowpos.simcli import (
    GridSpec, analytic_quantities, feasible_samples, jacobian_audit, main, run_grid, run_trajectory,
)

from conftest import fd_jacobian, rel_err

BAND = 1e-9


def test_criterion_1_jacobians(cfg, verdict):
    t0 = time.perf_counter()
    rep = jacobian_audit(cfg, samples=100, seed=20240611)
    elapsed = time.perf_counter() - t0
    worst_key = max(rep["max_relative_error"], key=rep["max_relative_error"].get)
    worst = rep["max_relative_error"][worst_key]
    clamped = max(rep["clamped_edge"]["max_relative_error"].values())

    # second opinion from the suite's own differencing on a few of the same kind of samples
    own = 0.0
    for q in feasible_samples(cfg, 5, seed=99):
        ana = analytic_quantities(cfg, q)
        for key, (_, J) in ana.items():
            f = lambda x, key=key: analytic_quantities(cfg, x)[key][0]
            N = (4.0 * fd_jacobian(f, q, 5e-7) - fd_jacobian(f, q, 1e-6)) / 3.0
            own = max(own, rel_err(J, N))

    ok = rep["passed"] and own <= 1e-5 and elapsed <= 60.0
    central = max(rep["central_only_relative_error"].values())
    verdict(1, "Jacobian oracle", ok,
            f"{len(rep['max_relative_error'])} Jacobians x 100 samples, worst {worst:.2e} ({worst_key}), "
            f"clamped edge {clamped:.2e}, suite oracle {own:.2e}, plain central {central:.2e}, "
            f"tol 1e-5, {elapsed:.1f} s (limit 60 s)")
    assert ok


def _physical(cfg, s1, s2):
    ec = np.asarray(cfg.scene.eye_center)
    return (0.0 < s1.t[3] < s2.t[3]
            and np.linalg.norm(s1.t[1:] - ec) < ec[2]
            and np.linalg.norm(s2.t[1:] - ec) < ec[2])


def test_criterion_2_cross_formulation(cfg, verdict):
    rng = np.random.default_rng(7)
    r_ws, th2s = cfg.scene.r_ws, cfg.scene.theta_c2_safe
    kept = outside_domain = 0
    bad = {"c1_angles": 0, "c1_raycast": 0, "c2_angles": 0}
    inside = {"c1": 0, "c2": 0}
    while kept < 10_000:
        q = cfg.q0 + rng.normal(0.0, 0.01, cfg.q0.shape)
        s1, s2 = arm_states(cfg.models, q)
        if not _physical(cfg, s1, s2):
            continue
        ctx = context_from_states(s1, s2, cfg.scene)
        e = ctx.edge()
        # the squared forms compare squared cosines, so both cone angles must be acute
        if e["clamped"] or ctx.p_c @ ctx.p_R1 <= 0.0 or ctx.p_c @ e["p_e"] <= 0.0:
            outside_domain += 1
            continue
        kept += 1
        d, ds, _, _ = c1_pair(ctx)
        th, th_s = c1_angles(ctx)
        r = shadow_tip(s2.t, s1.t).distance(cfg.scene.view_center)
        inside["c1"] += r < r_ws
        if abs(th_s - th) > BAND:
            bad["c1_angles"] += (d >= ds) != (th_s > th)
        if abs(r - r_ws) > BAND:
            bad["c1_raycast"] += (d >= ds) != (r < r_ws)
        d2, d2s, _, _ = c2_pair(ctx)
        th2 = c2_angle(ctx)
        inside["c2"] += th2 < th2s
        if abs(th2s - th2) > BAND:
            bad["c2_angles"] += (d2 >= d2s) != (th2s > th2)
    ok = sum(bad.values()) == 0 and 0 < inside["c1"] < kept and 0 < inside["c2"] < kept
    verdict(2, "cross-formulation signs", ok,
            f"{kept} configurations ({inside['c1']} shadows inside, {inside['c2']} tips lit), "
            f"disagreements {bad}, band {BAND:g}, {outside_domain} skipped as obtuse or clamped")
    assert ok


def test_criterion_3_trajectory(cfg, verdict):
    t0 = time.perf_counter()
    res = run_trajectory(cfg, cfg.trajectory["waypoints"], float(cfg.trajectory["speed"]))
    elapsed = time.perf_counter() - t0
    c, u = res["report"]["runs"]["constrained"], res["report"]["runs"]["unconstrained"]
    ok = (c["max_c1_violation"] <= 1e-3 and c["max_c2_violation"] <= 1e-3
          and c["max_shadow_radius"] <= cfg.scene.r_ws + 0.05
          and u["ticks_outside_workspace"] > 0 and elapsed <= 60.0)
    verdict(3, "constraint enforcement on a scripted path", ok,
            f"constrained C1 {c['max_c1_violation']:.2e} rad, C2 {c['max_c2_violation']:.2e} rad (tol 1e-3), "
            f"shadow radius {c['max_shadow_radius']:.4f} mm (limit {cfg.scene.r_ws + 0.05:.2f}); "
            f"unconstrained reaches {u['max_shadow_radius']:.3f} mm with {u['ticks_outside_workspace']} "
            f"ticks outside; {elapsed:.1f} s (limit 60 s)")
    assert ok


def test_criterion_4_grid(cfg, verdict):
    t0 = time.perf_counter()
    res = run_grid(None, GridSpec(100, cfg.scene.workspace_diameter), seed=7)
    elapsed = time.perf_counter() - t0
    s = res["summary"]
    o = s["overlap"]
    ok = (s["all_done"] and o["count"] > 0 and o["components"] == 1 and o["insertion_side"]
          and o["max_time"] <= 10.0)
    verdict(4, "grid robustness (100-point smoke grid)", ok,
            f"{s['n_done']}/100 Done, overlap at {o['count']} points in {o.get('components')} region(s) "
            f"centred at ({o['centroid'][0]:.2f}, {o['centroid'][1]:.2f}) on the light-guide side: "
            f"{o.get('insertion_side')}, max overlap {o['max_time']:.2f} s (limit 10 s), "
            f"{elapsed:.0f} s, {700 * elapsed / 100 / 60:.1f} min projected for 700 points (limit 10)")
    assert ok


def _step(W, w, u_des, m):
    H = 2.0 * np.eye(m)
    return qpsolve.solve(qpsolve.QpProblem(H, -2.0 * np.asarray(u_des, dtype=float), W, w))


def _toy_1dof(kind, d0, ticks, eta=1.5, dt=1 / 150):
    """x in R with D = x^2, D_safe = 1; desired velocity sweeps back and forth."""
    x = math.sqrt(1.0 - d0) if kind == "safe" else math.sqrt(1.0 + d0)
    worst = math.inf
    for k in range(ticks):
        u_des = 4.0 * math.sin(0.01 * k) + (3.0 if kind == "safe" else -3.0)
        D, J = x * x, np.array([2.0 * x])
        row = vfi_safe_row(J, D, 1.0, eta) if kind == "safe" else vfi_restricted_row(J, D, 1.0, eta)
        x += _step(row.W, row.w, [u_des], 1)[0] * dt
        worst = min(worst, 1.0 - x * x if kind == "safe" else x * x - 1.0)
    return worst


def _toy_2dof(x0, ticks, eta=1.5, dt=1 / 150):
    """Point in the plane: safe half-plane y <= 1 and restricted disk |x - c|^2 >= 0.25 together."""
    x = np.array(x0, dtype=float)
    c = np.array([0.0, 0.0])
    worst = math.inf
    for k in range(ticks):
        a = 0.003 * k
        u_des = 3.0 * np.array([math.cos(a), math.sin(a)]) - 0.5 * x
        D_s, J_s = x[1], np.array([0.0, 1.0])
        v = x - c
        D_r, J_r = float(v @ v), 2.0 * v
        rows = ConstraintRows.stack(vfi_safe_row(J_s, D_s, 1.0, eta), vfi_restricted_row(J_r, D_r, 0.25, eta))
        x = x + _step(rows.W, rows.w, u_des, 2) * dt
        worst = min(worst, 1.0 - x[1], float((x - c) @ (x - c)) - 0.25)
    return worst


def test_criterion_5_zone_semantics(verdict):
    ticks = 10_000
    worst = {}
    for kind in ("safe", "restricted"):
        worst[f"1dof_{kind}"] = min(_toy_1dof(kind, d0, ticks) for d0 in (0.0, 0.5))
    worst["2dof"] = min(_toy_2dof(x0, ticks) for x0 in ([0.0, 1.0], [0.5, -1.0]))
    ok = all(v >= -1e-9 for v in worst.values())
    verdict(5, "VFI zone semantics", ok,
            f"{ticks} ticks per run, worst margins "
            + ", ".join(f"{k} {v:.2e}" for k, v in worst.items()) + " (limit -1e-9)")
    assert ok


def test_criterion_6_controller_contracts(cfg, params, verdict):
    stats = {"ticks": 0, "premise_ok": 0, "w_min": math.inf, "solver_errors": 0}

    def audit(st, tick, u):
        stats["ticks"] += 1
        if not validate_premise_iii(cfg.scene, cfg.models, tick.q).ok:
            return
        stats["premise_ok"] += 1
        rows = constraint_rows(cfg.scene, tick)
        stats["w_min"] = min(stats["w_min"], float(rows.w.min()))
        try:
            qpsolve.solve(planar_problem(tick, rows, tick.t1 + np.array([0, 0.3, -0.3, 0]), params))
            qpsolve.solve(overlap_problem(tick, rows, 1.0, params))
            first, second = vertical_problems(tick, rows, np.array([0.0, 0.0, 0.0, 0.0]), 1.0, params)
            if second is not None:
                qpsolve.cascade(first, second, tick.J_t1())
        except qpsolve.QpError:
            stats["solver_errors"] += 1

    tip_step = eq_res = 0.0
    events = []
    for name in ("p5", "p6"):
        s = Controller(cfg.scene, cfg.models, params).run(cfg.q0, cfg.points[name], on_tick=audit).summary
        assert "OverlapPrevention" in s["phases"]
        tip_step = max(tip_step, s["max_overlap_tip_step"])
        eq_res = max(eq_res, s["max_equality_residual"])
        events += s["events"]
    ok = (tip_step <= 1e-8 and eq_res <= 1e-8 and stats["w_min"] >= 0.0
          and stats["solver_errors"] == 0 and not events)
    verdict(6, "controller contracts", ok,
            f"overlap tip step {tip_step:.1e} mm, cascade residual {eq_res:.1e} (tol 1e-8); "
            f"{stats['premise_ok']}/{stats['ticks']} ticks with all margins held, min right side "
            f"{stats['w_min']:.2e} (u = 0 feasible), solver errors {stats['solver_errors'] + len(events)}")
    assert ok


def test_criterion_7_additional_depth(verdict):
    lg, si = [0.0, 3.0, 0.0, 7.0], [0.0, 0.0, 0.0, 1.0]      # d_z / d_xy = 6 / 3 = 2
    r, a = d_rest(lg, si, 0.015), d_add(lg, si, 0.015)
    ok = abs(r - 133.33) <= 0.01 and abs(a - 233.33) <= 0.01
    verdict(7, "additional descent depth", ok,
            f"d_rest {r:.4f} um (133.33 +- 0.01), d_add {a:.4f} um (233.33 +- 0.01)")
    assert ok


def test_criterion_8_determinism(tmp_path, verdict, capsys):
    args = ["grid", "--points", "12", "--jitter", "0.05", "--seed", "7"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--workers", "2"]) == 0
    capsys.readouterr()
    same = (a / "grid.csv").read_bytes() == (b / "grid.csv").read_bytes()
    same_runs = (a / "runs.jsonl").read_bytes() == (b / "runs.jsonl").read_bytes()
    ok = same and same_runs
    verdict(8, "determinism", ok,
            f"two `grid --seed 7` runs (1 and 2 workers, 12 jittered points): grid.csv identical {same}, "
            f"runs.jsonl identical {same_runs}")
    assert ok
