import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shadowpos import qpsolve
from shadowpos.config import load_config
from shadowpos.geomvfi import (
    ConstraintRows, VfiGains, arm_states, build_vitreo_constraints, dist_line_point_sq,
    dist_point_line_sq, dist_point_plane, dist_pp_sq, joint_limit_rows, vfi_restricted_row,
    vfi_safe_row, vitreo_terms,
)
from shadowpos.quatalg import UnitQuaternion, axis_z_jacobian, rotate_axis_z
from shadowpos.scene import SAFE_KEYS

from conftest import fd_jacobian, rel_err

CFG = load_config()
SCENE, MODELS = CFG.scene, CFG.models


def feasible_near_start(rng, n, sigma=2e-4):
    return [CFG.q0 + rng.normal(0, sigma, 12) for _ in range(n)]


class TestPointPoint:
    def test_coincident(self):
        D, J = dist_pp_sq([1, 2, 3], [1, 2, 3], np.eye(4)[:, 1:], None)
        assert D == 0.0 and np.all(J == 0.0)

    def test_static_value(self):
        assert dist_pp_sq([0, 0, 0], [1, 2, 2])[0] == 9.0

    def test_fd(self, rng):
        A, B = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        A[0] = B[0] = 0.0
        f = lambda x: dist_pp_sq(A @ x, B @ x + np.array([0, 1, 2, 3]))[0]
        x = rng.normal(size=5)
        assert rel_err(dist_pp_sq(A @ x, B @ x + np.array([0, 1, 2, 3]), A, B)[1], fd_jacobian(f, x)) <= 1e-6


class TestPointLine:
    def test_on_line(self):
        assert dist_point_line_sq([0, 0, 4], ([0, 0, 1], [0, 0, 0]))[0] == 0.0

    def test_unit_offset(self):
        assert dist_point_line_sq([1, 0, 0], ([0, 0, 1], [0, 0, 0]))[0] == 1.0

    def test_zero_direction(self):
        with pytest.raises(ValueError):
            dist_point_line_sq([1, 0, 0], ([0, 0, 0], [0, 0, 0]))

    def test_fd_moving_line(self, rng):
        # point and line both driven by x; the direction stays unit via normalization
        A, P0 = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        A[0] = P0[0] = 0.0

        def line_dir(x):
            r = np.array([1.0, *(0.3 * x[:3])])
            return rotate_axis_z(r / np.linalg.norm(r))

        def f(x):
            return dist_point_line_sq(A @ x, (line_dir(x), P0 @ x))[0]

        x = rng.normal(size=4)
        Jl = fd_jacobian(line_dir, x)   # direction Jacobian from differences, only the distance rule is checked
        _, J = dist_point_line_sq(A @ x, (line_dir(x), P0 @ x), A, Jl, P0)
        assert rel_err(J, fd_jacobian(f, x)) <= 1e-6


class TestLinePoint:
    def test_point_on_axis(self):
        assert dist_line_point_sq([1, 0, 0, 0], [0, 0, 0, 5], [0, 0, 2], np.zeros((4, 1)), np.zeros((4, 1)))[0] == 0.0

    def test_half_mm(self):
        D, _ = dist_line_point_sq([1, 0, 0, 0], [0, 0, 0, 0], [0.5, 0, 0], np.zeros((4, 1)), np.zeros((4, 1)))
        assert D == 0.25

    def test_fd_over_arm_poses(self, rng):
        m = MODELS[0]
        for _ in range(10):
            q = CFG.q0[:6] + rng.normal(0, 0.2, 6)
            p = np.array([1.0, -2.0, 11.0])

            def f(x):
                s = arm_states(MODELS, np.concatenate((x, CFG.q0[6:])))[0]
                return dist_line_point_sq(s.r, s.t, p, s.J_t, s.J_r)[0]

            s = arm_states(MODELS, np.concatenate((q, CFG.q0[6:])))[0]
            _, J = dist_line_point_sq(s.r, s.t, p, s.J_t, s.J_r)
            assert rel_err(J, fd_jacobian(f, q)) <= 1e-6


class TestPointPlane:
    def test_on_plane(self):
        assert dist_point_plane([3, 4, 0], ([0, 0, 1], 0.0))[0] == 0.0

    def test_below(self):
        assert dist_point_plane([0, 0, -3], ([0, 0, 1], 0.0))[0] == -3.0

    def test_fd(self, rng):
        A = rng.normal(size=(4, 3))
        A[0] = 0
        n = np.array([0.6, 0.0, 0.8])
        x = rng.normal(size=3)
        _, J = dist_point_plane(A @ x, (n, 0.5), A)
        assert rel_err(J, fd_jacobian(lambda y: dist_point_plane(A @ y, (n, 0.5))[0], x)) <= 1e-6

    def test_rejects_non_unit_normal(self):
        with pytest.raises(ValueError):
            dist_point_plane([0, 0, 0], ([0, 0, 2], 0.0))


class TestRows:
    def test_safe_boundary(self):
        assert vfi_safe_row(np.ones(3), 0.25, 0.25, 0.01).w[0] == 0.0

    def test_safe_reference_gains(self):
        g = VfiGains()
        r = vfi_safe_row(np.ones(3), 0.0, g.D_R_safe, g.eta_R)
        assert r.w[0] == pytest.approx(0.0025, abs=1e-15)

    def test_restricted_boundary(self):
        assert vfi_restricted_row(np.ones(3), 4.0, 4.0, 1.0).w[0] == 0.0

    def test_restricted_reference_gains(self):
        g = VfiGains()
        r = vfi_restricted_row(np.ones(2), g.D_m_safe + 1.0, g.D_m_safe, g.eta_m)
        assert r.w[0] == pytest.approx(1.0, abs=1e-12)
        assert np.all(r.W == -1.0)

    def test_negative_gain(self):
        with pytest.raises(ValueError):
            vfi_safe_row(np.ones(1), 0, 1, -1)

    def test_joint_limits(self):
        r = joint_limit_rows([0.0, 1.0], [0.0, -1.0], [2.0, 2.0])
        assert r.w[0] == 0.0 and np.all(r.w[1:] > 0)
        assert np.array_equal(r.W[:2], -np.eye(2))

    def test_rows_reject_nan(self):
        with pytest.raises(ValueError):
            ConstraintRows(np.array([[np.nan]]), [0.0])


def scalar_zone_sim(kind, d0, u_des, eta=1.5, dt=1 / 150, ticks=2000):
    """1-DOF x with D = x^2; returns the worst signed margin along the run."""
    D_safe = 1.0
    x = math.sqrt(D_safe - d0) if kind == "safe" else math.sqrt(D_safe + d0)
    worst = math.inf
    for _ in range(ticks):
        D, J = x * x, np.array([2.0 * x])
        row = vfi_safe_row(J, D, D_safe, eta) if kind == "safe" else vfi_restricted_row(J, D, D_safe, eta)
        H, f = np.array([[2.0]]), np.array([-2.0 * u_des])
        u = qpsolve.solve(qpsolve.QpProblem(H + 2e-6 * np.eye(1), f, row.W, row.w))[0]
        x += u * dt
        worst = min(worst, (D_safe - x * x) if kind == "safe" else (x * x - D_safe))
    return worst


@given(st.sampled_from(["safe", "restricted"]), st.floats(0.0, 0.9), st.floats(-5.0, 5.0))
def test_scalar_zone_semantics(kind, d0, u_des):
    assert scalar_zone_sim(kind, d0, u_des, ticks=300) >= -1e-9


@given(st.floats(-1.0, 1.0), st.floats(-20.0, 20.0))
def test_joint_limit_toy(q0, u_des):
    q = q0
    for _ in range(300):
        r = joint_limit_rows([q], [-1.0], [1.0])
        u = qpsolve.solve(qpsolve.QpProblem(np.eye(1), [-u_des], r.W, r.w))[0]
        q += u / 150.0
        assert -1.0 - 1e-9 <= q <= 1.0 + 1e-9


class TestVitreo:
    def test_row_count(self):
        rows = build_vitreo_constraints(SCENE, MODELS, CFG.q0)
        n1, n2 = MODELS[0].n, MODELS[1].n
        assert len(rows) == 8 + (n1 - 1) + (n2 - 1) + 2 * (n1 + n2)
        assert rows.labels[:8] == ["rcm_1", "rcm_2", "retina_2", "shaft_2", "trocar_1", "trocar_2",
                                   "micro_1", "micro_2"]

    def test_initial_right_sides_nonnegative(self):
        assert np.all(build_vitreo_constraints(SCENE, MODELS, CFG.q0).w >= 0.0)

    def test_distance_jacobians_fd(self, rng):
        for q in feasible_near_start(rng, 10):
            t = vitreo_terms(SCENE, MODELS, q)
            keys = list(t.D)
            N = fd_jacobian(lambda x: np.array([vitreo_terms(SCENE, MODELS, x).D[k] for k in keys]), q)
            for i, k in enumerate(keys):
                W = t.rows.W[t.rows.labels.index(k)]
                J = W if k in SAFE_KEYS else -W
                assert rel_err(J, N[i]) <= 1e-5, k

    def test_mirrored_shafts_give_equal_rcm_rows(self):
        from shadowpos.kinematics import SerialManipulator, chain_state
        from shadowpos.scene import EyeScene
        m1 = MODELS[0]
        w, x, y, z = m1.base_rotation
        m2 = SerialManipulator(joints=m1.joints, q_min=m1.q_min, q_max=m1.q_max,
                               base_rotation=(w, x, -y, -z),
                               base_translation=(-m1.base_translation[0], *m1.base_translation[1:]),
                               tool=m1.tool)
        q1 = CFG.q0[:6]
        s1 = chain_state(m1, q1)
        # second arm placed by IK at the mirror image (x -> -x) of the first tip and shaft
        from shadowpos.kinematics import solve_tool_pose
        tip = s1.t[1:] * [-1, 1, 1]
        d = s1.axes[-1] * [-1, 1, 1]
        q2 = solve_tool_pose(m2, -q1, tip, d, iters=500, tol=1e-12)
        rcm = SCENE.rcm_R1
        sc = EyeScene(SCENE.eye_center, SCENE.retina_plane_z, SCENE.view_center, SCENE.r_ws,
                      rcm, (-rcm[0], rcm[1], rcm[2]), SCENE.robot_planes, SCENE.theta_c2_safe,
                      SCENE.gains)
        t = vitreo_terms(sc, (m1, m2), np.concatenate((q1, q2)))
        assert t.D["rcm_1"] == pytest.approx(t.D["rcm_2"], abs=1e-9)
        assert t.rows.w[0] == pytest.approx(t.rows.w[1], abs=1e-9)
