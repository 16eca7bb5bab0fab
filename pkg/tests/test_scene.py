import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shadowpos.geomvfi import arm_states
from shadowpos.kinematics import solve_tool_pose
from shadowpos.scene import (
    DegenerateRay, EyeScene, ViewPoint, constraint_margins, shadow_tip, validate_premise_iii,
    view_distances,
)

coord = st.floats(-5.0, 5.0)


class TestShadowTip:
    def test_hand_example(self):
        # ray (10,0,10) -> (1,0,5) meets z = 0 at s = 2: (10,0) + 2 * (-9,0) = (-8, 0)
        assert shadow_tip([10, 0, 10], [1, 0, 5]).as_array() == pytest.approx([-8.0, 0.0])

    def test_vertical_ray(self):
        assert shadow_tip([1, 2, 9], [1, 2, 3]).as_array() == pytest.approx([1.0, 2.0])

    def test_degenerate(self):
        with pytest.raises(DegenerateRay):
            shadow_tip([0, 0, 1], [0, 0, 1])
        with pytest.raises(DegenerateRay):
            shadow_tip([0, 0, 1], [0, 0, 2])

    @given(coord, coord, st.floats(0.5, 10.0), coord, coord, st.floats(0.1, 5.0))
    def test_collinear_with_light_and_tip(self, lx, ly, lz, sx, sy, sz):
        lg = np.array([lx, ly, sz + lz])
        si = np.array([sx, sy, sz])
        p = np.array([*shadow_tip(lg, si).as_array(), 0.0])
        assert np.linalg.norm(np.cross(si - lg, p - lg)) <= 1e-8 * max(1.0, np.linalg.norm(p - lg) ** 2)

    @given(coord, coord, st.floats(0.5, 10.0), coord, coord, st.floats(0.1, 5.0), st.floats(0.1, 10.0))
    def test_scale_about_plane_point(self, lx, ly, lz, sx, sy, sz, k):
        # scaling the whole scene about a retina point scales the shadow the same way
        lg = np.array([lx, ly, sz + lz])
        si = np.array([sx, sy, sz])
        a = shadow_tip(lg, si).as_array()
        b = shadow_tip(k * lg, k * si).as_array()
        assert b == pytest.approx(k * a, abs=1e-9 * max(1.0, k * np.max(np.abs(a))))

    def test_plane_offset(self):
        a = shadow_tip([0, 0, 12], [1, 0, 6], retina_plane_z=2.0).as_array()
        assert a == pytest.approx([5.0 / 3.0, 0.0])


class TestViewDistances:
    def test_tip_distance(self):
        # light straight above at height 2, tip at height 1 offset by 0.5 -> shadow at 1.0
        d_shaft, d_tip = view_distances([0, 0, 2], [0.5, 0, 1], [0, 0, -1])
        assert d_tip == pytest.approx(0.5)
        assert d_shaft == pytest.approx(0.5)

    def test_on_retina(self):
        d_shaft, d_tip = view_distances([3, 1, 4], [0.2, 0.3, 0.0], [1, 0, -1])
        assert d_tip == pytest.approx(0.0, abs=1e-12) and d_shaft == pytest.approx(0.0, abs=1e-12)

    def test_shadow_beside_shaft(self):
        # shaft comes from +x; light at half the tip height mirrors the shadow to (2, 1)
        d_shaft, d_tip = view_distances([-2, -1, 2], [0, 0, 1], [-1, 0, -1])
        assert d_tip == pytest.approx(math.sqrt(5.0))
        assert d_shaft == pytest.approx(1.0)

    def test_vertical_shaft(self):
        d_shaft, d_tip = view_distances([1, 0, 2], [0, 0, 1], [0, 0, -1])
        assert d_shaft == d_tip

    def test_descent_shrinks_gap(self):
        lg = np.array([-4.0, -2.4, 5.2])
        gaps = [view_distances(lg, [0.3, 0.1, z], [1, 0, -1])[1] for z in np.linspace(2.0, 0.0, 21)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] == pytest.approx(0.0, abs=1e-12)


class TestEyeScene:
    def make(self, **kw):
        base = dict(eye_center=(0, 0, 12), retina_plane_z=0.0, view_center=(0, 0, 0), r_ws=3.5,
                    rcm_R1=(10, -6, 11.5), rcm_R2=(-10, -6, 11.5),
                    robot_planes=(((1, 0, 0), 0.0), ((-1, 0, 0), 0.0)))
        base.update(kw)
        return EyeScene(**base)

    def test_valid(self):
        s = self.make()
        assert s.in_workspace([3.5, 0.0]) and not s.in_workspace([3.6, 0.0])

    @pytest.mark.parametrize("kw", [
        dict(r_ws=0.0),
        dict(theta_c2_safe=2.0),
        dict(rcm_R1=(10, -6, 13.0)),
        dict(view_center=(0, 0, 1)),
        dict(robot_planes=(((2, 0, 0), 0.0), ((-1, 0, 0), 0.0))),
        dict(robot_planes=(((1, 0, 0), 0.0),)),
        dict(rcm_R2=(1, 2)),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            self.make(**kw)

    def test_view_point_validation(self):
        with pytest.raises(ValueError):
            ViewPoint(math.nan, 0.0)
        assert ViewPoint(3.0, 4.0).distance([0.0, 0.0]) == 5.0


class TestPremise:
    def test_default_start_holds(self, cfg):
        rep = validate_premise_iii(cfg.scene, cfg.models, cfg.q0)
        assert rep.ok, rep.failures
        assert rep.margin("cone_light") > 0 and rep.margin("lg_above") > 0

    def test_light_guide_below_tip_flagged(self, cfg):
        m2 = cfg.models[1]
        n1 = cfg.models[0].n
        rcm = np.array(cfg.scene.rcm_R2)
        target = np.array([-2.0, -1.2, 0.5])
        q2 = solve_tool_pose(m2, cfg.q0[n1:], target, target - rcm)
        q = np.concatenate((cfg.q0[:n1], q2))
        _, s2 = arm_states(cfg.models, q)
        assert s2.t[1:] == pytest.approx(target, abs=1e-6)
        rep = validate_premise_iii(cfg.scene, cfg.models, q)
        assert not rep.ok
        assert "lg_above" in [c.name for c in rep.failures]

    def test_joint_at_limit_is_boundary_pass(self, cfg):
        m1 = cfg.models[0]
        q_min = m1.q_min.copy()
        q_min[0] = cfg.q0[0]
        pinned = dataclasses.replace(m1, q_min=q_min)
        rep = validate_premise_iii(cfg.scene, (pinned, cfg.models[1]), cfg.q0)
        jl = next(c for c in rep.checks if c.name == "jl_1")
        assert jl.margin == 0.0 and jl.passed and jl.boundary
        assert rep.ok

    def test_margins_cover_every_zone(self, cfg):
        m = constraint_margins(cfg.scene, cfg.models, cfg.q0)
        for key in ("rcm_1", "rcm_2", "retina_2", "shaft_2", "trocar_1", "trocar_2",
                    "micro_1", "micro_2", "tip", "jl_1", "jl_2", "cone_view", "cone_light"):
            assert key in m
        assert any(k.startswith("plane_") for k in m)
