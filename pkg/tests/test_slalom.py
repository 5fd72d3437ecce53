import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from controltrees.slalom import (
    ObstacleHyp,
    Pose2,
    SlalomCost,
    SlalomCostParams,
    build_slalom_problem,
    corridor_init,
    fd_velocity,
    nonholonomic_residual,
    obstacle_clearance,
    plan_slalom,
    slalom_hypotheses,
    stage_costs,
    straight_rollout,
    wrap_angle,
)
from controltrees.solver import solve
from controltrees.tree import HorizonSpec, Resolution

H = HorizonSpec()
Q_CUR = np.array([0.0, 0.0, 0.0])
Q_PREV = np.array([-2.5, 0.0, 0.0])  # 10 m/s


@settings(max_examples=100)
@given(st.floats(-50, 50))
def test_wrap_angle_range_and_period(a):
    w = wrap_angle(a)
    assert -math.pi <= w < math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_pose_wraps_heading():
    assert Pose2(1.0, 2.0, 2.5 * math.pi).theta == pytest.approx(0.5 * math.pi)


def test_forward_motion_has_no_lateral_slip():
    q_tm1 = np.array([1.0, 2.0, 0.7])
    q_t = q_tm1 + 0.25 * np.array([5 * math.cos(0.7), 5 * math.sin(0.7), 0.0])
    assert nonholonomic_residual(q_t, q_tm1, 0.25) == pytest.approx(0.0, abs=1e-12)
    sideways = q_tm1 + np.array([-math.sin(0.7), math.cos(0.7), 0.0])
    assert abs(nonholonomic_residual(sideways, q_tm1, 0.25)) > 1.0


def test_fd_velocity_wraps_the_heading_difference():
    v = fd_velocity([0.0, 0.0, -3.1], [0.0, 0.0, 3.1], 0.5)
    assert v[2] == pytest.approx(wrap_angle(-6.2) / 0.5)


def test_clearance_sign():
    o = ObstacleHyp((10.0, 0.0), 0.5, 1.0)
    assert obstacle_clearance([10.0, 3.0, 0.0], o, 1.0) < 0.0
    assert obstacle_clearance([10.0, 1.0, 0.0], o, 1.0) == pytest.approx(0.5)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-0.5, 0.5), min_size=3 * H.total_steps, max_size=3 * H.total_steps),
       st.floats(0.0, 2.0), st.floats(-1.0, 1.0))
def test_stage_costs_sum_to_the_cost_term(noise, w_center, y_center):
    params = SlalomCostParams(w_center=w_center, y_center=y_center)
    z = straight_rollout(Q_CUR, Q_PREV, H) + np.reshape(noise, (H.total_steps, 3))
    cost = SlalomCost(Q_CUR, Q_PREV, params, H)
    expect = stage_costs(Q_CUR, Q_PREV, z, params, H.dt).sum()
    assert cost.value(z.ravel()) == pytest.approx(expect, rel=1e-9, abs=1e-9)


def test_straight_drive_at_desired_speed_costs_nothing():
    z = straight_rollout(Q_CUR, Q_PREV, H)
    assert np.abs(stage_costs(Q_CUR, Q_PREV, z, SlalomCostParams(), H.dt)).max() < 1e-9


def test_hypotheses_enumerate_existence_combinations():
    obs = [ObstacleHyp((10.0, 0.0), 0.5, 0.3, ident=1),
           ObstacleHyp((20.0, 0.0), 0.5, 0.6, ident=2),
           ObstacleHyp((30.0, 0.0), 0.5, 1.0, Resolution.TRUE, ident=3)]
    hyps = slalom_hypotheses(obs)
    assert len(hyps) == 4
    assert [h[2] for h in hyps] == ["present:1,2", "present:1", "present:2", "present:"]
    assert all(any(o.ident == 3 for o in h[0]) for h in hyps)
    assert sum(h[1] for h in hyps) == 1.0
    with pytest.raises(ValueError):
        slalom_hypotheses(obs, max_uncertain=1)


def test_corridor_init_clears_every_present_obstacle():
    obs = [ObstacleHyp((15.0, 0.2), 0.5, 1.0, ident=0),
           ObstacleHyp((32.0, -0.3), 0.5, 1.0, ident=1)]
    params = SlalomCostParams()
    z = corridor_init(Q_CUR, Q_PREV, obs, params, H)
    for o in obs:
        gap = np.hypot(z[:, 0] - o.center[0], z[:, 1] - o.center[1]).min()
        assert gap >= o.radius + params.d_avoid - 1e-9
    assert np.all(np.abs(np.diff(z[:, 2])) < 1.0)


def test_empty_road_plan_drives_straight_at_the_desired_speed():
    tree, report = plan_slalom(Q_CUR, Q_PREV, [])
    assert report.converged and len(tree.branches) == 1
    z = tree.branches[0]
    np.testing.assert_allclose(z[:, 1], 0.0, atol=1e-3)
    speed = np.hypot(*np.diff(z[:, :2], axis=0).T) / H.dt
    np.testing.assert_allclose(speed, SlalomCostParams().v_desired, atol=1e-2)


def test_plan_avoids_a_certain_obstacle_and_hedges_an_uncertain_one():
    obs = [ObstacleHyp((12.0, 0.0), 0.5, 1.0, Resolution.TRUE, ident=0),
           ObstacleHyp((30.0, 0.0), 0.5, 0.5, ident=1)]
    tree, report = plan_slalom(Q_CUR, Q_PREV, obs)
    assert len(tree.branches) == 2
    d = SlalomCostParams().d_avoid
    for z in tree.branches:
        gap = np.hypot(z[:, 0] - 12.0, z[:, 1]).min()
        assert gap >= 0.5 + d - 1e-2
    # the absent-obstacle branch returns towards the centre line faster
    present, absent = tree.branches
    assert abs(absent[-1, 1]) <= abs(present[-1, 1]) + 1e-6


def test_compiled_kernel_and_python_terms_reach_the_same_plan():
    obs = [ObstacleHyp((14.0, 0.3), 0.5, 0.5, ident=0)]
    z0 = [straight_rollout(Q_CUR, Q_PREV, H)] * 2
    fast = solve(build_slalom_problem(Q_CUR, Q_PREV, obs, SlalomCostParams(), H), z0)
    slow = solve(build_slalom_problem(Q_CUR, Q_PREV, obs, SlalomCostParams(), H, compiled=False),
                 z0, fused=False)
    for a, b in zip(fast[0].branches, slow[0].branches):
        assert np.max(np.abs(a - b)) <= 1e-6


def test_bad_inputs_are_rejected():
    with pytest.raises(ValueError):
        ObstacleHyp((0.0, 0.0), 0.0, 0.5)
    with pytest.raises(ValueError):
        ObstacleHyp((0.0, 0.0), 0.5, 1.5)
    with pytest.raises(ValueError):
        SlalomCostParams(w_acc=-1.0)
    with pytest.raises(ValueError):
        plan_slalom([0.0, 0.0], Q_PREV, [])
