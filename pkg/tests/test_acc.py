import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from controltrees.acc import (
    FREE,
    AccCostParams,
    CarState,
    PedestrianObs,
    acc_hypotheses,
    build_acc_problem,
    condense_branch,
    max_branch_count,
    plan_acc,
    plan_acc_single,
    relevant_pedestrians,
    rollout,
    stage_costs,
    stop_feasible,
    trunk_cost,
)
from controltrees.tree import HorizonSpec, Resolution

from oracles import car_rollout

H = HorizonSpec()
THREE_PEDS = [PedestrianObs(25.0, 0.15, ident=0), PedestrianObs(35.0, 0.15, ident=1),
              PedestrianObs(45.0, 0.15, ident=2)]
V48 = 48 / 3.6


@settings(max_examples=50)
@given(st.floats(-50, 50), st.floats(0, 15), st.lists(st.floats(-8, 2), min_size=1, max_size=25))
def test_rollout_matches_the_step_loop(x0, v0, u):
    x, v = rollout(CarState(x0, v0), u, 0.25)
    xs, vs = car_rollout(x0, v0, u, 0.25)
    np.testing.assert_allclose(x, xs, atol=1e-9)
    np.testing.assert_allclose(v, vs, atol=1e-9)


@settings(max_examples=30)
@given(st.floats(0, 15), st.lists(st.floats(-8, 2), min_size=20, max_size=20))
def test_condensed_cost_equals_the_stage_cost_sum(v0, u):
    params = AccCostParams()
    branch = condense_branch(CarState(3.0, v0), params, None, H, 1.0)
    expect = stage_costs(CarState(3.0, v0), u, params, H.dt).sum()
    assert branch.cost.value(np.array(u)) == pytest.approx(expect, rel=1e-10, abs=1e-8)


def test_stop_constraint_rows_are_predicted_positions():
    params = AccCostParams()
    state = CarState(0.0, 10.0)
    branch = condense_branch(state, params, 40.0, H, 1.0)
    u = np.linspace(-3, 1, H.total_steps)
    x, _ = rollout(state, u, H.dt)
    g = branch.ineq.value(u)[-H.total_steps:]
    np.testing.assert_allclose(g, x - (40.0 - params.d_safety), atol=1e-9)


def test_unreachable_stop_is_softened():
    params = AccCostParams()
    state = CarState(0.0, 13.0)
    assert not stop_feasible(state, 5.0, params, H)
    branch = condense_branch(state, params, 7.0, H, 1.0)
    assert branch.ineq.dim == 2 * H.total_steps


def test_three_pedestrian_hypotheses_and_weights():
    hyps = acc_hypotheses(THREE_PEDS)
    assert [h[0] for h in hyps] == [25.0, 35.0, 45.0, None]
    assert hyps[-1][1] == 0.614125 and hyps[-1][2] == FREE
    assert sum(h[1] for h in hyps) == pytest.approx(1.0, abs=1e-15)


def test_cap_merges_far_hypotheses_into_one_stop():
    hyps = acc_hypotheses(THREE_PEDS, cap=2)
    assert [h[0] for h in hyps] == [25.0, None]
    assert hyps[1][1] == 0.614125
    single = acc_hypotheses(THREE_PEDS, cap=1)
    assert single == [(25.0, 1.0, THREE_PEDS[0].key)]
    with pytest.raises(ValueError):
        acc_hypotheses(THREE_PEDS, cap=0)


def test_resolved_and_passed_pedestrians_are_dropped():
    peds = [PedestrianObs(-5.0, 0.5), PedestrianObs(20.0, 0.0, Resolution.FALSE),
            PedestrianObs(30.0, 1.0, Resolution.TRUE), PedestrianObs(500.0, 0.5)]
    keep = relevant_pedestrians(CarState(0.0, 10.0), peds, AccCostParams(), H)
    assert [p.position for p in keep] == [30.0]


def test_resolution_must_agree_with_probability():
    with pytest.raises(ValueError):
        PedestrianObs(10.0, 0.5, Resolution.TRUE)
    with pytest.raises(ValueError):
        PedestrianObs(10.0, 1.2)


def test_branch_count_envelope():
    # 13.9 m/s for 5 s minus a 12.1 m braking distance leaves 57.4 m of road
    assert max_branch_count(80) == 5
    assert max_branch_count(20) == 2
    assert max_branch_count(0) == 1
    assert max_branch_count(80, cap=2) == 2


def test_three_pedestrian_plan_brakes_on_the_trunk_and_keeps_speed_on_free_road():
    state = CarState(0.0, V48)
    tree, report = plan_acc(state, THREE_PEDS)
    assert report.converged
    assert len(tree.branches) == 4
    assert tree.first_control[0] < 0.0
    free = tree.branches[-1][H.trunk_steps:, 0]
    stop = tree.branches[0][H.trunk_steps:, 0]
    assert free.mean() > stop.mean()
    _, v_free = rollout(state, tree.branches[-1][:, 0], H.dt)
    assert v_free[-1] > 10.0


def test_single_hypothesis_plans_harder_braking_than_the_tree():
    state = CarState(0.0, V48)
    tree, _ = plan_acc(state, THREE_PEDS)
    single, _ = plan_acc_single(state, THREE_PEDS)
    assert len(single.branches) == 1
    assert single.first_control[0] < tree.first_control[0]
    assert trunk_cost(single, state) > trunk_cost(tree, state)


def test_empty_road_plan_accelerates_towards_the_desired_speed():
    tree, report = plan_acc(CarState(0.0, 8.0), [])
    assert report.converged and len(tree.branches) == 1
    assert tree.first_control[0] == pytest.approx(AccCostParams().u_max, abs=1e-2)


def test_problem_weights_follow_the_belief():
    problem = build_acc_problem(CarState(0.0, V48), THREE_PEDS, AccCostParams(), H)
    assert problem.weights.tolist()[-1] == 0.614125
    assert [b.label for b in problem.branches] == [p.key for p in THREE_PEDS] + [FREE]
