import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from controltrees.slalom import existence_weights
from controltrees.terms import QuadraticCost
from controltrees.tree import (
    BeliefError,
    BranchProblem,
    ControlTree,
    HorizonSpec,
    ProblemError,
    build_tree_problem,
    crossing_belief,
    exact_distribution,
    validate_belief,
)

probs = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
# probabilities on a 0.001 grid; an exact unit sum needs an entry that can
# absorb the rounding repair, which products of tiny probabilities cannot
decimal_probs = st.integers(0, 1000).map(lambda k: k / 1000)


def _naive_crossing(ps):
    out, keep = [], 1.0
    for p in ps:
        out.append(p * keep)
        keep *= 1.0 - p
    return out + [keep]


def test_crossing_belief_three_pedestrians_free_road_entry():
    b = crossing_belief([0.15, 0.15, 0.15])
    assert b[3] == 0.614125
    assert b[0] == 0.15
    np.testing.assert_allclose(b.probs, _naive_crossing([0.15] * 3), rtol=1e-15)


def test_crossing_belief_no_pedestrian_is_certain_free_road():
    assert crossing_belief([]).probs.tolist() == [1.0]


def test_crossing_belief_certain_crossing_takes_all_mass():
    b = crossing_belief([1.0, 0.3])
    assert b.probs.tolist() == [1.0, 0.0, 0.0]


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
def test_crossing_belief_rejects_bad_probabilities(bad):
    with pytest.raises(BeliefError):
        crossing_belief([0.2, bad])


@given(st.lists(decimal_probs, max_size=8))
def test_crossing_belief_is_a_distribution(ps):
    b = crossing_belief(ps)
    assert len(b) == len(ps) + 1
    assert np.all(b.probs >= 0.0)
    assert sum(Fraction(x) for x in b.probs.tolist()) == 1
    np.testing.assert_allclose(b.probs, _naive_crossing(ps), atol=1e-12)


@given(st.lists(decimal_probs, max_size=4))
def test_existence_weights_sum_to_one_exactly(ps):
    combos = existence_weights(ps)
    assert len(combos) == 2 ** len(ps)
    w = [c[1] for c in combos]
    assert sum(Fraction(x) for x in w) == 1
    assert math.fsum(w) == 1.0
    assert all(x >= 0 for x in w)


def test_existence_weights_order_puts_all_present_first():
    combos = existence_weights([0.25, 0.5])
    assert [c[0] for c in combos] == [(True, True), (True, False), (False, True), (False, False)]
    assert [c[1] for c in combos] == [0.125, 0.125, 0.375, 0.375]


@given(st.lists(st.integers(1, 1000), min_size=1, max_size=12))
def test_exact_distribution_rounds_to_a_unit_sum(raw):
    total = sum(raw)
    w = [Fraction(r, total) for r in raw]
    out = exact_distribution(w)
    assert sum(Fraction(x) for x in out) == 1
    for a, e in zip(out, w):
        assert abs(a - float(e)) <= 1e-12


def test_exact_distribution_rejects_inexact_total():
    with pytest.raises(BeliefError):
        exact_distribution([Fraction(1, 3), Fraction(1, 3)])


@pytest.mark.parametrize("bad", [[0.5, 0.6], [1.2, -0.2], [], [np.inf]])
def test_validate_belief_rejects(bad):
    with pytest.raises(BeliefError):
        validate_belief(bad)


def test_belief_is_read_only():
    b = validate_belief([0.25, 0.75])
    with pytest.raises(ValueError):
        b.probs[0] = 1.0


@pytest.mark.parametrize("L,T", [(0, 5), (5, 5), (6, 5)])
def test_horizon_requires_trunk_shorter_than_branches(L, T):
    with pytest.raises(ProblemError):
        HorizonSpec(L, T, 0.1)


def _branch(weight, T=5, d=2):
    n = T * d
    return BranchProblem(weight=weight, cost=QuadraticCost(np.eye(n)), steps=T, dim=d)


def test_tree_problem_keeps_branch_order_and_weights():
    p = build_tree_problem([_branch(0.25), _branch(0.75)], HorizonSpec(2, 5, 0.1))
    assert p.n_branches == 2
    assert p.weights.tolist() == [0.25, 0.75]
    assert p.var_dim == 2


def test_tree_problem_validation():
    h = HorizonSpec(2, 5, 0.1)
    with pytest.raises(ProblemError):
        build_tree_problem([], h)
    with pytest.raises(BeliefError):
        build_tree_problem([_branch(0.5), _branch(0.4)], h)
    with pytest.raises(ProblemError):
        build_tree_problem([_branch(0.5), _branch(0.5, T=6)], h)
    with pytest.raises(ProblemError):
        build_tree_problem([_branch(0.5), _branch(0.5, d=1)], h)


def test_branch_rejects_mismatched_term_size():
    with pytest.raises(ProblemError):
        BranchProblem(weight=1.0, cost=QuadraticCost(np.eye(4)), steps=5, dim=1)


def test_zero_weight_branch_keeps_a_cost_floor():
    assert _branch(0.0).cost_weight == 1e-6
    assert _branch(0.3).cost_weight == 0.3


def test_control_tree_shapes_and_disagreement():
    h = HorizonSpec(2, 4, 0.1)
    a = np.zeros((4, 1))
    b = np.ones((4, 1))
    tree = ControlTree(h, (a, b), np.full((2, 1), 0.5), (0.5, 0.5))
    assert tree.trunk_disagreement() == 0.5
    assert tree.first_control.tolist() == [0.5]
    with pytest.raises(ProblemError):
        ControlTree(h, (a, np.ones((3, 1))), np.zeros((2, 1)))
    with pytest.raises(ProblemError):
        ControlTree(h, (a,), np.zeros((3, 1)))


@settings(max_examples=50)
@given(st.lists(probs, min_size=1, max_size=6))
def test_crossing_belief_is_close_to_the_float_products(ps):
    b = crossing_belief(ps)
    assert abs(b[0] - ps[0]) <= 1e-15
    assert abs(math.fsum(b.probs) - 1.0) <= 1e-15
