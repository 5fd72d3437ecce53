import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from controltrees.solver.config import ConfigError
from controltrees.sim import (
    SLALOM,
    BatchSpec,
    Observation,
    ScenarioConfig,
    generate_scene,
    oracle_perception,
    parse_controller,
    parse_seeds,
    run_batch,
    run_episode,
    simulate_perception,
    unicycle_step,
)
from controltrees.sim.batch import effective_controller
from controltrees.tree import Resolution

SHORT_ACC = ScenarioConfig(duration=8.0, density_per_km=80, crossing_fraction=0.25, seed=3)
SHORT_SLALOM = ScenarioConfig(kind=SLALOM, duration=4.0, control_rate=4, seed=2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["pedestrian-acc", SLALOM]))
def test_scene_is_a_function_of_the_config(seed, kind):
    cfg = ScenarioConfig(kind=kind, seed=seed, duration=20.0)
    a, b = generate_scene(cfg), generate_scene(cfg)
    assert a == b
    xs = [e.x for e in a]
    assert xs == sorted(xs)


def test_pedestrian_density_matches_the_configured_rate():
    cfg = ScenarioConfig(density_per_km=80, duration=300.0, seed=0)
    scene = generate_scene(cfg)
    length = 15.0 * cfg.duration + 200.0
    assert len(scene) / length * 1000 == pytest.approx(80, rel=0.1)
    assert generate_scene(cfg.replace(density_per_km=0)) == ()


def test_false_positive_rate_sets_obstacle_existence():
    scene = generate_scene(ScenarioConfig(kind=SLALOM, duration=300.0, false_positive_rate=0.75))
    real = np.mean([e.truth for e in scene])
    assert real == pytest.approx(0.25, abs=0.05)
    assert all(e.prior == 0.25 for e in scene)


def test_perception_resolves_inside_the_reveal_distance():
    scene = generate_scene(ScenarioConfig(kind=SLALOM, duration=60.0, seed=5))
    e = scene[3]
    far = {o.ident: o for o in simulate_perception(scene, e.x - e.reveal_distance - 1.0)}
    assert far[e.ident].resolved is Resolution.UNCERTAIN
    assert far[e.ident].prob == e.prior
    near = {o.ident: o for o in simulate_perception(scene, e.x - e.reveal_distance + 0.5)}
    if e.truth:
        assert near[e.ident] == Observation(e.ident, e.x, e.y, 1.0, Resolution.TRUE)
    else:
        assert e.ident not in near


def test_oracle_perception_reports_only_true_entities():
    scene = generate_scene(ScenarioConfig(kind=SLALOM, duration=60.0, seed=5))
    obs = oracle_perception(scene, 0.0)
    truth = {e.ident for e in scene if e.truth and e.x <= 150.0}
    assert {o.ident for o in obs} == truth
    assert all(o.resolved is Resolution.TRUE for o in obs)


def test_unicycle_step_moves_along_the_heading():
    q = unicycle_step(np.array([1.0, 1.0, math.pi / 2]), 2.0, 0.0, 0.5)
    np.testing.assert_allclose(q, [1.0, 2.0, math.pi / 2], atol=1e-12)


@pytest.mark.parametrize("text,expect", [("0-3, 7", (0, 1, 2, 3, 7)), ("5", (5,)),
                                         ("2,2,1", (2, 1))])
def test_parse_seeds(text, expect):
    assert parse_seeds(text) == expect


@pytest.mark.parametrize("text", ["", "3-1", "a", "-2"])
def test_parse_seeds_rejects(text):
    with pytest.raises(ConfigError):
        parse_seeds(text)


def test_controller_names():
    assert parse_controller("tree-2").max_branches == 2
    assert parse_controller("baseline").name == "single"
    assert parse_controller("oracle").oracle
    with pytest.raises(ValueError):
        parse_controller("tree-0")


def test_controllers_resolving_to_the_same_planner_share_a_key():
    low = ScenarioConfig(density_per_km=20)
    assert effective_controller("tree-full", low) == effective_controller("tree-2", low)
    high = low.replace(density_per_km=80)
    assert effective_controller("tree-full", high) != effective_controller("tree-2", high)
    slalom = ScenarioConfig(kind=SLALOM)
    assert effective_controller("tree-4", slalom) == ("enumerate", 2)


def test_scenario_validation():
    with pytest.raises(ConfigError):
        ScenarioConfig(kind="rally")
    with pytest.raises(ConfigError):
        ScenarioConfig(false_positive_rate=1.5)
    with pytest.raises(ConfigError):
        ScenarioConfig.from_mapping({"duration": "soon"})
    with pytest.raises(ConfigError):
        ScenarioConfig.from_mapping({"colour": "red"})
    assert ScenarioConfig.from_mapping({"seed": "4", "initial_speed": "none"}).seed == 4


@pytest.mark.parametrize("cfg,controller", [(SHORT_ACC, "tree-full"), (SHORT_SLALOM, "tree-4")])
def test_episodes_are_reproducible(cfg, controller):
    a = run_episode(cfg, controller, keep_trace=True)
    b = run_episode(cfg, controller, keep_trace=True)
    assert a.key() == b.key()
    assert a.trace == b.trace
    assert a.steps == cfg.n_steps
    assert a.collisions == 0


def test_worker_count_does_not_change_an_episode():
    a = run_episode(SHORT_ACC, "tree-full", workers=1)
    b = run_episode(SHORT_ACC, "tree-full", workers=3)
    assert a.key() == b.key()


def test_batch_rows_equal_single_episodes_and_follow_job_order():
    spec = BatchSpec(SHORT_ACC, (3, 4), ("tree-full", "single"))
    result = run_batch(spec)
    assert [(r.metrics.seed, r.metrics.controller) for r in result.rows] == [
        (3, "tree-full"), (3, "single"), (4, "tree-full"), (4, "single")]
    ref = run_episode(SHORT_ACC.replace(seed=4), "single")
    assert result.rows[3].metrics.key() == ref.key()
    summary = result.summary()
    assert [s["controller"] for s in summary] == ["tree-full", "single"]
    assert summary[0]["episodes"] == 2


def test_batch_shares_episodes_between_equivalent_controllers():
    cfg = SHORT_ACC.replace(density_per_km=20)
    calls = []
    result = run_batch(BatchSpec(cfg, (1,), ("tree-full", "tree-2")),
                       progress=lambda done, total: calls.append(total))
    assert calls == [1]
    a, b = result.rows
    assert (a.metrics.controller, b.metrics.controller) == ("tree-full", "tree-2")
    assert a.metrics.key()[2:] == b.metrics.key()[2:]


def test_batch_spec_from_config(tmp_path):
    path = tmp_path / "b.cfg"
    path.write_text("[scenario]\nduration = 5\n[batch]\nseeds = 0-1\ncontrollers = single\n"
                    "[cell dense]\ndensity_per_km = 80\n")
    spec = BatchSpec.from_file(path)
    assert spec.seeds == (0, 1)
    assert spec.cells[0][0] == "dense" and spec.cells[0][1].density_per_km == 80
    assert spec.cells[0][1].duration == 5
    path.write_text("[scenario]\n[batch]\ncontrollers = warp-drive\n")
    with pytest.raises(ConfigError):
        BatchSpec.from_file(path)
