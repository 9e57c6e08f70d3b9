import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from policysteer.env import (
    EPISODE_HORIZON,
    EpisodeRecord,
    WorldState,
    canonical_state,
    generate_demos,
    initial_state_for,
    observe,
    read_episodes,
    reset,
    rollout,
    scripted_actions,
    step,
    write_episodes,
)
from policysteer.exceptions import ConfigurationError
from policysteer.narration import FeatureConfig, extract_features
from policysteer.objects import GRIP_CLOSE_THRESHOLD, MAX_STEP

action = st.tuples(
    st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.5, 1.5)
).map(np.array)


def test_canonical_observation_golden():
    expected = [0.5, 0.75, 1.0, 0.5, 0.3, 0.0, 1.0, 1.0, 0.0, 0.0]
    np.testing.assert_array_equal(observe(canonical_state("cup")), expected)


def test_dropped_flag_encoding():
    s = WorldState(dropped=True)
    assert observe(s)[9] == 1.0


def test_far_zero_delta_changes_only_grip():
    s = WorldState(ee_pos=(0.1, 0.9))
    nxt = step(s, [0.0, 0.0, 0.2])
    assert nxt.ee_grip == 0.2
    assert nxt.ee_pos == s.ee_pos and nxt.obj_pos == s.obj_pos
    assert (nxt.held_region, nxt.crush, nxt.obj_upright, nxt.dropped) == ("none", 0.0, True, False)


def test_action_is_clamped():
    s = canonical_state()
    nxt = step(s, [1.0, -1.0, 3.0])
    assert nxt.ee_pos == pytest.approx((0.5 + MAX_STEP, 0.75 - MAX_STEP))
    assert nxt.ee_grip == 1.0


@pytest.mark.parametrize("task,mode", [("cup", "handle"), ("cup", "rim"), ("bag", "edge")])
def test_scripted_grasp_holds_region_after_64_steps(task, mode):
    state = reset(task, 7)
    acts = scripted_actions(state, mode)[:64]
    _, final = rollout(state, acts)
    assert final.held_region == mode
    assert final.crush == 0.0


def test_squeezing_the_middle_crushes():
    kind_threshold = FeatureConfig().crush_heavy
    state = reset("bag", 3)
    _, final = rollout(state, scripted_actions(state, "middle")[:64])
    assert final.held_region == "middle"
    assert final.crush > kind_threshold


def test_fast_contact_topples():
    acts = np.zeros((30, 3))
    acts[:, 1] = -MAX_STEP
    acts[:, 2] = 1.0
    obs, final = rollout(canonical_state("cup"), acts)
    assert not final.obj_upright
    f = extract_features(obs, FeatureConfig.for_task("cup"))
    assert f.toppled and not f.grasp_succeeded


def test_demos_labels_match_mode():
    demos = generate_demos("cup", 50, ["handle", "rim"], 0)
    assert len(demos) == 100
    assert sum(d.behavior_label.first_contact_region == "handle" for d in demos) == 50
    assert all(d.behavior_label.first_contact_region == d.mode_hint for d in demos)
    assert all(len(d.observations) == EPISODE_HORIZON + 1 for d in demos)


def test_demos_empty_and_unknown_mode():
    assert generate_demos("cup", 0, ["handle"], 0) == []
    with pytest.raises(ConfigurationError):
        generate_demos("cup", 2, ["middle"], 0)
    with pytest.raises(ConfigurationError):
        generate_demos("cup", 2, [], 0)


def test_demos_deterministic():
    a = generate_demos("bag", 3, ["edge", "middle"], 5)
    b = generate_demos("bag", 3, ["edge", "middle"], 5)
    assert [x.to_json() for x in a] == [y.to_json() for y in b]


def test_label_reproducible_from_observations():
    for ep in generate_demos("cup", 4, ["handle", "rim"], 1):
        assert extract_features(ep.observations, FeatureConfig.for_task("cup")) == ep.behavior_label
        np.testing.assert_allclose(observe(initial_state_for(ep)), ep.observations[0], atol=1e-12)


def test_episode_jsonl_round_trip(tmp_path):
    eps = generate_demos("cup", 2, ["handle"], 0)
    path = tmp_path / "eps.jsonl"
    write_episodes(path, eps)
    back = read_episodes(path)
    assert [b.behavior_label for b in back] == [e.behavior_label for e in eps]
    np.testing.assert_allclose(back[0].observations, eps[0].observations, rtol=1e-8)


def test_episode_record_rejects_bad_lengths():
    with pytest.raises(ConfigurationError):
        EpisodeRecord(np.zeros((3, 10)), np.zeros((3, 3)), None, "demo")


@given(st.integers(0, 2**31 - 1), st.lists(action, min_size=1, max_size=40), st.sampled_from(["cup", "bag"]))
def test_step_invariants(seed, actions, task):
    state = reset(task, seed)
    prev_crush = state.crush
    for t, a in enumerate(actions):
        nxt = step(state, a, seed + t)
        assert nxt == step(state, a, seed + t)
        assert nxt.is_valid()
        assert nxt.crush >= prev_crush
        assert nxt.held_region == "none" or nxt.ee_grip < GRIP_CLOSE_THRESHOLD
        assert np.all(np.isfinite(observe(nxt)))
        prev_crush, state = nxt.crush, nxt
