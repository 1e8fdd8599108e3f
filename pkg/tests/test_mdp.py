import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tmd.mdp import (
    MDPError,
    TabularMDP,
    TabularPolicy,
    Trajectory,
    make_rng,
    random_mdp,
    rollout,
    step,
    validate_mdp,
)

from conftest import chain


def test_valid_two_state_mdp_accepted(two_state):
    validate_mdp(two_state)
    assert two_state.n_states == 2 and two_state.n_actions == 2


def test_row_summing_to_point_nine_is_named():
    p = np.array([[[1.0, 0.0]], [[0.5, 0.4]]])
    with pytest.raises(MDPError, match=r"row \(s=1, a=0\) sums to 0.9"):
        TabularMDP(p, 0.9)


@pytest.mark.parametrize("gamma", [1.0, 0.0, -0.1, 1.5])
def test_discount_out_of_range(gamma):
    with pytest.raises(MDPError, match="discount out of range"):
        TabularMDP(np.ones((1, 1, 1)), gamma)


def test_negative_probability_rejected():
    with pytest.raises(MDPError, match="negative"):
        TabularMDP(np.array([[[1.5, -0.5]], [[0.0, 1.0]]]), 0.5)


def test_transition_is_read_only(two_state):
    with pytest.raises(ValueError):
        two_state.transition[0, 0, 0] = 0.0


def test_step_deterministic_row():
    p = np.zeros((4, 1, 4))
    p[:, 0, 3] = 1.0
    mdp = TabularMDP(p, 0.9)
    rng = make_rng(0)
    assert {step(mdp, s, 0, rng) for s in range(4) for _ in range(50)} == {3}


def test_step_uniform_row_frequency():
    mdp = TabularMDP(np.full((2, 1, 2), 0.5), 0.9)
    rng = make_rng(1)
    draws = np.array([step(mdp, 0, 0, rng) for _ in range(10_000)])
    assert abs(np.mean(draws == 0) - 0.5) < 0.02


def test_step_index_errors(two_state):
    rng = make_rng(0)
    with pytest.raises(IndexError):
        step(two_state, 2, 0, rng)
    with pytest.raises(IndexError):
        step(two_state, 0, 5, rng)


def test_step_reproducible_for_fixed_seed(two_state):
    a = [step(two_state, 0, 0, make_rng(7)) for _ in range(1)]
    seq1 = [step(two_state, i % 2, 0, r) for r in [make_rng(7)] for i in range(200)]
    seq2 = [step(two_state, i % 2, 0, r) for r in [make_rng(7)] for i in range(200)]
    assert seq1 == seq2 and a[0] == seq1[0]


def test_rollout_horizon_one(two_state):
    t = rollout(two_state, TabularPolicy.uniform(2, 2), 0, 1, make_rng(0))
    assert len(t.states) == 2 and len(t.actions) == 1 and len(t) == 1


def test_rollout_absorbing_state():
    mdp = chain(3)
    t = rollout(mdp, TabularPolicy.uniform(3, 2), 2, 10, make_rng(0))
    assert set(t.states) == {2}


def test_rollout_deterministic_chain():
    mdp = chain(3)
    always_right = TabularPolicy.deterministic([0, 0, 0], 2)
    t = rollout(mdp, always_right, 0, 2, make_rng(0))
    assert t.states == (0, 1, 2)


def test_rollout_rejects_zero_horizon(two_state):
    with pytest.raises(MDPError):
        rollout(two_state, TabularPolicy.uniform(2, 2), 0, 0, make_rng(0))


def test_empirical_transition_frequencies_match(two_state):
    # every visited (s, a) row within total variation 0.02 over 1e5 steps
    rng = make_rng(3)
    counts = np.zeros((2, 2, 2))
    s = 0
    pol = np.full(2, 0.5)
    for _ in range(100_000):
        a = int(rng.random() < pol[1])
        s2 = step(two_state, s, a, rng)
        counts[s, a, s2] += 1
        s = s2
    for s in range(2):
        for a in range(2):
            n = counts[s, a].sum()
            if n:
                tv = 0.5 * np.abs(counts[s, a] / n - two_state.transition[s, a]).sum()
                assert tv < 0.02


def test_rollouts_bitwise_reproducible():
    mdp = random_mdp(6, 3, 0.9, make_rng(2))
    pol = TabularPolicy.uniform(6, 3)
    assert rollout(mdp, pol, 0, 50, make_rng(11)) == rollout(mdp, pol, 0, 50, make_rng(11))


def test_json_round_trip(tmp_path, two_state):
    path = tmp_path / "m.json"
    two_state.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) >= {"n_states", "n_actions", "gamma", "transition"}
    back = TabularMDP.load(path)
    assert np.array_equal(back.transition, two_state.transition) and back.gamma == two_state.gamma


def test_policy_rows_must_sum_to_one():
    with pytest.raises(MDPError):
        TabularPolicy(np.array([[0.5, 0.4]]))


def test_goal_conditioned_policy_needs_goal():
    pol = TabularPolicy(np.full((2, 2, 3), 1 / 3))
    assert pol.goal_conditioned
    with pytest.raises(MDPError):
        pol.action_probs(0)
    assert np.allclose(pol.action_probs(0, 1), 1 / 3)


def test_trajectory_length_mismatch():
    with pytest.raises(MDPError):
        Trajectory((0, 1, 2), (0,))


def test_trajectory_check_flags_impossible_step():
    mdp = chain(3)
    with pytest.raises(MDPError, match="zero probability"):
        Trajectory((0, 2), (0,)).check(mdp)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.booleans(), st.integers(0, 2**31 - 1))
def test_random_mdp_rows_are_distributions(S, A, stochastic, seed):
    mdp = random_mdp(S, A, 0.9, make_rng(seed), stochastic=stochastic)
    assert np.allclose(mdp.transition.sum(-1), 1.0, atol=1e-12)
    assert np.all(mdp.transition >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(1, 3), st.booleans(), st.integers(0, 2**31 - 1))
def test_random_mdp_strongly_connected(S, A, stochastic, seed):
    mdp = random_mdp(S, A, 0.9, make_rng(seed), stochastic=stochastic)
    reach = (mdp.transition.sum(axis=1) > 0).astype(int) | np.eye(S, dtype=int)
    for _ in range(S):
        reach = ((reach @ reach) > 0).astype(int)
    assert reach.all()
