from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hindsight_dialogue.graph_env import ask_token, greedy_action, make_graph, state_key
from hindsight_dialogue.policy import (
    TabularPolicy,
    TrainConfig,
    action_space,
    evaluate_policy,
    group_advantages,
    load_policy,
    save_policy,
    train,
    write_trace,
)
from hindsight_dialogue.reward import Ablation


def test_advantage_examples():
    assert group_advantages([3, 1, 2]) == pytest.approx([1.2247, -1.2247, 0.0], abs=1e-3)
    assert list(group_advantages([2, 2, 2, 2])) == [0, 0, 0, 0]
    # the larger reward gets the positive advantage
    assert group_advantages([0, 3]) == pytest.approx([-1, 1], abs=1e-3)
    with pytest.raises(ValueError):
        group_advantages([1.0])


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=16))
def test_advantages_sum_to_zero(rs):
    adv = group_advantages(rs)
    assert abs(adv.sum()) < 1e-6 * len(rs)


def test_zero_iterations_is_uniform(five_node_graph):
    p, trace = train(five_node_graph, iterations=0)
    assert p.logits == {} and trace == []
    assert np.allclose(p.probs("a"), 1 / len(p.actions))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(group_size=1)
    with pytest.raises(ValueError):
        TrainConfig(beta=0)


def test_empty_required_learns_stop():
    g = make_graph([], distractors={"x": 0.5})
    p, _ = train(g, iterations=300)
    assert p.greedy(state_key([])) == "<stop />"


def test_two_node_learning_signal(two_node_graph):
    p, _ = train(two_node_graph, iterations=1500, n_trajectories=16)
    assert p.greedy(state_key([])) in {ask_token("A"), ask_token("B")}
    assert p.greedy(state_key(["A", "B"])) == "<stop />"


def test_softmax_stays_normalised(five_node_graph):
    p, _ = train(five_node_graph, iterations=200)
    for key in p.logits:
        assert p.probs(key).sum() == pytest.approx(1.0, abs=1e-9)


def hand_optimal(g):
    from itertools import combinations
    p = TabularPolicy.uniform(g)
    for k in range(len(g.required) + 1):
        for cov in combinations(sorted(g.required), k):
            row = p.table(state_key(cov))
            row[p.actions.index(greedy_action(g, set(cov)))] = 10.0
    return p


def test_optimal_policy_scores_perfectly():
    g = make_graph(["a", "b", "c"], deps=[("a", "b")])
    r = evaluate_policy(hand_optimal(g), g, n_rollouts=100)
    assert r.ws == 1.0 and r.wa == 1.0


def test_uniform_policy_stop_rate(five_node_graph):
    p = TabularPolicy.uniform(five_node_graph)
    r = evaluate_policy(p, five_node_graph, n_rollouts=2000, greedy=False, seed=3)
    n_actions = len(action_space(five_node_graph))
    expected = 1 / n_actions
    se = (expected * (1 - expected) / r.counts["ws"]) ** 0.5
    assert abs(r.ws - expected) < 4 * se


def test_artifacts(five_node_graph, tmp_path):
    p, trace = train(five_node_graph, iterations=50)
    save_policy(tmp_path / "p.json", p)
    q = load_policy(tmp_path / "p.json")
    assert q.actions == p.actions and all(np.array_equal(q.logits[k], p.logits[k]) for k in p.logits)
    write_trace(tmp_path / "t.csv", trace)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,mean_reward,ws,wa" and len(lines) == 51


def test_training_is_deterministic(five_node_graph):
    a, ta = train(five_node_graph, iterations=100, seed=4)
    b, tb = train(five_node_graph, iterations=100, seed=4)
    assert ta == tb and a.to_json() == b.to_json()


def test_no_rs_needs_continue_states():
    with pytest.raises(ValueError):
        train(make_graph([]), iterations=10, ablation=Ablation.NO_RS)
