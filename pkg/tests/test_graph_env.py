from __future__ import annotations

import json
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from hindsight_dialogue.dialogue import Speaker, assistant, segment, user
from hindsight_dialogue.graph_env import (
    CanonicalFormError,
    InfoGraph,
    InvalidGraph,
    answered_node,
    covered_nodes,
    deterministic_extract,
    deterministic_grade,
    humanize,
    linear_extensions,
    make_graph,
    sample_expert_trajectory,
    synthesize,
)


def asked_order(t):
    return [answered_node(u.text) for u in t.turns[1:] if u.speaker is Speaker.USER]


def test_both_orders_occur_without_deps(two_node_graph):
    orders = {tuple(asked_order(sample_expert_trajectory(two_node_graph, s))) for s in range(30)}
    assert orders == {("A", "B"), ("B", "A")}


def test_forced_order():
    g = make_graph(["A", "B"], deps=[("A", "B")])
    assert {tuple(asked_order(sample_expert_trajectory(g, s))) for s in range(20)} == {("A", "B")}


def test_empty_required():
    t = sample_expert_trajectory(make_graph([]), 0)
    assert [u.text for u in t.turns if u.speaker is Speaker.ASSISTANT] == ["<stop />"]
    assert asked_order(t) == []


def test_cycle_rejected():
    with pytest.raises(InvalidGraph):
        make_graph(["A", "B"], deps=[("A", "B"), ("B", "A")])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(required=["s"]),
        dict(required=["A"], deps=[("A", "Q")]),
        dict(required=["A"], distractors={"A": 0.5}),
    ],
)
def test_invalid_graphs(kwargs):
    with pytest.raises(InvalidGraph):
        make_graph(**kwargs)


def test_distractor_level_checked():
    with pytest.raises(InvalidGraph):
        make_graph(["A"], distractors={"x": 0.3})


def test_json_round_trip(five_node_graph, tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps(five_node_graph.to_json()))
    assert InfoGraph.load(p) == five_node_graph


def test_orders_are_uniform(five_node_graph):
    exts = linear_extensions(five_node_graph)
    # 5 nodes with a<b and c<d: 5!/4 = 30 orders
    assert len(exts) == 30
    counts = Counter(tuple(asked_order(sample_expert_trajectory(five_node_graph, f"u{i}"))) for i in range(6000))
    assert set(counts) == set(exts)
    expected = 6000 / 30
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    assert chi2 < 70  # df=29, p < 1e-4 above this


def test_extract_examples():
    g = make_graph(["A", "B", "C"])
    t = sample_expert_trajectory(g, 0)
    samples = segment(t)
    first = asked_order(t)[0]
    s = samples[1]  # context covers the first asked node
    assert {i.text for i in deterministic_extract(s, g)} == {v.lower() for v in {"A", "B", "C"} - {first}}
    assert deterministic_extract(samples[-1], g) == frozenset()
    assert deterministic_extract(samples[-2], g) == frozenset()


def test_non_canonical_rejected():
    g = make_graph(["A"])
    with pytest.raises(CanonicalFormError):
        covered_nodes([user("hello there")], g)
    with pytest.raises(CanonicalFormError):
        covered_nodes([user("ANSWER(A, 1)"), assistant("what?")], g)


def test_grade_examples():
    g = make_graph(["B", "C"], distractors={"d": 0.5})
    assert deterministic_grade("ASK(B)", ["b", "c"], g).content_score == 1.0
    assert deterministic_grade("ASK(d)", ["c"], g).content_score == 0.5
    v = deterministic_grade("hello", ["c"], g)
    assert (v.content_score, v.format_score) == (0.0, 0.0)


def test_humanize(five_node_graph):
    lines = humanize(synthesize(five_node_graph, 0, 1)[0], five_node_graph)
    assert lines[-1] == "Assistant: I have enough information now."


@st.composite
def graphs(draw):
    n = draw(st.integers(0, 6))
    req = [f"n{i}" for i in range(n)]
    deps = [(req[i], req[j]) for i in range(n) for j in range(i + 1, n) if draw(st.booleans())]
    return make_graph(req, deps=deps, distractors={"x": 0.5, "y": 0.0})


@settings(max_examples=60)
@given(graphs(), st.integers(0, 10_000))
def test_trajectory_properties(g, seed):
    t = sample_expert_trajectory(g, seed)
    order = asked_order(t)
    assert sorted(order) == sorted(g.required)
    pos = {v: i for i, v in enumerate(order)}
    for u, v in g.deps:
        assert pos[u] < pos[v]
    for s in segment(t):
        covered = covered_nodes(s.context, g)
        assert {i.text for i in deterministic_extract(s, g)} == {v.lower() for v in g.required - covered}


@settings(max_examples=40)
@given(graphs(), st.integers(0, 10_000), st.integers(0, 10_000))
def test_path_invariance(g, s1, s2):
    by_cover: dict = {}
    for seed in (s1, s2):
        for s in segment(sample_expert_trajectory(g, seed)):
            key = (frozenset(covered_nodes(s.context, g)), s.is_terminal)
            by_cover.setdefault(key, set()).add(deterministic_extract(s, g))
    for sets in by_cover.values():
        assert len({frozenset(i.text for i in x) for x in sets}) == 1
