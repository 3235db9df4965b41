from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from hindsight_dialogue.dialogue import Outcome, Trajectory, assistant, segment, user
from hindsight_dialogue.graph_env import GraphOracle, make_graph, synthesize
from hindsight_dialogue.hindsight import (
    ExtractionParseError,
    HindsightTarget,
    InfoItem,
    StopLabel,
    build_generic_blacklist,
    eligible,
    extract_info,
    finalize_targets,
    load_manual_blacklist,
    normalize,
    parse_extraction,
    targets_for,
)
from hindsight_dialogue.oracle import Oracle, default_template


def items(*xs):
    return frozenset(InfoItem(x) for x in xs)


def target(info=(), terminal=False, tid="t", turn=1):
    info = items(*info)
    label = StopLabel.STOP if terminal or not info else StopLabel.CONTINUE
    return HindsightTarget(tid, turn, info, label, terminal=terminal)


class Canned(Oracle):
    def __init__(self, text):
        self.text = text

    def complete(self, req):
        return self.text


def cough_sample():
    t = Trajectory(
        "c1", "diagnose the cough",
        (
            user("I have a cold and a cough."),
            assistant("Do you have a fever?"),
            user("No fever."),
            assistant("Is the cough dry or productive?"),
            user("Productive, with yellow phlegm."),
        ),
        Outcome.SUCCESS,
    )
    return segment(t)[0]


def test_extract_items_from_bulleted_output():
    raw = "- Information on fever (absent)\n- Type of cough (productive)\n-  Color of  phlegm (yellow)"
    got = extract_info(cough_sample(), "diagnose", default_template("extract"), Canned(raw))
    assert {i.text for i in got} == {
        "information on fever (absent)", "type of cough (productive)", "color of phlegm (yellow)"
    }


def test_extract_none_is_empty():
    assert extract_info(cough_sample(), "g", default_template("extract"), Canned("- none")) == frozenset()
    assert parse_extraction("") == []


def test_extract_unparseable():
    with pytest.raises(ExtractionParseError):
        parse_extraction("I think the patient has a fever")


def test_terminal_sample_skips_extraction():
    s = segment(Trajectory("t", "g", (user("a"), assistant("b")), Outcome.SUCCESS))[-1]
    with pytest.raises(ValueError):
        extract_info(s, "g", default_template("extract"), Canned("- x"))


def test_graph_sample_empty_context_yields_required():
    g = make_graph(["A", "B"])
    s = segment(synthesize(g, 0, 1)[0])[0]
    got = extract_info(s, s.goal, default_template("extract"), GraphOracle(g))
    assert {i.text for i in got} == {"a", "b"}


def test_only_success_by_default():
    ok = Trajectory("ok", "g", (user("a"), assistant("b")), Outcome.SUCCESS)
    bad = Trajectory("bad", "g", (user("a"), assistant("b")), Outcome.FAILURE)
    assert eligible([ok, bad]) == [ok]
    assert eligible([ok, bad], include_failures=True) == [ok, bad]
    samples, targets = targets_for([ok, bad], default_template("extract"), Canned("- none"))
    assert {s.trajectory_id for s in samples} == {"ok"}


def test_blacklist_pregnancy_example():
    ts = [target(["pregnancy status", f"item {i}"]) for i in range(90)] + [target([f"other {i}"]) for i in range(10)]
    assert build_generic_blacklist(ts, 0.8) == {"pregnancy status"}


def test_blacklist_strict_threshold():
    ts = [target(["common"]) for _ in range(80)] + [target([f"u{i}"]) for i in range(20)]
    assert build_generic_blacklist(ts, 0.8) == set()


def test_blacklist_singletons():
    assert build_generic_blacklist([target([f"s{i}"]) for i in range(100)], 0.8) == set()


def test_blacklist_requires_targets():
    with pytest.raises(ValueError):
        build_generic_blacklist([], 0.8)


def test_blacklist_matcher_groups_variants():
    ts = [target(["pregnant?"]) for _ in range(5)] + [target(["pregnancy status"]) for _ in range(5)]
    same = lambda a, b: a[:5] == b[:5]
    assert build_generic_blacklist(ts, 0.8, matcher=same) == {"pregnant?", "pregnancy status"}
    assert build_generic_blacklist(ts, 0.8) == set()


def test_manual_blacklist():
    assert load_manual_blacklist(["# comment", "  Pregnancy  Status ", ""]) == {"pregnancy status"}


def test_finalize_labels():
    out = finalize_targets([target(["fever"]), target(terminal=True, turn=2)], set())
    assert out[0].stop_label is StopLabel.CONTINUE
    assert out[1].stop_label is StopLabel.STOP and out[1].info_set == frozenset()


def test_finalize_blacklisted_only_item():
    raw = [target(["pregnancy status"])]
    out = finalize_targets(raw, {"pregnancy status"})
    assert out[0].stop_label is StopLabel.STOP and out[0].removed_generic == items("pregnancy status")
    assert finalize_targets(raw, {"pregnancy status"}, drop_empty_continue=True) == []


def test_record_round_trip():
    t = finalize_targets([target(["fever", "cough"])], {"cough"})[0]
    assert HindsightTarget.from_record(t.to_record()) == t


words = st.sampled_from(["fever", "cough", "rash", "age", "sex", "diet", "pain"])
raw_target = st.builds(
    lambda info, term: target(info, term),
    st.sets(words, max_size=5),
    st.booleans(),
)


@given(st.lists(raw_target, min_size=1, max_size=30), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_filter_properties(raw, t1, t2):
    lo, hi = sorted((t1, t2))
    a = finalize_targets(raw, build_generic_blacklist(raw, lo))
    b = finalize_targets(raw, build_generic_blacklist(raw, hi))
    for x, y in zip(a, b):
        assert x.info_set <= y.info_set
    for t in a:
        assert (t.stop_label is StopLabel.STOP) == (not t.info_set or t.terminal)
    bl = build_generic_blacklist(raw, lo)
    assert finalize_targets(a, bl) == a


def test_normalize():
    assert normalize("  Color  of\tPhlegm ") == "color of phlegm"
    with pytest.raises(ValueError):
        InfoItem("   ")
