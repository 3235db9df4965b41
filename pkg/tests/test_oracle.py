from __future__ import annotations

import logging

import pytest
from hypothesis import given, strategies as st

from hindsight_dialogue.graph_env import GraphOracle, make_graph, synthesize
from hindsight_dialogue.dialogue import render_transcript, segment
from hindsight_dialogue.oracle import (
    BatchFailed,
    Decode,
    GraderVerdict,
    InvalidScore,
    MissingTag,
    Oracle,
    OracleError,
    OracleRequest,
    PermanentError,
    PromptTemplate,
    PromptType,
    TemplateError,
    default_template,
    format_verdict,
    parse_grader,
    sample_rollouts,
)
from hindsight_dialogue.oracle.templates import is_valid


def test_defaults_satisfy_contracts():
    for t in PromptType:
        assert default_template(t).prompt_type is t


@pytest.mark.parametrize(
    "ptype,body",
    [
        (PromptType.EXTRACT, "{goal} {context}"),
        (PromptType.EXTRACT, "{goal} {context} {future} {future}"),
        (PromptType.GRADER, "{context} {candidate} {reference_info} {bogus}"),
        (PromptType.ROLLOUT, "no placeholders"),
        (PromptType.ROLLOUT, "{context"),
    ],
)
def test_invalid_templates(ptype, body):
    assert not is_valid(ptype, body)
    with pytest.raises(TemplateError):
        PromptTemplate(ptype, body)


def test_request_needs_all_bindings():
    t = default_template("rollout")
    with pytest.raises(TemplateError):
        OracleRequest(t, {"goal": "g"}, Decode())


def test_parse_grader_example():
    v = parse_grader("<think>ok</think><format_score>1.0</format_score><content_score>0.5</content_score>")
    assert (v.format_score, v.content_score, v.rationale) == (1.0, 0.5, "ok")


def test_parse_grader_missing_tag():
    with pytest.raises(MissingTag) as e:
        parse_grader("<think>ok</think><format_score>1.0</format_score>")
    assert e.value.name == "content_score"


def test_parse_grader_off_grid():
    with pytest.raises(InvalidScore) as e:
        parse_grader("<think>x</think><format_score>1</format_score><content_score>0.7</content_score>")
    assert e.value.value == 0.7


@pytest.mark.parametrize("text,val", [("1", 1.0), ("1.00", 1.0), (".5", 0.5), ("0.5000000000001", 0.5)])
def test_snap_within_tolerance(text, val):
    raw = f"<think></think><format_score>{text}</format_score><content_score>0</content_score>"
    assert parse_grader(raw).format_score == val


def test_rationale_goes_to_audit_log(caplog):
    with caplog.at_level(logging.INFO, logger="hindsight_dialogue.audit"):
        parse_grader("<think>because</think><format_score>1</format_score><content_score>1</content_score>")
    assert "because" in caplog.text


grid = st.sampled_from([0.0, 0.5, 1.0])


@given(grid, grid, st.text(alphabet="abc <>/", max_size=20))
def test_format_parse_round_trip(f, c, why):
    why = why.replace("</think>", "")
    v = GraderVerdict(f, c, why.strip())
    assert parse_grader(format_verdict(v)) == v


class Flaky(Oracle):
    max_concurrency = 4

    def __init__(self, fail):
        self.fail = fail

    def complete(self, req):
        if req.decode.seed in self.fail:
            raise PermanentError("boom", 400)
        return f"cand-{req.decode.seed}"


def test_sample_rollouts_order_and_failures():
    t = default_template("rollout")
    b = {"goal": "g", "context": "User: hi"}
    out = sample_rollouts(Flaky({2}), t, b, 5, base_seed=0)
    assert out[:2] == ["cand-0", "cand-1"] and isinstance(out[2], OracleError) and out[4] == "cand-4"
    with pytest.raises(BatchFailed):
        sample_rollouts(Flaky({0, 1}), t, b, 2)
    with pytest.raises(ValueError):
        sample_rollouts(Flaky(set()), t, b, 0)
    assert sample_rollouts(Flaky(set()), t, b, 1) == ["cand-0"]


def test_graph_oracle_deterministic_rollouts():
    g = make_graph(["a", "b", "c"])
    oracle = GraphOracle(g)
    s = segment(synthesize(g, 0, 1)[0])[1]
    b = {"goal": s.goal, "context": render_transcript(s.context)}
    first = sample_rollouts(oracle, default_template("rollout"), b, 5, base_seed=0)
    assert len(first) == 5
    assert sample_rollouts(oracle, default_template("rollout"), b, 5, base_seed=0) == first


def test_graph_oracle_extract_stable():
    g = make_graph(["a", "b", "c"], deps=[("a", "b")])
    oracle = GraphOracle(g)
    s = segment(synthesize(g, 3, 1)[0])[0]
    req = OracleRequest(default_template("extract"),
                        {"goal": s.goal, "context": render_transcript(s.context), "future": render_transcript(s.future)})
    outs = {oracle.complete(req) for _ in range(3)}
    assert outs == {"- a\n- b\n- c"}


def test_graph_grader_output_always_parses():
    g = make_graph(["a", "b"], deps=[("a", "b")], distractors={"x": 0.5, "y": 0.0})
    oracle = GraphOracle(g)
    t = default_template("grader")
    for cand in ["ASK(a)", "ASK(x)", "ASK(y)", "ASK(a) ASK(b)", "hello", "ASK(zzz)", "<stop />"]:
        for ref in ["- a", "- a\n- b", ""]:
            parse_grader(oracle.complete(OracleRequest(t, {"context": "", "candidate": cand, "reference_info": ref})))
