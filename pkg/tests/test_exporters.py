from __future__ import annotations

import json

import pytest

from hindsight_dialogue.dialogue import Outcome, Trajectory, assistant, segment, user
from hindsight_dialogue.exporters import (
    ExportError,
    ExportRecord,
    Variant,
    export_dpo,
    export_rl,
    export_sft,
    write_export,
)
from hindsight_dialogue.graph_env import GraphOracle, make_graph, synthesize, ASK_FULL_RE
from hindsight_dialogue.hindsight import HindsightTarget, InfoItem, StopLabel, finalize_targets, raw_targets
from hindsight_dialogue.oracle import Oracle, PermanentError, default_template
from hindsight_dialogue.reward import Ablation


def traj(n_assistant):
    turns = [user("hi")]
    for i in range(n_assistant):
        turns += [assistant(f"q{i}?"), user(f"a{i}")]
    return Trajectory("t", "g", tuple(turns), Outcome.SUCCESS)


def test_sft_counts():
    recs = export_sft(segment(traj(2)))
    assert len(recs) == 3
    assert [r.payload["response"] for r in recs] == ["q0?", "q1?", "<stop />"]
    assert len(export_sft(segment(traj(1)))) == 2
    assert export_sft([]) == []


def test_dpo_graph_rejected_off_graph():
    g = make_graph(["A", "B"])
    samples = segment(synthesize(g, 0, 1)[0])
    recs = export_dpo(samples, GraphOracle(g))
    assert len(recs) == len(samples) - 1
    for r, s in zip(recs, samples):
        m = ASK_FULL_RE.match(r.payload["rejected"])
        assert m and m.group(1) not in g.nodes
        assert r.payload["chosen"] == s.expert_action.text
    again = export_dpo(samples, GraphOracle(g))
    assert [r.payload for r in again] == [r.payload for r in recs]


class Failing(Oracle):
    def complete(self, req):
        raise PermanentError("nope", 400)


def test_dpo_failure_skips(caplog):
    assert export_dpo(segment(traj(2)), Failing()) == []
    assert "rejected generation failed" in caplog.text


def targets_for(samples, labels):
    out = []
    for s, lab in zip(samples, labels):
        info = frozenset({InfoItem("x")}) if lab == "C" else frozenset()
        out.append(HindsightTarget(s.trajectory_id, s.turn_index, info,
                                   StopLabel.CONTINUE if lab == "C" else StopLabel.STOP,
                                   terminal=s.is_terminal))
    return out


def test_rl_ablation_counts():
    samples = segment(traj(9))
    targets = targets_for(samples, "CCCSCCSCCS")
    assert len(export_rl(targets, samples, Ablation.NO_RS)) == 7
    assert len(export_rl(targets, samples, Ablation.FULL)) == 10
    assert len(export_rl(targets, samples, Ablation.NO_RA)) == 10


def test_rl_drops_filtered_empty_continue():
    samples = segment(traj(1))
    raw = [HindsightTarget("t", 1, frozenset({InfoItem("generic")}), StopLabel.CONTINUE),
           HindsightTarget("t", 2, frozenset(), StopLabel.STOP, terminal=True)]
    fin = finalize_targets(raw, {"generic"})
    assert export_rl(fin, samples, Ablation.NO_RS) == []


def test_rl_missing_target():
    samples = segment(traj(1))
    with pytest.raises(ExportError):
        export_rl(targets_for(samples, "C"), samples)


def test_schema_enforced():
    with pytest.raises(ExportError):
        ExportRecord(Variant.SFT, {"input": [], "response": "x", "extra": 1})


def test_write_export(tmp_path):
    g = make_graph(["A", "B"], deps=[("A", "B")])
    samples = [s for t in synthesize(g, 1, 3) for s in segment(t)]
    targets = finalize_targets(raw_targets(samples, default_template("extract"), GraphOracle(g)), ())
    out = tmp_path / "rl.jsonl"
    assert write_export(out, export_rl(targets, samples), Variant.RL) == len(samples)
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert set(rows[0]) == {"input", "info_set", "stop_label"}
    assert rows[0]["info_set"] == ["a", "b"]
    assert (tmp_path / "rl.schema").read_text().startswith("# rl record keys: input, info_set, stop_label")
    write_export(tmp_path / "empty.jsonl", [], Variant.SFT)
    assert (tmp_path / "empty.schema").exists()
