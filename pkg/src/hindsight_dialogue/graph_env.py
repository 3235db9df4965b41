"""Synthetic information-graph environment and its deterministic oracle.

A goal is a set of *required* nodes that an expert must cover, subject to
dependency edges (``u -> v``: ask ``v`` only after ``u`` is covered). Expert
trajectories use a canonical token protocol so extraction and grading are
exact:

    user       ANSWER(v, value)
    assistant  ASK(v)   or   <stop />

The first user turn answers the start node. After covering every required
node the expert says ``<stop />``.
"""

from __future__ import annotations

import graphlib
import json
import random
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Mapping

from .dialogue import (
    STOP_SENTINEL,
    Outcome,
    Speaker,
    Trajectory,
    TurnSample,
    Utterance,
    assistant,
    parse_transcript,
    user,
)
from .hindsight import InfoItem, normalize, parse_extraction
from .oracle import GraderVerdict, Oracle, OracleRequest, PromptType, format_verdict
from .oracle.templates import IRRELEVANT_NAME

_ID = r"[A-Za-z0-9_.\-]+"
ASK_RE = re.compile(rf"ASK\(\s*({_ID})\s*\)")
ASK_FULL_RE = re.compile(rf"^ASK\(\s*({_ID})\s*\)$")
ANSWER_RE = re.compile(rf"^ANSWER\(\s*({_ID})\s*,\s*(.*)\)$", re.DOTALL)
STRATEGY_RE = re.compile(r"strategy:\s*([a-z_]+)")


class InvalidGraph(ValueError):
    pass


class CanonicalFormError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    id: str
    question: str = ""
    answer: str = "yes"


@dataclass(frozen=True)
class InfoGraph:
    nodes: Mapping[str, Node]
    start: str
    required: frozenset[str]
    deps: tuple[tuple[str, str], ...] = ()
    distractors: Mapping[str, float] = field(default_factory=dict)
    goal: str = "cover the required information"
    name: str = "graph"

    def __post_init__(self) -> None:
        object.__setattr__(self, "required", frozenset(self.required))
        object.__setattr__(self, "deps", tuple(tuple(e) for e in self.deps))
        self.validate()

    def validate(self) -> None:
        ids = set(self.nodes)
        if self.start not in ids:
            raise InvalidGraph(f"start node {self.start!r} is not a node")
        if self.start in self.required:
            raise InvalidGraph("start node cannot be required")
        if not self.required <= ids:
            raise InvalidGraph(f"unknown required nodes {sorted(self.required - ids)}")
        for u, v in self.deps:
            if u not in ids or v not in ids:
                raise InvalidGraph(f"dependency ({u}, {v}) references an unknown node")
        for d, level in self.distractors.items():
            if d not in ids or d in self.required or d == self.start:
                raise InvalidGraph(f"distractor {d!r} must be a non-required, non-start node")
            if level not in (0.0, 0.5):
                raise InvalidGraph(f"distractor {d!r} relevance must be 0.5 or 0.0")
        if len({normalize(i) for i in ids}) != len(ids):
            raise InvalidGraph("node ids must stay distinct after case folding")
        try:
            graphlib.TopologicalSorter(self.required_preds()).prepare()
        except graphlib.CycleError as exc:
            raise InvalidGraph(f"dependency cycle among required nodes: {exc.args[1]}") from None

    def required_preds(self) -> dict[str, set[str]]:
        preds: dict[str, set[str]] = {v: set() for v in self.required}
        for u, v in self.deps:
            if u in self.required and v in self.required:
                preds[v].add(u)
        return preds

    @property
    def askable(self) -> list[str]:
        """Every node a policy may ask about (all but the start node), sorted."""
        return sorted(v for v in self.nodes if v != self.start)

    def neighbors(self, v: str) -> set[str]:
        return {b for a, b in self.deps if a == v} | {a for a, b in self.deps if b == v}

    def off_graph_id(self) -> str:
        base, k = "offgraph", 0
        taken = {normalize(v) for v in self.nodes}
        while normalize(f"{base}{k}") in taken:
            k += 1
        return f"{base}{k}"

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "goal": self.goal,
            "nodes": [
                {"id": n.id, "question": n.question, "answer": n.answer} for n in self.nodes.values()
            ],
            "start": self.start,
            "required": sorted(self.required),
            "deps": [list(e) for e in self.deps],
            "distractors": dict(self.distractors),
        }

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "InfoGraph":
        nodes: dict[str, Node] = {}
        for n in d["nodes"]:
            node = Node(n) if isinstance(n, str) else Node(n["id"], n.get("question", ""), n.get("answer", "yes"))
            nodes[node.id] = node
        return cls(
            nodes=nodes,
            start=d["start"],
            required=frozenset(d.get("required", [])),
            deps=tuple(tuple(e) for e in d.get("deps", [])),
            distractors={k: float(v) for k, v in d.get("distractors", {}).items()},
            goal=d.get("goal", "cover the required information"),
            name=d.get("name", "graph"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "InfoGraph":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def make_graph(
    required: Iterable[str],
    deps: Iterable[tuple[str, str]] = (),
    distractors: Mapping[str, float] | None = None,
    start: str = "s",
    name: str = "graph",
) -> InfoGraph:
    """Convenience constructor: node set is start + required + distractors."""
    required = list(required)
    distractors = dict(distractors or {})
    ids = [start, *required, *distractors]
    nodes = {v: Node(v, question=f"What about {v}?", answer=f"{v}-value") for v in ids}
    return InfoGraph(nodes, start, frozenset(required), tuple(deps), distractors, name=name)


def ask_token(v: str) -> str:
    return f"ASK({v})"


def answer_token(v: str, value: str) -> str:
    return f"ANSWER({v}, {value})"


def answered_node(text: str) -> str:
    m = ANSWER_RE.match(text.strip())
    if m is None:
        raise CanonicalFormError(f"user utterance is not ANSWER(v, value): {text!r}")
    return m.group(1)


def check_assistant(text: str) -> None:
    t = text.strip()
    if t != STOP_SENTINEL and not ASK_FULL_RE.match(t):
        raise CanonicalFormError(f"assistant utterance is not ASK(v) or {STOP_SENTINEL}: {text!r}")


def covered_nodes(utterances: Iterable[Utterance], g: InfoGraph) -> set[str]:
    """Required nodes answered by user utterances."""
    lookup = {normalize(v): v for v in g.required}
    out = set()
    for u in utterances:
        if u.speaker is Speaker.USER:
            v = lookup.get(normalize(answered_node(u.text)))
            if v is not None:
                out.add(v)
        else:
            check_assistant(u.text)
    return out


def state_key(covered: Iterable[str]) -> str:
    return ",".join(sorted(covered))


# -- expert trajectories ---------------------------------------------------


def _extension_counter(g: InfoGraph):
    preds = g.required_preds()
    required = frozenset(g.required)

    @lru_cache(maxsize=None)
    def count(done: frozenset[str]) -> int:
        if done == required:
            return 1
        return sum(count(done | {v}) for v in ready(done))

    def ready(done: frozenset[str]) -> list[str]:
        return sorted(v for v in required - done if preds[v] <= done)

    return count, ready


def linear_extensions(g: InfoGraph) -> list[tuple[str, ...]]:
    """All dependency-respecting orders of the required nodes (small graphs only)."""
    _, ready = _extension_counter(g)
    out: list[tuple[str, ...]] = []

    def walk(prefix: tuple[str, ...], done: frozenset[str]) -> None:
        if len(done) == len(g.required):
            out.append(prefix)
            return
        for v in ready(done):
            walk(prefix + (v,), done | {v})

    walk((), frozenset())
    return out


def sample_order(g: InfoGraph, rng: random.Random) -> list[str]:
    """Draw a topological order of the required nodes uniformly at random."""
    count, ready = _extension_counter(g)
    done: frozenset[str] = frozenset()
    order: list[str] = []
    while len(done) < len(g.required):
        options = ready(done)
        weights = [count(done | {v}) for v in options]
        v = rng.choices(options, weights=weights)[0]
        order.append(v)
        done = done | {v}
    return order


def trajectory_from_order(g: InfoGraph, order: list[str], traj_id: str) -> Trajectory:
    start = g.nodes[g.start]
    turns = [user(answer_token(start.id, start.answer))]
    for v in order:
        turns.append(assistant(ask_token(v)))
        turns.append(user(answer_token(v, g.nodes[v].answer)))
    turns.append(assistant(STOP_SENTINEL))
    return Trajectory(traj_id, g.goal, tuple(turns), Outcome.SUCCESS)


def sample_expert_trajectory(g: InfoGraph, rng_seed: int | str, traj_id: str | None = None) -> Trajectory:
    rng = random.Random(rng_seed)
    order = sample_order(g, rng)
    return trajectory_from_order(g, order, traj_id or f"{g.name}-{rng_seed}")


def synthesize(g: InfoGraph, seed: int, n: int) -> list[Trajectory]:
    return [sample_expert_trajectory(g, f"{seed}:{i}", f"{g.name}-{seed}-{i}") for i in range(n)]


def humanize(t: Trajectory, g: InfoGraph) -> list[str]:
    """Natural-language rendering of a canonical trajectory, for demos."""
    lines = []
    for u in t.turns:
        text = u.text.strip()
        if u.speaker is Speaker.ASSISTANT:
            m = ASK_FULL_RE.match(text)
            if m:
                text = g.nodes[m.group(1)].question or text
            elif text == STOP_SENTINEL:
                text = "I have enough information now."
            lines.append(f"Assistant: {text}")
        else:
            m = ANSWER_RE.match(text)
            lines.append(f"User: {m.group(2) if m else text}")
    return lines


# -- deterministic oracle rules --------------------------------------------


def extract_between(context: Iterable[Utterance], future: Iterable[Utterance], g: InfoGraph) -> frozenset[InfoItem]:
    future = list(future)
    before = covered_nodes(context, g)
    after = covered_nodes(future, g)
    first_seen = {}
    for i, u in enumerate(future):
        if u.speaker is Speaker.USER:
            first_seen.setdefault(answered_node(u.text), i)
    return frozenset(InfoItem(v, first_seen.get(v, -1)) for v in after - before)


def deterministic_extract(sample: TurnSample, g: InfoGraph) -> frozenset[InfoItem]:
    return extract_between(sample.context, sample.future, g)


def deterministic_grade(question: str, info_set: Iterable[InfoItem | str], g: InfoGraph) -> GraderVerdict:
    info = {normalize(i.text if isinstance(i, InfoItem) else i) for i in info_set}
    asked = ASK_RE.findall(question)
    if ASK_FULL_RE.match(question.strip()):
        fmt = 1.0
    elif len(asked) == 2:
        fmt = 0.5
    else:
        fmt = 0.0
    ids = {normalize(v): v for v in g.nodes}
    info_ids = {ids[t] for t in info if t in ids}
    content = 0.0
    for a in asked:
        v = ids.get(normalize(a))
        if v is None:
            continue
        if normalize(v) in info:
            content = 1.0
        elif g.distractors.get(v) == 0.5 or g.neighbors(v) & info_ids:
            content = max(content, 0.5)
    why = f"asked={sorted(asked)} targets={sorted(info)}"
    return GraderVerdict(fmt, content, why)


def greedy_action(g: InfoGraph, covered: set[str]) -> str:
    preds = g.required_preds()
    ready = sorted(v for v in g.required - covered if preds[v] <= covered)
    return ask_token(ready[0]) if ready else STOP_SENTINEL


class GraphOracle(Oracle):
    """Deterministic backend answering every prompt type from the graph.

    Rollout behaviour is chosen by a ``strategy: <name>`` line in the
    template body: ``greedy`` (ask a ready uncovered required node, else
    stop), ``stop``, ``irrelevant`` (ask an off-graph node), or ``random``
    (the default; uniform over askable nodes and stop, seeded). The stock
    irrelevance template always gets ``irrelevant``.
    """

    max_concurrency = 1

    def __init__(self, graph: InfoGraph):
        self.graph = graph

    def complete(self, req: OracleRequest) -> str:
        kind = req.template.prompt_type
        b = req.bindings
        if kind is PromptType.EXTRACT:
            items = extract_between(parse_transcript(b["context"]), parse_transcript(b["future"]), self.graph)
            if not items:
                return "- none"
            return "\n".join(f"- {t}" for t in sorted(i.text for i in items))
        if kind is PromptType.GRADER:
            info = parse_extraction(b["reference_info"])
            return format_verdict(deterministic_grade(b["candidate"], info, self.graph))
        return self.rollout(req)

    def rollout(self, req: OracleRequest) -> str:
        m = STRATEGY_RE.search(req.template.body)
        if m:
            strategy = m.group(1)
        else:
            strategy = "irrelevant" if req.template.name == IRRELEVANT_NAME else "random"
        covered = covered_nodes(parse_transcript(req.bindings["context"]), self.graph)
        if strategy == "greedy":
            return greedy_action(self.graph, covered)
        if strategy == "stop":
            return STOP_SENTINEL
        if strategy == "irrelevant":
            return ask_token(self.graph.off_graph_id())
        seed = req.decode.seed if req.decode.seed is not None else 0
        rng = random.Random(f"{seed}|{state_key(covered)}")
        options = [ask_token(v) for v in self.graph.askable] + [STOP_SENTINEL]
        return rng.choice(options)
