"""Expert trajectories: data model, JSONL ingestion, and per-turn segmentation.

A trajectory is an alternating user/assistant log that starts with the user.
``segment`` splits it at every assistant turn into a (context, future) pair,
plus one terminal sample whose future is empty and which carries the STOP
label downstream.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .jsonl import dumps

STOP_SENTINEL = "<stop />"


class Speaker(str, enum.Enum):
    USER = "user"
    ASSISTANT = "assistant"


class Outcome(str, enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"


class TrajectoryError(ValueError):
    """A record violates one of the trajectory invariants."""

    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str

    def __post_init__(self) -> None:
        if not isinstance(self.speaker, Speaker):
            object.__setattr__(self, "speaker", Speaker(self.speaker))
        if not isinstance(self.text, str) or not self.text.strip():
            raise TrajectoryError("non_empty_text", "utterance text is empty")

    def to_dict(self) -> dict[str, str]:
        return {"speaker": self.speaker.value, "text": self.text}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Utterance":
        return cls(Speaker(d["speaker"]), d["text"])


def user(text: str) -> Utterance:
    return Utterance(Speaker.USER, text)


def assistant(text: str) -> Utterance:
    return Utterance(Speaker.ASSISTANT, text)


@dataclass(frozen=True)
class Trajectory:
    id: str
    goal: str
    turns: tuple[Utterance, ...]
    outcome: Outcome = Outcome.SUCCESS
    # unknown top-level keys from the source record, re-emitted verbatim
    extras: Mapping[str, Any] = field(default_factory=dict, compare=True)

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if not isinstance(self.outcome, Outcome):
            object.__setattr__(self, "outcome", Outcome(self.outcome))
        if not self.turns or self.turns[0].speaker is not Speaker.USER:
            raise TrajectoryError("alternation", "conversation must start with a user turn")
        for prev, cur in zip(self.turns, self.turns[1:]):
            if prev.speaker is cur.speaker:
                raise TrajectoryError("alternation", "speakers must strictly alternate")
        if self.num_assistant_turns == 0:
            raise TrajectoryError("has_assistant", "no assistant turn")

    @property
    def num_assistant_turns(self) -> int:
        return sum(1 for u in self.turns if u.speaker is Speaker.ASSISTANT)

    def to_record(self) -> dict[str, Any]:
        record = dict(self.extras)
        record.update(
            id=self.id,
            goal=self.goal,
            outcome=self.outcome.value,
            turns=[u.to_dict() for u in self.turns],
        )
        return record


@dataclass(frozen=True)
class TurnSample:
    """One split of a trajectory at an assistant turn.

    ``turn_index`` is 1-based over assistant turns; ``T_C + 1`` marks the
    terminal sample whose ``future`` is empty and which has no expert action.
    """

    trajectory_id: str
    turn_index: int
    context: tuple[Utterance, ...]
    future: tuple[Utterance, ...]
    expert_action: Utterance | None = None
    goal: str = ""

    @property
    def is_terminal(self) -> bool:
        return not self.future

    def to_record(self) -> dict[str, Any]:
        return {
            "trajectory_id": self.trajectory_id,
            "turn_index": self.turn_index,
            "goal": self.goal,
            "context": [u.to_dict() for u in self.context],
            "future": [u.to_dict() for u in self.future],
            "expert_action": self.expert_action.text if self.expert_action else None,
        }

    @classmethod
    def from_record(cls, d: Mapping[str, Any]) -> "TurnSample":
        action = d.get("expert_action")
        return cls(
            trajectory_id=d["trajectory_id"],
            turn_index=int(d["turn_index"]),
            context=tuple(Utterance.from_dict(u) for u in d["context"]),
            future=tuple(Utterance.from_dict(u) for u in d["future"]),
            expert_action=assistant(action) if action is not None else None,
            goal=d.get("goal", ""),
        )


@dataclass(frozen=True)
class RejectionReport:
    line_number: int
    invariant: str
    message: str

    def to_record(self) -> dict[str, Any]:
        return {"line": self.line_number, "invariant": self.invariant, "message": self.message}


def _merge_double_sends(raw_turns: Sequence[Mapping[str, Any]]) -> list[Utterance]:
    merged: list[tuple[Speaker, list[str]]] = []
    for t in raw_turns:
        if not isinstance(t, Mapping):
            raise TrajectoryError("schema", "turn is not an object")
        try:
            speaker = Speaker(t.get("speaker"))
        except ValueError:
            raise TrajectoryError("schema", f"unknown speaker {t.get('speaker')!r}") from None
        text = t.get("text")
        if not isinstance(text, str):
            raise TrajectoryError("schema", "turn text must be a string")
        if not text.strip():
            raise TrajectoryError("non_empty_text", "utterance text is empty")
        if merged and merged[-1][0] is speaker:
            merged[-1][1].append(text)
        else:
            merged.append((speaker, [text]))
    return [Utterance(s, "\n".join(parts)) for s, parts in merged]


def parse_record(obj: Any) -> Trajectory:
    if not isinstance(obj, Mapping):
        raise TrajectoryError("schema", "record is not a JSON object")
    for key, typ in (("id", str), ("goal", str), ("outcome", str), ("turns", list)):
        if not isinstance(obj.get(key), typ):
            raise TrajectoryError("schema", f"missing or mistyped field {key!r}")
    try:
        outcome = Outcome(obj["outcome"])
    except ValueError:
        raise TrajectoryError("schema", f"unknown outcome {obj['outcome']!r}") from None
    extras = {k: v for k, v in obj.items() if k not in ("id", "goal", "outcome", "turns")}
    return Trajectory(
        id=obj["id"],
        goal=obj["goal"],
        turns=tuple(_merge_double_sends(obj["turns"])),
        outcome=outcome,
        extras=extras,
    )


def ingest(lines: Iterable[str]) -> tuple[list[Trajectory], list[RejectionReport]]:
    """Parse line-delimited trajectory records.

    Bad lines never abort ingestion; each one becomes a ``RejectionReport``
    carrying its 1-based line number. Blank lines are skipped silently.
    Duplicate ids are rejected after the first occurrence.
    """
    trajectories: list[Trajectory] = []
    rejections: list[RejectionReport] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            rejections.append(RejectionReport(lineno, "json", exc.msg))
            continue
        try:
            traj = parse_record(obj)
        except TrajectoryError as exc:
            rejections.append(RejectionReport(lineno, exc.invariant, str(exc)))
            continue
        if traj.id in seen:
            rejections.append(RejectionReport(lineno, "unique_id", f"duplicate id {traj.id!r}"))
            continue
        seen.add(traj.id)
        trajectories.append(traj)
    return trajectories, rejections


def ingest_path(path: str | Path) -> tuple[list[Trajectory], list[RejectionReport]]:
    # OSError propagates: an unreadable stream is fatal
    with Path(path).open("r", encoding="utf-8") as f:
        return ingest(f)


def serialize(trajectories: Iterable[Trajectory]) -> str:
    return "".join(dumps(t.to_record()) + "\n" for t in trajectories)


def segment(t: Trajectory) -> list[TurnSample]:
    samples: list[TurnSample] = []
    k = 0
    for i, u in enumerate(t.turns):
        if u.speaker is not Speaker.ASSISTANT:
            continue
        k += 1
        samples.append(
            TurnSample(
                trajectory_id=t.id,
                turn_index=k,
                context=t.turns[:i],
                future=t.turns[i:],
                expert_action=u,
                goal=t.goal,
            )
        )
    samples.append(
        TurnSample(
            trajectory_id=t.id,
            turn_index=k + 1,
            context=t.turns,
            future=(),
            expert_action=None,
            goal=t.goal,
        )
    )
    return samples


def render_transcript(turns: Iterable[Utterance]) -> str:
    """Render utterances as ``User: ...`` / ``Assistant: ...`` lines.

    Continuation lines of multi-line texts are indented by two spaces so the
    transcript can be parsed back with ``parse_transcript``.
    """
    lines = []
    for u in turns:
        label = "User" if u.speaker is Speaker.USER else "Assistant"
        first, *rest = u.text.split("\n")
        lines.append(f"{label}: {first}")
        lines.extend("  " + r for r in rest)
    return "\n".join(lines)


def parse_transcript(text: str) -> list[Utterance]:
    out: list[tuple[Speaker, list[str]]] = []
    for line in text.split("\n"):
        if line.startswith("User: "):
            out.append((Speaker.USER, [line[len("User: "):]]))
        elif line.startswith("Assistant: "):
            out.append((Speaker.ASSISTANT, [line[len("Assistant: "):]]))
        elif line.startswith("  ") and out:
            out[-1][1].append(line[2:])
        elif line.strip():
            raise ValueError(f"unparseable transcript line: {line!r}")
    return [Utterance(s, "\n".join(parts)) for s, parts in out]
