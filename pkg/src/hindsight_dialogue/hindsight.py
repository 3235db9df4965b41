"""Hindsight targets: what the expert went on to collect, and whether to stop.

For every non-terminal sample the extractor oracle lists the information the
user revealed in the observed future that was not already in the context.
Generic items (ones that show up in most targets) are then filtered out and
the CONTINUE/STOP label is assigned on the filtered set.
"""

from __future__ import annotations

import enum
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

from .dialogue import Speaker, Trajectory, TurnSample, Outcome, render_transcript, segment
from .oracle import Decode, Oracle, OracleRequest, PromptTemplate, PromptType, TemplateError

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.8

Matcher = Callable[[str, str], bool]


class StopLabel(str, enum.Enum):
    CONTINUE = "CONTINUE"
    STOP = "STOP"


class ExtractionParseError(ValueError):
    kind = "EXTRACTION_PARSE_ERROR"


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class InfoItem:
    text: str
    # offset into the sample's future; identity is by text only
    source_turn: int = field(default=-1, compare=False)

    def __post_init__(self) -> None:
        norm = normalize(self.text)
        if not norm:
            raise ValueError("info item text is empty")
        object.__setattr__(self, "text", norm)


def texts(items: Iterable[InfoItem]) -> list[str]:
    return sorted(i.text for i in items)


@dataclass(frozen=True)
class HindsightTarget:
    trajectory_id: str
    turn_index: int
    info_set: frozenset[InfoItem]
    stop_label: StopLabel
    removed_generic: frozenset[InfoItem] = frozenset()
    terminal: bool = False

    @property
    def sample_ref(self) -> tuple[str, int]:
        return (self.trajectory_id, self.turn_index)

    def to_record(self) -> dict[str, Any]:
        return {
            "trajectory_id": self.trajectory_id,
            "turn_index": self.turn_index,
            "info_set": texts(self.info_set),
            "stop_label": self.stop_label.value,
            "removed_generic": texts(self.removed_generic),
            "terminal": self.terminal,
        }

    @classmethod
    def from_record(cls, d: Mapping[str, Any]) -> "HindsightTarget":
        return cls(
            trajectory_id=d["trajectory_id"],
            turn_index=int(d["turn_index"]),
            info_set=frozenset(InfoItem(t) for t in d["info_set"]),
            stop_label=StopLabel(d["stop_label"]),
            removed_generic=frozenset(InfoItem(t) for t in d.get("removed_generic", [])),
            terminal=bool(d.get("terminal", False)),
        )


def label_for(info_set: frozenset[InfoItem] | set[InfoItem], terminal: bool) -> StopLabel:
    return StopLabel.STOP if terminal or not info_set else StopLabel.CONTINUE


_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*)$")
_NONE = {"none", "(none)", "n/a", "nothing", "no new information"}


def parse_extraction(raw: str) -> list[str]:
    """Parse a bulleted list. ``- none`` or a blank reply means no items."""
    items: list[str] = []
    stray: list[str] = []
    for line in raw.splitlines():
        if not line.strip():
            continue
        m = _BULLET.match(line)
        if m:
            item = m.group(1).strip()
            if normalize(item) not in _NONE and normalize(item):
                items.append(item)
        else:
            stray.append(line.strip())
    if not items and stray and not all(normalize(s) in _NONE for s in stray):
        raise ExtractionParseError(f"no list items in extractor output: {raw[:200]!r}")
    return items


def _locate(item: str, sample: TurnSample) -> int:
    needle = normalize(item)
    first_user = -1
    for i, u in enumerate(sample.future):
        if u.speaker is not Speaker.USER:
            continue
        if first_user < 0:
            first_user = i
        if needle in normalize(u.text):
            return i
    return first_user


def extract_request(
    sample: TurnSample, goal: str, extractor: PromptTemplate, decode: Decode | None = None
) -> OracleRequest:
    if extractor.prompt_type is not PromptType.EXTRACT:
        raise TemplateError("extractor must be an EXTRACT template")
    if sample.is_terminal:
        raise ValueError("terminal samples have no future to extract from")
    bindings = {
        "goal": goal,
        "context": render_transcript(sample.context),
        "future": render_transcript(sample.future),
    }
    return OracleRequest(extractor, bindings, decode or Decode())


def items_from_output(raw: str, sample: TurnSample) -> frozenset[InfoItem]:
    return frozenset(InfoItem(t, _locate(t, sample)) for t in parse_extraction(raw))


def extract_info(
    sample: TurnSample, goal: str, extractor: PromptTemplate, oracle: Oracle
) -> frozenset[InfoItem]:
    raw = oracle.complete(extract_request(sample, goal, extractor))
    return items_from_output(raw, sample)


def raw_targets(
    samples: Sequence[TurnSample], extractor: PromptTemplate, oracle: Oracle
) -> list[HindsightTarget]:
    """Extract unfiltered targets for ``samples``; terminal ones skip the oracle."""
    pending = [s for s in samples if not s.is_terminal]
    outputs = oracle.complete_many([extract_request(s, s.goal, extractor) for s in pending])
    by_ref = {
        (s.trajectory_id, s.turn_index): items_from_output(raw, s)
        for s, raw in zip(pending, outputs)
    }
    targets = []
    for s in samples:
        info = by_ref.get((s.trajectory_id, s.turn_index), frozenset())
        targets.append(
            HindsightTarget(
                trajectory_id=s.trajectory_id,
                turn_index=s.turn_index,
                info_set=info,
                stop_label=label_for(info, s.is_terminal),
                terminal=s.is_terminal,
            )
        )
    return targets


def eligible(trajectories: Iterable[Trajectory], include_failures: bool = False) -> list[Trajectory]:
    return [t for t in trajectories if include_failures or t.outcome is Outcome.SUCCESS]


def targets_for(
    trajectories: Iterable[Trajectory],
    extractor: PromptTemplate,
    oracle: Oracle,
    include_failures: bool = False,
) -> tuple[list[TurnSample], list[HindsightTarget]]:
    samples = [s for t in eligible(trajectories, include_failures) for s in segment(t)]
    return samples, raw_targets(samples, extractor, oracle)


def _cluster_key(text: str, reps: list[str], matcher: Matcher | None) -> str:
    if matcher is None:
        return text
    for r in reps:
        if r == text or matcher(r, text):
            return r
    reps.append(text)
    return text


def build_generic_blacklist(
    targets: Sequence[HindsightTarget],
    threshold: float = DEFAULT_THRESHOLD,
    matcher: Matcher | None = None,
) -> set[str]:
    """Items whose document frequency across ``targets`` strictly exceeds ``threshold``.

    Each target counts an item at most once. With a ``matcher``, items judged
    equivalent share one count and every member of a flagged group is listed.
    """
    if not targets:
        raise ValueError("targets must be non-empty")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    reps: list[str] = []
    members: dict[str, set[str]] = {}
    df: Counter[str] = Counter()
    for t in targets:
        keys = set()
        for item in t.info_set | t.removed_generic:
            key = _cluster_key(item.text, reps, matcher)
            members.setdefault(key, set()).add(item.text)
            keys.add(key)
        df.update(keys)
    n = len(targets)
    flagged = {key for key, c in df.items() if c / n > threshold}
    for key in sorted(flagged):
        log.info("generic item %r in %d/%d targets", key, df[key], n)
    return {m for key in flagged for m in members[key]}


def load_manual_blacklist(lines: Iterable[str]) -> set[str]:
    return {normalize(s) for s in lines if s.strip() and not s.lstrip().startswith("#")}


def finalize_targets(
    raw: Iterable[HindsightTarget],
    blacklist: Iterable[str],
    drop_empty_continue: bool = False,
) -> list[HindsightTarget]:
    """Remove blacklisted items, then assign the stop label on what remains.

    With ``drop_empty_continue``, non-terminal targets emptied by the filter
    are dropped instead of being relabelled STOP.
    """
    banned = {normalize(b) for b in blacklist}
    out = []
    for t in raw:
        kept = frozenset(i for i in t.info_set if i.text not in banned)
        removed = t.removed_generic | (t.info_set - kept)
        if drop_empty_continue and not t.terminal and not kept and removed:
            continue
        out.append(
            replace(
                t,
                info_set=frozenset() if t.terminal else kept,
                removed_generic=removed,
                stop_label=label_for(kept, t.terminal),
            )
        )
    return out
