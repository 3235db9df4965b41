"""SFT, DPO, and RL dataset builders.

Record counts per trajectory with ``T_C`` assistant turns:

    SFT  T_C + 1   (one per assistant turn, plus a terminal ``<stop />`` record)
    DPO  T_C       (mid-trajectory samples only)
    RL   T_C + 1   under FULL / NO_RA; CONTINUE targets only under NO_RS
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

from .dialogue import STOP_SENTINEL, TurnSample, render_transcript
from .hindsight import HindsightTarget, StopLabel, texts
from .jsonl import write_jsonl
from .oracle import Decode, Oracle, OracleError, OracleRequest, PromptTemplate, irrelevant_template
from .reward import Ablation

log = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    SFT = "sft"
    DPO = "dpo"
    RL = "rl"


SCHEMAS: dict[Variant, tuple[str, ...]] = {
    Variant.SFT: ("input", "response"),
    Variant.DPO: ("input", "chosen", "rejected"),
    Variant.RL: ("input", "info_set", "stop_label"),
}


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class ExportRecord:
    variant: Variant
    payload: dict[str, Any]

    def __post_init__(self) -> None:
        if tuple(sorted(self.payload)) != tuple(sorted(SCHEMAS[self.variant])):
            raise ExportError(f"{self.variant.value} payload keys {sorted(self.payload)} do not match schema")


def _input(sample: TurnSample) -> list[dict[str, str]]:
    return [u.to_dict() for u in sample.context]


def export_sft(samples: Iterable[TurnSample]) -> list[ExportRecord]:
    out = []
    for s in samples:
        if s.is_terminal:
            response = STOP_SENTINEL
        elif s.expert_action is None:
            log.warning("sample %s/%d has no expert action; skipped", s.trajectory_id, s.turn_index)
            continue
        else:
            response = s.expert_action.text
        out.append(ExportRecord(Variant.SFT, {"input": _input(s), "response": response}))
    return out


def export_dpo(
    samples: Iterable[TurnSample],
    oracle: Oracle,
    template: PromptTemplate | None = None,
    seed: int = 0,
) -> list[ExportRecord]:
    """Pair each expert action (chosen) with a generated irrelevant utterance (rejected)."""
    template = template or irrelevant_template()
    mids = [s for s in samples if not s.is_terminal]
    reqs = [
        OracleRequest(
            template,
            {"goal": s.goal, "context": render_transcript(s.context)},
            Decode(temperature=1.0, seed=seed + i),
        )
        for i, s in enumerate(mids)
    ]
    rejected = oracle.complete_many(reqs, return_exceptions=True)
    out = []
    for s, r in zip(mids, rejected):
        if s.expert_action is None:
            log.warning("sample %s/%d has no expert action; skipped", s.trajectory_id, s.turn_index)
            continue
        if isinstance(r, OracleError):
            log.warning("rejected generation failed for %s/%d: %s", s.trajectory_id, s.turn_index, r)
            continue
        out.append(
            ExportRecord(
                Variant.DPO,
                {"input": _input(s), "chosen": s.expert_action.text, "rejected": r.strip()},
            )
        )
    return out


def rl_pairs(
    targets: Sequence[HindsightTarget],
    samples: Sequence[TurnSample],
    ablation: Ablation = Ablation.FULL,
) -> list[tuple[TurnSample, HindsightTarget]]:
    """Join samples with their targets and apply the ablation filter."""
    ablation = Ablation(ablation)
    by_ref = {t.sample_ref: t for t in targets}
    out = []
    for s in samples:
        t = by_ref.get((s.trajectory_id, s.turn_index))
        if t is None:
            raise ExportError(f"no hindsight target for sample {s.trajectory_id}/{s.turn_index}")
        if ablation is Ablation.NO_RS and (t.stop_label is StopLabel.STOP or not t.info_set):
            continue
        out.append((s, t))
    return out


def export_rl(
    targets: Sequence[HindsightTarget],
    samples: Sequence[TurnSample],
    ablation: Ablation = Ablation.FULL,
) -> list[ExportRecord]:
    return [
        ExportRecord(
            Variant.RL,
            {"input": _input(s), "info_set": texts(t.info_set), "stop_label": t.stop_label.value},
        )
        for s, t in rl_pairs(targets, samples, ablation)
    ]


def write_export(path: str | Path, records: Sequence[ExportRecord], variant: Variant) -> int:
    """Write records as JSONL plus a one-line ``<name>.schema`` file alongside."""
    path = Path(path)
    n = write_jsonl(path, (r.payload for r in records))
    keys = ", ".join(SCHEMAS[Variant(variant)])
    path.with_suffix(".schema").write_text(
        f"# {Variant(variant).value} record keys: {keys}\n", encoding="utf-8"
    )
    return n
