"""Graded rewards for a candidate action against a hindsight target.

``total = r_s * (1 + beta * r_a) + omega`` in multiplicative mode, so a wrong
continue/stop decision zeroes every other term. ``SUM`` is the additive
variant ``r_s + beta * r_a + omega``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any

from .dialogue import STOP_SENTINEL, TurnSample, render_transcript
from .hindsight import HindsightTarget, StopLabel, texts
from .oracle import Decode, Oracle, OracleRequest, PromptTemplate, PromptType, parse_grader
from .oracle.templates import TemplateError


class FusionMode(str, enum.Enum):
    MULTIPLICATIVE = "multiplicative"
    SUM = "sum"


class Ablation(str, enum.Enum):
    FULL = "full"
    NO_RS = "no-rs"
    NO_RA = "no-ra"


@dataclass(frozen=True)
class CandidateAction:
    raw_text: str

    @property
    def assessment(self) -> StopLabel:
        return StopLabel.STOP if self.raw_text.strip() == STOP_SENTINEL else StopLabel.CONTINUE

    @property
    def question_text(self) -> str:
        return "" if self.assessment is StopLabel.STOP else self.raw_text.strip()


@dataclass(frozen=True)
class RewardBreakdown:
    r_a: float
    r_s: float
    omega: float
    beta: float
    total: float
    mode: FusionMode = FusionMode.MULTIPLICATIVE

    def to_record(self) -> dict[str, Any]:
        return {
            "r_a": self.r_a,
            "r_s": self.r_s,
            "omega": self.omega,
            "beta": self.beta,
            "mode": self.mode.value,
            "total": self.total,
        }

    @classmethod
    def from_record(cls, d: dict[str, Any]) -> "RewardBreakdown":
        return cls(
            r_a=float(d["r_a"]),
            r_s=float(d["r_s"]),
            omega=float(d["omega"]),
            beta=float(d["beta"]),
            total=float(d["total"]),
            mode=FusionMode(d.get("mode", "multiplicative")),
        )


def score_macro(candidate: CandidateAction, target: HindsightTarget) -> float:
    return 1.0 if candidate.assessment is target.stop_label else 0.0


def grader_request(
    candidate: CandidateAction,
    target: HindsightTarget,
    sample: TurnSample | None,
    grader: PromptTemplate,
    goal: str = "",
) -> OracleRequest:
    if grader.prompt_type is not PromptType.GRADER:
        raise TemplateError("grader must be a GRADER template")
    bindings = {
        "goal": goal or (sample.goal if sample else ""),
        "context": render_transcript(sample.context) if sample else "",
        "candidate": candidate.raw_text,
        "reference_info": "\n".join(f"- {t}" for t in texts(target.info_set)),
    }
    return OracleRequest(grader, bindings, Decode())


def needs_grader(candidate: CandidateAction, target: HindsightTarget) -> bool:
    return candidate.assessment is StopLabel.CONTINUE and bool(target.info_set)


def score_micro(
    candidate: CandidateAction,
    target: HindsightTarget,
    grader: PromptTemplate,
    oracle: Oracle,
    sample: TurnSample | None = None,
) -> tuple[float, float | None]:
    """Return ``(r_a, format_level)``.

    STOP candidates and empty targets score ``r_a = 0`` without an oracle
    call; their format level is ``None``.
    """
    if not needs_grader(candidate, target):
        return 0.0, None
    verdict = parse_grader(oracle.complete(grader_request(candidate, target, sample, grader)))
    return verdict.content_score, verdict.format_score


def score_omega(candidate: CandidateAction, r_s: float, format_level: float | None) -> float:
    if r_s != 1:
        return 0.0
    if candidate.assessment is StopLabel.STOP:
        return 1.0 if candidate.raw_text.strip() == STOP_SENTINEL else 0.0
    # format_level 1.0 <-> one question, 0.5 <-> two
    if format_level == 1.0:
        return 1.0
    if format_level == 0.5:
        return 0.5
    return 0.0


def fuse(
    r_a: float, r_s: float, omega: float, beta: float, mode: FusionMode = FusionMode.MULTIPLICATIVE
) -> float:
    if not beta > 0:
        raise ValueError("beta must be > 0")
    if FusionMode(mode) is FusionMode.MULTIPLICATIVE:
        return r_s * (1 + beta * r_a) + omega
    return r_s + beta * r_a + omega


def ablated_total(b: RewardBreakdown, ablation: Ablation) -> float:
    """Training reward under an ablation; FULL returns ``b.total``."""
    ablation = Ablation(ablation)
    if ablation is Ablation.NO_RS:
        return b.beta * b.r_a + b.omega
    if ablation is Ablation.NO_RA:
        return b.r_s + b.omega
    return b.total


def combine(
    candidate: CandidateAction,
    target: HindsightTarget,
    r_a: float,
    format_level: float | None,
    beta: float = 1.0,
    mode: FusionMode = FusionMode.MULTIPLICATIVE,
) -> RewardBreakdown:
    r_s = score_macro(candidate, target)
    omega = score_omega(candidate, r_s, format_level)
    return RewardBreakdown(r_a, r_s, omega, beta, fuse(r_a, r_s, omega, beta, mode), FusionMode(mode))


def grade(
    candidate: CandidateAction | str,
    target: HindsightTarget,
    grader: PromptTemplate,
    oracle: Oracle,
    sample: TurnSample | None = None,
    beta: float = 1.0,
    mode: FusionMode = FusionMode.MULTIPLICATIVE,
) -> RewardBreakdown:
    if isinstance(candidate, str):
        candidate = CandidateAction(candidate)
    r_a, fmt = score_micro(candidate, target, grader, oracle, sample)
    return combine(candidate, target, r_a, fmt, beta, mode)


def grade_many(
    candidates: list[CandidateAction | str],
    targets: list[HindsightTarget],
    samples: list[TurnSample | None],
    grader: PromptTemplate,
    oracle: Oracle,
    beta: float = 1.0,
    mode: FusionMode = FusionMode.MULTIPLICATIVE,
) -> list[RewardBreakdown]:
    """Batch version of ``grade``; grader calls go through ``complete_many``."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    cands = [c if isinstance(c, CandidateAction) else CandidateAction(c) for c in candidates]
    todo = [i for i, (c, t) in enumerate(zip(cands, targets)) if needs_grader(c, t)]
    raws = oracle.complete_many(
        [grader_request(cands[i], targets[i], samples[i], grader) for i in todo]
    )
    graded = {i: parse_grader(raw) for i, raw in zip(todo, raws)}
    out = []
    for i, (c, t) in enumerate(zip(cands, targets)):
        v = graded.get(i)
        r_a, fmt = (v.content_score, v.format_score) if v else (0.0, None)
        out.append(combine(c, t, r_a, fmt, beta, mode))
    return out
