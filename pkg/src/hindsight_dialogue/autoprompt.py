"""Iterative prompt calibration against small human-verified anchor sets.

Each iteration proposes variations of the incumbent prompt, scores every
candidate with a type-specific scorer, and keeps the best. The incumbent is
always part of the batch and its score is cached, so the best score never
decreases.

Scorers:
    EXTRACT  mean set-F1 between extracted and gold information sets
    GRADER   negative MSE between grader content scores and gold scores
    ROLLOUT  mean total reward of rollouts under a fixed reward pipeline
"""

from __future__ import annotations

import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .dialogue import TurnSample, render_transcript
from .hindsight import (
    ExtractionParseError,
    HindsightTarget,
    InfoItem,
    Matcher,
    extract_info,
    finalize_targets,
    label_for,
    normalize,
)
from .oracle import (
    Decode,
    GraderParseError,
    Oracle,
    OracleError,
    PromptTemplate,
    PromptType,
    default_template,
    parse_grader,
    sample_rollouts,
)
from .oracle.templates import is_valid
from .reward import CandidateAction, FusionMode, grade_many, grader_request

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2
GRID = (0.0, 0.5, 1.0)


class CalibrationInvalid(RuntimeError):
    """Too many anchors failed for the score to be meaningful."""


@dataclass
class PromptCandidate:
    template: PromptTemplate
    score: float | None = None

    @property
    def body(self) -> str:
        return self.template.body


@dataclass(frozen=True)
class AnchorEntry:
    """One labelled calibration input.

    EXTRACT: ``sample`` + ``gold_info``. GRADER: ``candidate`` + ``info_set``
    (+ optional ``sample`` for context) + ``gold_score``. ROLLOUT: ``sample``
    only, optionally with a precomputed ``target``.
    """

    sample: TurnSample | None = None
    gold_info: frozenset[str] | None = None
    candidate: str | None = None
    info_set: frozenset[str] | None = None
    gold_score: float | None = None
    target: HindsightTarget | None = None


@dataclass
class AnchorSet:
    prompt_type: PromptType
    entries: list[AnchorEntry]

    def __post_init__(self) -> None:
        self.prompt_type = PromptType(self.prompt_type)
        if self.prompt_type is not PromptType.ROLLOUT and not self.entries:
            raise ValueError(f"{self.prompt_type.value} anchor set is empty")
        if self.prompt_type is PromptType.GRADER:
            for e in self.entries:
                if e.gold_score not in GRID:
                    raise ValueError(f"gold score {e.gold_score!r} is off the 0/0.5/1 grid")

    @classmethod
    def from_records(cls, prompt_type: PromptType | str, records: Iterable[Mapping[str, Any]]) -> "AnchorSet":
        prompt_type = PromptType(prompt_type)
        entries = []
        for r in records:
            sample = TurnSample.from_record(r["sample"]) if r.get("sample") else None
            entries.append(
                AnchorEntry(
                    sample=sample,
                    gold_info=frozenset(normalize(x) for x in r["gold_info"]) if "gold_info" in r else None,
                    candidate=r.get("candidate"),
                    info_set=frozenset(normalize(x) for x in r["info_set"]) if "info_set" in r else None,
                    gold_score=float(r["gold_score"]) if "gold_score" in r else None,
                    target=HindsightTarget.from_record(r["target"]) if r.get("target") else None,
                )
            )
        return cls(prompt_type, entries)


@dataclass
class Iteration:
    candidates: list[PromptCandidate]
    selected: int

    @property
    def best(self) -> PromptCandidate:
        return self.candidates[self.selected]


@dataclass
class CalibrationRun:
    K: int
    iterations: list[Iteration] = field(default_factory=list)
    seed: PromptCandidate | None = None

    @property
    def best(self) -> PromptCandidate:
        return self.iterations[-1].best if self.iterations else self.seed

    @property
    def best_scores(self) -> list[float]:
        return [it.best.score for it in self.iterations]

    def trace_records(self) -> list[dict[str, Any]]:
        rows = []
        for k, it in enumerate(self.iterations, start=1):
            for j, c in enumerate(it.candidates):
                rows.append({
                    "iteration": k, "candidate": j, "score": c.score,
                    "selected": j == it.selected, "prompt": c.body,
                })
        return rows


# -- set F1 and MSE --------------------------------------------------------


def set_f1(predicted: Iterable[str], gold: Iterable[str], matcher: Matcher | None = None) -> float:
    """F1 between two sets of normalized strings; two empty sets score 1."""
    pred = {normalize(p) for p in predicted}
    ref = {normalize(g) for g in gold}
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    if matcher is None:
        tp_p = tp_r = len(pred & ref)
    else:
        tp_p = sum(1 for p in pred if any(p == g or matcher(p, g) for g in ref))
        tp_r = sum(1 for g in ref if any(p == g or matcher(p, g) for p in pred))
    precision, recall = tp_p / len(pred), tp_r / len(ref)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def neg_mse(outputs: Sequence[float], gold: Sequence[float]) -> float:
    if len(outputs) != len(gold) or not gold:
        raise ValueError("outputs and gold must be non-empty and aligned")
    return -sum((o - g) ** 2 for o, g in zip(outputs, gold)) / len(gold)


def _check_failures(failed: int, total: int) -> None:
    if total and failed / total > MAX_FAILURE_RATE:
        raise CalibrationInvalid(f"{failed}/{total} anchors failed (limit {MAX_FAILURE_RATE:.0%})")


# -- scorers ---------------------------------------------------------------


def score_extract(p: PromptCandidate | PromptTemplate, anchors: AnchorSet, oracle: Oracle,
                  matcher: Matcher | None = None) -> float:
    """Mean set-F1 over anchors. A failed anchor scores 0."""
    template = p.template if isinstance(p, PromptCandidate) else p
    if not anchors.entries:
        raise ValueError("anchor set is empty")
    scores, failed = [], 0
    for e in anchors.entries:
        try:
            got = extract_info(e.sample, e.sample.goal, template, oracle)
        except (OracleError, ExtractionParseError) as exc:
            log.warning("extract anchor failed: %s", exc)
            failed += 1
            scores.append(0.0)
            continue
        scores.append(set_f1((i.text for i in got), e.gold_info or (), matcher))
    _check_failures(failed, len(anchors.entries))
    return sum(scores) / len(scores)


def _anchor_target(e: AnchorEntry) -> HindsightTarget:
    info = frozenset(InfoItem(t) for t in (e.info_set or ()))
    ref = (e.sample.trajectory_id, e.sample.turn_index) if e.sample else ("anchor", 0)
    return HindsightTarget(ref[0], ref[1], info, label_for(info, False))


def score_grader(p: PromptCandidate | PromptTemplate, anchors: AnchorSet, oracle: Oracle) -> float:
    """Negative MSE of content scores. A failed anchor counts as the worst error (1.0)."""
    template = p.template if isinstance(p, PromptCandidate) else p
    if not anchors.entries:
        raise ValueError("anchor set is empty")
    reqs = [grader_request(CandidateAction(e.candidate or ""), _anchor_target(e), e.sample, template)
            for e in anchors.entries]
    raws = oracle.complete_many(reqs, return_exceptions=True)
    errors, failed = [], 0
    for e, raw in zip(anchors.entries, raws):
        try:
            if isinstance(raw, OracleError):
                raise raw
            errors.append((parse_grader(raw).content_score - e.gold_score) ** 2)
        except (OracleError, GraderParseError) as exc:
            log.warning("grader anchor failed: %s", exc)
            failed += 1
            errors.append(1.0)
    _check_failures(failed, len(anchors.entries))
    return -sum(errors) / len(errors)


@dataclass
class RolloutConfig:
    """The fixed, already-calibrated reward pipeline used to score rollout prompts."""

    grader: PromptTemplate = field(default_factory=lambda: default_template("grader"))
    extractor: PromptTemplate = field(default_factory=lambda: default_template("extract"))
    n: int = 5
    beta: float = 1.0
    mode: FusionMode = FusionMode.MULTIPLICATIVE
    seed: int = 0
    blacklist: frozenset[str] = frozenset()


def rollout_targets(calib: AnchorSet, oracle: Oracle, cfg: RolloutConfig) -> list[HindsightTarget]:
    out = []
    for e in calib.entries:
        if e.target is not None:
            out.append(e.target)
            continue
        s = e.sample
        if s.is_terminal:
            info = frozenset()
        else:
            info = extract_info(s, s.goal, cfg.extractor, oracle)
        raw = HindsightTarget(s.trajectory_id, s.turn_index, info, label_for(info, s.is_terminal),
                              terminal=s.is_terminal)
        out.append(finalize_targets([raw], cfg.blacklist)[0])
    return out


def score_rollout(p: PromptCandidate | PromptTemplate, calib: AnchorSet, oracle: Oracle,
                  cfg: RolloutConfig | None = None, targets: Sequence[HindsightTarget] | None = None) -> float:
    """Mean total reward of ``cfg.n`` rollouts per calibration sample.

    A failed rollout scores 0 reward.
    """
    template = p.template if isinstance(p, PromptCandidate) else p
    cfg = cfg or RolloutConfig()
    if not calib.entries:
        raise ValueError("calibration set is empty")
    targets = list(targets) if targets is not None else rollout_targets(calib, oracle, cfg)
    totals, failed, count = [], 0, 0
    for e, t in zip(calib.entries, targets):
        s = e.sample
        bindings = {"goal": s.goal, "context": render_transcript(s.context)}
        outs = sample_rollouts(oracle, template, bindings, cfg.n, Decode(temperature=1.0), cfg.seed)
        ok = [o for o in outs if isinstance(o, str)]
        failed += len(outs) - len(ok)
        count += len(outs)
        for b in grade_many(ok, [t] * len(ok), [s] * len(ok), cfg.grader, oracle, cfg.beta, cfg.mode):
            totals.append(b.total)
        totals.extend([0.0] * (len(outs) - len(ok)))
    _check_failures(failed, count)
    return sum(totals) / len(totals)


# -- candidate generation --------------------------------------------------


class Mutator(Protocol):
    def __call__(self, template: PromptTemplate, n: int, rng: random.Random) -> list[str]: ...


class IntParamMutator:
    """Rule mutator for prompt families with one integer knob, e.g. ``level=3``.

    Proposes distinct neighbours within ``max_step`` of the current value,
    clamped to ``[lo, hi]``.
    """

    def __init__(self, name: str = "level", lo: int = 0, hi: int = 20, max_step: int = 1):
        self.name = name
        self.lo, self.hi, self.max_step = lo, hi, max_step
        self.pattern = re.compile(rf"\b{re.escape(name)}=(-?\d+)")

    def value(self, body: str) -> int:
        m = self.pattern.search(body)
        if m is None:
            raise ValueError(f"no {self.name}=<int> in prompt")
        return int(m.group(1))

    def __call__(self, template: PromptTemplate, n: int, rng: random.Random) -> list[str]:
        k = self.value(template.body)
        moves = [d for d in range(-self.max_step, self.max_step + 1) if d]
        values = sorted({min(self.hi, max(self.lo, k + d)) for d in moves} - {k})
        rng.shuffle(values)
        return [self.pattern.sub(f"{self.name}={v}", template.body, count=1) for v in values[:n]]


class FewShotMutator:
    """Rule mutator that adds or removes few-shot example blocks."""

    def __init__(self, examples: Sequence[str], header: str = "[Example]"):
        self.examples = list(examples)
        self.header = header

    def __call__(self, template: PromptTemplate, n: int, rng: random.Random) -> list[str]:
        body = template.body
        present = [ex for ex in self.examples if ex in body]
        absent = [ex for ex in self.examples if ex not in body]
        out = [body.replace(f"\n{self.header}\n{ex}\n", "\n", 1) for ex in present]
        out += [f"{body.rstrip()}\n{self.header}\n{ex}\n" for ex in absent]
        rng.shuffle(out)
        return out[:n]


PARAPHRASE_INSTRUCTION = """\
Rephrase this instruction to be more explicit about what the output must contain.
Keep every placeholder in curly braces (for example {{goal}}) exactly as written.
Output only the rewritten instruction.

[Instruction]
{body}
"""


class ParaphraseMutator:
    """LLM mutator: asks the oracle for ``n`` paraphrases at temperature > 0."""

    def __init__(self, oracle: Oracle, temperature: float = 0.9):
        self.oracle = oracle
        self.temperature = temperature

    def __call__(self, template: PromptTemplate, n: int, rng: random.Random) -> list[str]:
        prompt = PARAPHRASE_INSTRUCTION.format(body=template.body)
        return [
            self.oracle.complete_text(prompt, Decode(self.temperature, 2048, rng.randrange(2**31))).strip()
            for _ in range(n)
        ]


def propose(p_best: PromptTemplate, n: int, mutator: Mutator, rng: random.Random | None = None) -> list[PromptCandidate]:
    """Incumbent first, then up to ``n - 1`` distinct valid mutations."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng or random.Random(0)
    out = [PromptCandidate(p_best)]
    if n == 1:
        return out
    try:
        bodies = mutator(p_best, n - 1, rng)
    except Exception as exc:  # noqa: BLE001 - a broken mutator degrades to the incumbent
        log.warning("mutator failed, keeping incumbent only: %s", exc)
        return out
    seen = {p_best.body}
    for body in bodies:
        if body in seen:
            continue
        if not is_valid(p_best.prompt_type, body):
            log.info("dropping candidate that breaks the %s render contract", p_best.prompt_type.value)
            continue
        seen.add(body)
        out.append(PromptCandidate(p_best.with_body(body)))
        if len(out) == n:
            break
    return out


def calibrate(
    seed: PromptTemplate,
    scorer: Callable[[PromptTemplate], float],
    K: int = 30,
    n_per_iter: int = 4,
    mutator: Mutator | None = None,
    rng_seed: int = 0,
    max_workers: int = 4,
) -> CalibrationRun:
    """Run ``K`` propose/score/select rounds starting from ``seed``.

    ``scorer`` closes over the anchors and oracle. Ties go to the incumbent,
    then to the lowest candidate index.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = random.Random(rng_seed)
    mutator = mutator or (lambda t, n, r: [])
    cache: dict[str, float] = {}
    run = CalibrationRun(K=K)
    best = seed
    for _ in range(K):
        cands = propose(best, n_per_iter, mutator, rng)
        fresh = [c for c in cands if c.body not in cache]
        if len(fresh) > 1 and max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                scores = list(pool.map(lambda c: scorer(c.template), fresh))
        else:
            scores = [scorer(c.template) for c in fresh]
        for c, s in zip(fresh, scores):
            cache[c.body] = s
        for c in cands:
            c.score = cache[c.body]
        if run.seed is None:
            run.seed = PromptCandidate(seed, cache[seed.body])
        # index 0 is the incumbent; first maximum wins ties
        selected = max(range(len(cands)), key=lambda j: (cands[j].score, -j))
        run.iterations.append(Iteration(cands, selected))
        best = cands[selected].template
    return run
