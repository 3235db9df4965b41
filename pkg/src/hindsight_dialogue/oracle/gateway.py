"""Backend-agnostic oracle interface.

An oracle turns a rendered prompt into raw text. Concrete backends implement
``complete``; batching, ordering, and rollout sampling live here so both
the remote and the deterministic backend share them.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .errors import BatchFailed, InvalidScore, MissingTag, OracleError
from .templates import PromptTemplate, PromptType, TemplateError

log = logging.getLogger(__name__)
audit_log = logging.getLogger("hindsight_dialogue.audit")

GRID = (0.0, 0.5, 1.0)
SNAP_TOL = 1e-9


@dataclass(frozen=True)
class Decode:
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class OracleRequest:
    template: PromptTemplate
    bindings: Mapping[str, str]
    decode: Decode = field(default_factory=Decode)

    def __post_init__(self) -> None:
        missing = self.template.fields - set(self.bindings)
        if missing:
            raise TemplateError(f"bindings do not cover {sorted(missing)}")

    def render(self) -> str:
        return self.template.render(self.bindings)


class Oracle:
    """Base class. Subclasses override ``complete``."""

    max_concurrency = 8

    def complete(self, req: OracleRequest) -> str:
        raise NotImplementedError

    def complete_text(self, prompt: str, decode: Decode | None = None) -> str:
        """Free-form completion, used by the paraphrasing prompt mutator."""
        raise NotImplementedError(f"{type(self).__name__} does not support free-form prompts")

    def complete_many(
        self, reqs: Sequence[OracleRequest], return_exceptions: bool = False
    ) -> list:
        """Run requests with bounded concurrency; results keep request order."""
        if not reqs:
            return []

        def run(req: OracleRequest):
            try:
                return self.complete(req)
            except OracleError as exc:
                if return_exceptions:
                    return exc
                raise

        if self.max_concurrency <= 1 or len(reqs) == 1:
            return [run(r) for r in reqs]
        with ThreadPoolExecutor(max_workers=min(self.max_concurrency, len(reqs))) as pool:
            return list(pool.map(run, reqs))


def sample_rollouts(
    oracle: Oracle,
    template: PromptTemplate,
    bindings: Mapping[str, str],
    n: int,
    decode: Decode | None = None,
    base_seed: int = 0,
) -> list:
    """Draw ``n`` candidate generations for one context.

    Request ``i`` carries seed ``base_seed + i`` and its result lands at index
    ``i``. A failed candidate is returned in place as its ``OracleError``;
    if every candidate fails, ``BatchFailed`` is raised.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if template.prompt_type is not PromptType.ROLLOUT:
        raise TemplateError("sample_rollouts needs a ROLLOUT template")
    decode = decode or Decode(temperature=1.0)
    reqs = [
        OracleRequest(template, bindings, replace(decode, seed=base_seed + i)) for i in range(n)
    ]
    out = oracle.complete_many(reqs, return_exceptions=True)
    errors = [r for r in out if isinstance(r, OracleError)]
    if len(errors) == n:
        raise BatchFailed(errors)
    for i, r in enumerate(out):
        if isinstance(r, OracleError):
            log.warning("rollout %d failed: %s", i, r)
    return out


@dataclass(frozen=True)
class GraderVerdict:
    format_score: float
    content_score: float
    rationale: str = ""

    def __post_init__(self) -> None:
        for v in (self.format_score, self.content_score):
            if v not in GRID:
                raise InvalidScore(v)


def _tag(raw: str, name: str) -> str:
    m = re.search(rf"<{name}>(.*?)</{name}>", raw, flags=re.DOTALL)
    if m is None:
        raise MissingTag(name)
    return m.group(1).strip()


def snap_score(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise InvalidScore(text) from None
    for g in GRID:
        if abs(value - g) <= SNAP_TOL:
            return g
    raise InvalidScore(value)


def parse_grader(raw: str) -> GraderVerdict:
    rationale = _tag(raw, "think")
    fmt = snap_score(_tag(raw, "format_score"))
    content = snap_score(_tag(raw, "content_score"))
    audit_log.info("grader rationale: %s", rationale)
    return GraderVerdict(fmt, content, rationale)


def format_verdict(v: GraderVerdict) -> str:
    return (
        f"<think>{v.rationale}</think>\n"
        f"<format_score>{v.format_score:.1f}</format_score>\n"
        f"<content_score>{v.content_score:.1f}</content_score>"
    )
