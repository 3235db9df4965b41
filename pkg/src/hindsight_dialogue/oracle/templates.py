"""Prompt templates for the three oracle roles and their render contracts."""

from __future__ import annotations

import enum
import string
from dataclasses import dataclass
from typing import Mapping


class PromptType(str, enum.Enum):
    EXTRACT = "extract"
    GRADER = "grader"
    ROLLOUT = "rollout"


KNOWN_PLACEHOLDERS = frozenset({"goal", "context", "future", "reference_info", "candidate"})

# placeholders each role must reference exactly once
REQUIRED_PLACEHOLDERS: dict[PromptType, frozenset[str]] = {
    PromptType.EXTRACT: frozenset({"goal", "context", "future"}),
    PromptType.GRADER: frozenset({"context", "reference_info", "candidate"}),
    PromptType.ROLLOUT: frozenset({"context"}),
}


class TemplateError(ValueError):
    pass


def placeholders(body: str) -> list[str]:
    """Field names referenced in ``body``, in order, with repeats."""
    try:
        return [name for _, name, _, _ in string.Formatter().parse(body) if name is not None]
    except ValueError as exc:
        raise TemplateError(f"malformed template: {exc}") from exc


@dataclass(frozen=True)
class PromptTemplate:
    prompt_type: PromptType
    body: str
    name: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.prompt_type, PromptType):
            object.__setattr__(self, "prompt_type", PromptType(self.prompt_type))
        validate(self.prompt_type, self.body)

    @property
    def fields(self) -> frozenset[str]:
        return frozenset(placeholders(self.body))

    def render(self, bindings: Mapping[str, str]) -> str:
        missing = self.fields - bindings.keys()
        if missing:
            raise TemplateError(f"unbound placeholders: {sorted(missing)}")
        return self.body.format_map({k: bindings[k] for k in self.fields})

    def with_body(self, body: str, name: str | None = None) -> "PromptTemplate":
        return PromptTemplate(self.prompt_type, body, self.name if name is None else name)


def validate(prompt_type: PromptType, body: str) -> None:
    names = placeholders(body)
    for name in names:
        if name not in KNOWN_PLACEHOLDERS:
            raise TemplateError(f"unknown placeholder {{{name}}}")
        if names.count(name) > 1:
            raise TemplateError(f"placeholder {{{name}}} appears more than once")
    missing = REQUIRED_PLACEHOLDERS[prompt_type] - set(names)
    if missing:
        raise TemplateError(f"{prompt_type.value} template lacks {sorted(missing)}")


def is_valid(prompt_type: PromptType, body: str) -> bool:
    try:
        validate(prompt_type, body)
    except TemplateError:
        return False
    return True


DEFAULT_EXTRACT = """\
[System] You are an expert information analyst. Your task is to identify the
new, goal-relevant information a professional gathered in a conversation.

[Goal] {goal}

[Current Context]
{context}

[Future Conversation]
{future}

[Instruction] Based on the [Future Conversation], list the critical new pieces
of information the assistant elicited from the user, which were not in
the [Current Context]. Output one item per line, each starting with "- ".
If there is no new information, output exactly: - none
"""

DEFAULT_GRADER = """\
[Task] You are an evaluation assistant.
The user will provide a dialogue history between an expert and a client.
You must analyze the dialogue and evaluate the expert's last message.

[Grading Policy]
Format Score:
- 1.0: The last message contains exactly **one question**.
- 0.5: The last message contains **two questions**.
- 0.0: The last message contains **three or more questions**.

Content Score:
- 1.0: The question(s) **directly ask about** any item
    in the Reference Information.
- 0.5: The question(s) are **highly relevant** to,
    but not directly asking about, any item in the [Reference Information].
- 0.0: The question(s) are **irrelevant** to all items
    in the Reference Information.

[Dialogue History]
{context}

[Last Message]
{candidate}

[Reference Information]
{reference_info}

[Output Format]
<think>
Explain your reasoning for the format and content scores
clearly and concisely.</think>
<format_score>
Insert only the format score as a float (e.g., 1.0, 0.5, 0.0)
</format_score>
<content_score>
Insert only the content score as a float (e.g., 1.0, 0.5, 0.0)
</content_score>

[Important]
- Output **exactly** the three tags shown above.
- Do **not** include any additional text, explanation,
    or formatting outside the tags.
- Scores must be based **only** on the **last message**
    and the provided Reference Information.
"""

DEFAULT_ROLLOUT = """\
[System] You are an assistant conducting a goal-oriented inquiry.
Your task is to understand the ongoing conversation and
continue the inquiry.

[Goal] {goal}

[Conversation]
{context}

[Guidelines]
- Each response must contain exactly one clear and concise question
  with 2 to 3 answer choices.
- Do not repeat any previous question.
- Your response must be a single sentence.
- If enough information has been gathered to reach the goal,
  output only: <stop />
"""

DEFAULT_IRRELEVANT = """\
[Task] Read the conversation below, then write one short question that is
irrelevant to any content in the conversation. Output only the question.

[Conversation]
{context}
"""


def default_template(prompt_type: PromptType | str) -> PromptTemplate:
    prompt_type = PromptType(prompt_type)
    body = {
        PromptType.EXTRACT: DEFAULT_EXTRACT,
        PromptType.GRADER: DEFAULT_GRADER,
        PromptType.ROLLOUT: DEFAULT_ROLLOUT,
    }[prompt_type]
    return PromptTemplate(prompt_type, body, name=f"default-{prompt_type.value}")


IRRELEVANT_NAME = "irrelevant"


def irrelevant_template() -> PromptTemplate:
    return PromptTemplate(PromptType.ROLLOUT, DEFAULT_IRRELEVANT, name=IRRELEVANT_NAME)
