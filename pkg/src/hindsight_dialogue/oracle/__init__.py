from .errors import (
    BatchFailed,
    GraderParseError,
    InvalidScore,
    MalformedResponse,
    MissingTag,
    OracleError,
    PermanentError,
    RetryableExhausted,
)
from .gateway import (
    Decode,
    GraderVerdict,
    Oracle,
    OracleRequest,
    format_verdict,
    parse_grader,
    sample_rollouts,
)
from .remote import RemoteOracle
from .templates import (
    PromptTemplate,
    PromptType,
    TemplateError,
    default_template,
    irrelevant_template,
)

__all__ = [
    "BatchFailed",
    "Decode",
    "GraderParseError",
    "GraderVerdict",
    "InvalidScore",
    "MalformedResponse",
    "MissingTag",
    "Oracle",
    "OracleError",
    "OracleRequest",
    "PermanentError",
    "PromptTemplate",
    "PromptType",
    "RemoteOracle",
    "RetryableExhausted",
    "TemplateError",
    "default_template",
    "format_verdict",
    "irrelevant_template",
    "parse_grader",
    "sample_rollouts",
]
