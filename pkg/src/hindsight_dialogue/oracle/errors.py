from __future__ import annotations


class OracleError(RuntimeError):
    """Base class; ``kind`` is the stable taxonomy label."""

    kind = "ORACLE_ERROR"


class RetryableExhausted(OracleError):
    kind = "RETRYABLE_EXHAUSTED"

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class PermanentError(OracleError):
    kind = "PERMANENT"

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class MalformedResponse(OracleError):
    kind = "MALFORMED_RESPONSE"


class BatchFailed(OracleError):
    kind = "BATCH_FAILED"

    def __init__(self, errors: list[BaseException]):
        super().__init__(f"all {len(errors)} requests in the batch failed: {errors[0]!r}")
        self.errors = errors


class GraderParseError(ValueError):
    kind = "GRADER_PARSE_ERROR"


class MissingTag(GraderParseError):
    kind = "MISSING_TAG"

    def __init__(self, name: str):
        super().__init__(f"missing <{name}> tag")
        self.name = name


class InvalidScore(GraderParseError):
    kind = "INVALID_SCORE"

    def __init__(self, value: object):
        super().__init__(f"score {value!r} is not on the {{0.0, 0.5, 1.0}} grid")
        self.value = value
