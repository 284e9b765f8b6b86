"""Exception types shared across the package."""


class BudgetRankError(Exception):
    """Base class for all package errors."""


class ValidationError(BudgetRankError, ValueError):
    """Bad input data, bad configuration, or a violated contract."""


class RemoteBackendError(BudgetRankError, RuntimeError):
    """A remote LLM or cross-encoder backend failed.

    Carries the endpoint and, when the server answered at all, the HTTP
    status code.
    """

    def __init__(self, message: str, *, endpoint: str | None = None, status: int | None = None):
        super().__init__(message)
        self.endpoint = endpoint
        self.status = status


class PipelineStageError(BudgetRankError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
