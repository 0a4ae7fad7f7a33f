"""Exception types shared across the pipeline."""
from __future__ import annotations


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class IngestionError(PipelineError):
    """A source file could not be read or parsed."""


class ValidationError(PipelineError):
    """Input data violates an invariant (duplicate ids, empty text, ...)."""


class TemplateError(PipelineError):
    """A prompt template could not be rendered (missing binding)."""

    def __init__(self, message: str, placeholder: str | None = None):
        super().__init__(message)
        self.placeholder = placeholder


class TransportError(PipelineError):
    """A live backend call failed after exhausting retries."""


class AuthError(TransportError):
    """The live backend rejected our credentials. Never retried."""


class FixtureError(PipelineError):
    """The mock backend has no scripted response for a request key."""


class StructuredOutputError(PipelineError):
    """No well-formed JSON value could be extracted from a completion.

    Carries the raw model text for audit logs.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class BackendContractError(PipelineError):
    """A backend response violated its wire contract (e.g. ragged dims)."""


class StateError(PipelineError):
    """An operation was invoked before its prerequisites exist."""


class DataError(PipelineError):
    """A data file has malformed content (names the offending record)."""
