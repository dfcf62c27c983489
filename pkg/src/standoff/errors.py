"""Exception hierarchy shared across the package."""


class StandoffError(Exception):
    """Base class for all domain errors raised by this package."""


class StoreError(StandoffError):
    """Invalid operation against a collection, document, or annotation set."""


class SpanError(StoreError):
    """Span out of range or not on a character boundary."""


class LockConflictError(StoreError):
    """A (document, annotation set) pair is write-locked by another owner."""


class ImmutabilityError(StoreError):
    """An operation would rewrite immutable document text."""


class CodecError(StandoffError):
    """Malformed markup on import, or unexportable annotations."""


class QueryError(StandoffError):
    """Malformed span-query pattern or untreeable annotations."""


class PipelineError(StandoffError):
    """Registry, configuration, or execution failure."""


class ProtocolError(StandoffError):
    """Malformed external-tool request or response stream."""
