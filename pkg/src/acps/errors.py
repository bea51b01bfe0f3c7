"""Exception hierarchy.

Every error raised by the package derives from :class:`ACPSError` so callers
can catch the whole family at a pipeline boundary.
"""

from __future__ import annotations


class ACPSError(Exception):
    """Base class for all package errors."""


# core
class EmptyAnswer(ACPSError):
    pass


class UnmappableChoice(ACPSError):
    pass


class DimensionMismatch(ACPSError):
    pass


class ZeroVector(ACPSError):
    pass


# backends
class FixtureMiss(ACPSError):
    def __init__(self, key: tuple):
        super().__init__(f"no replay fixture entry for key {key!r}")
        self.key = key


class RemoteError(ACPSError):
    def __init__(self, status: int | None, body: str):
        super().__init__(f"remote call failed (status={status}): {body[:500]}")
        self.status = status
        self.body = body


class SafetyRefusal(ACPSError):
    pass


class EmptyInput(ACPSError):
    pass


# router
class EmptyLogits(ACPSError):
    pass


class NonFiniteLogit(ACPSError):
    pass


# trace engine
class AllTracesFailed(ACPSError):
    pass


class KTooLarge(ACPSError):
    pass


class InconsistentM(ACPSError):
    pass


# demo bank
class ParseError(ACPSError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class DuplicateId(ACPSError):
    pass


class EmbeddingFailure(ACPSError):
    pass


class EmptyBank(ACPSError):
    pass


class LTooLarge(ACPSError):
    pass


# estimator
class AllSamplesUnparseable(ACPSError):
    pass


class NoParseableSamples(ACPSError):
    pass


class WeightCountMismatch(ACPSError):
    pass


class WeightOutOfRange(ACPSError):
    pass


class LengthMismatch(ACPSError):
    pass


class EmptyScores(ACPSError):
    pass


# harness
class SchemaViolation(ParseError):
    def __init__(self, field: str, message: str, line: int | None = None):
        super().__init__(f"field {field!r}: {message}", line)
        self.field = field


class EmptyResults(ACPSError):
    pass


class NoEvidence(ACPSError):
    pass


class EmptyPool(ACPSError):
    pass


class DisjointnessViolation(EmptyPool):
    pass


class EmptyLog(ACPSError):
    pass


class AggregateMismatch(ACPSError):
    pass


class ReportIOError(ACPSError, OSError):
    pass


# cli
class ConfigError(ACPSError):
    pass
