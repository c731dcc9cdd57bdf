"""Exception hierarchy shared by every stage of the pipeline."""


class CardioError(Exception):
    """Base class for all package errors."""


# corpus
class UnsupportedFormat(CardioError):
    pass


class EmptyDocument(CardioError):
    pass


class InvalidConfig(CardioError, ValueError):
    pass


class DuplicateDocId(CardioError):
    pass


# vector index
class EmptyText(CardioError, ValueError):
    pass


class DimMismatch(CardioError, ValueError):
    pass


class ZeroVector(CardioError, ValueError):
    pass


class EmptyIndex(CardioError):
    pass


# keyword filter
class EmptyChunk(CardioError, ValueError):
    pass


class EmptyQuery(CardioError, ValueError):
    pass


# model output contracts; the CLI maps these to exit code 2
class ParseFailure(CardioError):
    pass


class PlanParseFailure(ParseFailure):
    pass


class UpdateParseFailure(ParseFailure):
    pass


class DecisionParseFailure(ParseFailure):
    pass


class MissingVerdict(ParseFailure):
    pass


# gateway; BackendFailure maps to exit code 3
class BackendFailure(CardioError):
    pass


class MockExhausted(BackendFailure):
    """A scripted mock received a request no rule (and no default) answers."""


class AttachmentUnsupported(CardioError):
    pass


class ConfigError(CardioError):
    pass


# tools
class EmptyInput(CardioError, ValueError):
    pass


class NyquistViolation(CardioError, ValueError):
    pass


class TooShort(CardioError, ValueError):
    pass


class NoBeatsDetected(CardioError):
    pass


class LeadMissing(CardioError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class ToolUnavailable(CardioError):
    pass


class PayloadSchemaError(CardioError):
    pass


# orchestrator
class InvalidCase(CardioError, ValueError):
    pass


# report / cli
class MissingTrace(CardioError):
    pass


class AssetWriteFailure(CardioError):
    pass


class UsageError(CardioError):
    pass
