"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class ModbenchError(Exception):
    """Base class for all engine errors."""


# --- domain types / blob handling ---

class PathEscapeError(ModbenchError):
    """A blob path is absolute or traverses outside its data root."""


class MissingBlobError(ModbenchError):
    """A blob reference does not resolve to a readable file of the declared size."""


class EmptyPayloadsError(ModbenchError):
    """A sample carries no payloads at all."""


# --- prompt library ---

class UnknownTemplateError(ModbenchError):
    pass


class MissingBindingError(ModbenchError):
    def __init__(self, name: str):
        super().__init__(f"missing binding for placeholder {{{name}}}")
        self.name = name


class ExtraneousBindingError(ModbenchError):
    def __init__(self, name: str):
        super().__init__(f"binding {name!r} matches no placeholder in the template")
        self.name = name


class MarkerNotFoundError(ModbenchError):
    """The [ANSWER]: marker is absent from a model reply."""


class NoJsonFoundError(ModbenchError):
    """No well-formed JSON object could be extracted from a model reply."""


class SchemaMismatchError(ModbenchError):
    """Extracted JSON does not satisfy the expected schema."""


class ReportInvariantError(ModbenchError):
    """A judge report violates a structural invariant (e.g. H > N)."""


# --- backends ---

class BackendError(ModbenchError):
    pass


class BackendTimeoutError(BackendError):
    pass


class TransportError(BackendError):
    pass


class RateLimitedError(BackendError):
    pass


class UnsupportedAttachmentError(BackendError):
    pass


class UnsupportedModalityError(BackendError):
    pass


class InvalidParamsError(BackendError):
    pass


class MalformedJudgmentError(BackendError):
    """Judge output stayed unparseable after the allowed re-asks."""


# --- metrics ---

class LengthMismatchError(ModbenchError):
    pass


class EmptySignalError(ModbenchError):
    pass


class DimensionMismatchError(ModbenchError):
    pass


class SidecarUnavailableError(ModbenchError):
    pass


class RangeViolationError(ModbenchError):
    """A remote metric value fell outside its declared range."""


# --- paradigms ---

class EmptyCandidatesError(ModbenchError):
    pass


class NoUsableConditionError(ModbenchError):
    """No observed payload can seed a generation prompt."""


class MinedPromptsEmptyError(ModbenchError):
    """The miner returned no usable prompts even after a re-ask."""


# --- agents ---

class MalformedRulesError(ModbenchError):
    pass


class AllAnswersFailedError(ModbenchError):
    """Every mining question was dropped because its answer failed parsing."""


class MalformedSummaryError(ModbenchError):
    pass


class InsufficientPromptsError(ModbenchError):
    """Too few synthesized prompts survived the lexical constraints."""


class MalformedRefinementError(ModbenchError):
    pass


# --- harness ---

class ManifestParseError(ModbenchError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"manifest line {line_no}: {reason}")
        self.line_no = line_no


class ManifestValidationError(ModbenchError):
    def __init__(self, sample_id: str, reason: str):
        super().__init__(f"sample {sample_id!r}: {reason}")
        self.sample_id = sample_id


class SchemaVersionMismatchError(ModbenchError):
    pass


class FatalConfigError(ModbenchError):
    """The run configuration itself is unusable; nothing was executed."""
