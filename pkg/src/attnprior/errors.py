"""Exception types shared across the package.

The CLI maps these onto exit codes: domain/usage errors exit 2, engine
errors exit 3, data-format errors exit 4.
"""


class AttnPriorError(Exception):
    """Base class for all package errors."""


# --- domain / usage errors (CLI exit 2) ---------------------------------

class EmptyPrompt(AttnPriorError):
    """Prompt contained no usable tokens after cleanup."""


class GrammarError(AttnPriorError):
    """Prompt does not match the supported noun-phrase grammar."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (token position {position})")
        self.position = position


class DomainError(AttnPriorError):
    """Scalar argument outside its valid domain (delta, N, ...)."""


class UnknownFormat(AttnPriorError):
    """Requested report/output format is not supported."""


# --- computational / engine errors (CLI exit 3) -------------------------

class EngineError(AttnPriorError):
    """Base class for sampling/loss-evaluation failures."""


class NonFiniteInput(EngineError):
    """NaN or infinity where a finite value is required."""


class TokenOutOfRange(EngineError):
    """Token index outside the attention tensor's token axis."""


class DimensionMismatch(EngineError):
    """Two maps or tensors disagree on their grid dimensions."""


class ZeroSupport(EngineError):
    """KL denominator has a zero cell; smooth the map first."""


class MissingMap(EngineError):
    """A parsed token has no attention map in the set."""


class EmptyGroup(EngineError):
    """Object group has no member tokens to combine."""


class EmptyTokenList(EngineError):
    """Cross-attention requires at least one prompt token."""


class OverlappingSupports(EngineError):
    """Factorized components must occupy disjoint grid cells."""


class ExponentSumViolation(EngineError):
    """Factorization exponents must sum to 1."""


class InvalidDims(EngineError):
    """Model dimensions must be positive."""


class ScheduleExhausted(EngineError):
    """Denoising requested past the end of the schedule (t < 1)."""


# --- data-format errors (CLI exit 4) -------------------------------------

class BundleError(AttnPriorError):
    """Attention bundle on disk is malformed or violates its contract."""

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = problems or []
