"""Exception types raised across the package.

Every error derives from :class:`RetcnError`; validation errors also derive
from :class:`ValueError` so callers that only know the builtin still catch them.
"""


class RetcnError(Exception):
    """Base class for all package errors."""


class ValidationError(RetcnError, ValueError):
    """Bad input, configuration or file contents (CLI exit code 1)."""


class DimMismatch(ValidationError):
    pass


class BadDistParams(ValidationError):
    pass


class BadAdjacency(ValidationError):
    pass


class ZeroDim(ValidationError):
    pass


class CostOverflow(ValidationError, OverflowError):
    pass


class BadConfig(ValidationError):
    pass


class BadChannelCount(ValidationError):
    pass


class BadLength(ValidationError):
    pass


class BadProbability(ValidationError):
    pass


class JointOutOfRange(ValidationError):
    pass


class BadLabel(ValidationError):
    pass


class BadMagic(ValidationError):
    pass


class TruncatedFile(ValidationError):
    def __init__(self, message, sample_index=None):
        super().__init__(message)
        self.sample_index = sample_index


class DimOverflow(ValidationError):
    pass


class Divergence(RetcnError, RuntimeError):
    """Training loss became non-finite (CLI exit code 2)."""

    def __init__(self, epoch, step=None):
        where = f"epoch {epoch}" if step is None else f"epoch {epoch}, step {step}"
        super().__init__(f"loss diverged (non-finite) at {where}")
        self.epoch = epoch
        self.step = step


class BadHeader(ValidationError):
    """Header fields are individually readable but inconsistent."""
