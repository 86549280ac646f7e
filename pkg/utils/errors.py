"""
Exception hierarchy for the BPME toolkit.

Every error derives from ``BPMEError`` and from the builtin exception a
generic caller would expect (``ValueError`` for bad inputs, ``RuntimeError``
for estimators that did not settle), so ``except ValueError`` keeps working.
"""

from typing import Any, Dict


class BPMEError(Exception):
    """Base class. Extra keyword arguments are kept as diagnostic context."""

    def __init__(self, message: str = "", **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_record(self) -> Dict[str, Any]:
        """Machine-readable error record (one JSON object)."""
        record = {"error": type(self).__name__, "message": self.message}
        record.update({k: v for k, v in self.context.items() if v is not None})
        return record


# -------------------------------------------------------------------------
## Environment


class NonStochasticError(BPMEError, ValueError):
    pass


class NegativeEntryError(BPMEError, ValueError):
    pass


class NotPrimitiveError(BPMEError, ValueError):
    pass


class ZeroMassError(BPMEError, ValueError):
    pass


# -------------------------------------------------------------------------
## Offspring laws


class DomainError(BPMEError, ValueError):
    pass


class Condition2Violated(BPMEError, ValueError):
    """Mean not in (0, inf) or infinite second moment."""


class Condition4Violated(BPMEError, ValueError):
    """P(xi >= 2) = 0."""


class PopulationOverflow(BPMEError, OverflowError):
    pass


class PhiOutOfRange(BPMEError, ArithmeticError):
    """phi left the window [phi(0)/2, 2 phi(1)]."""


# -------------------------------------------------------------------------
## Numerics and estimators


class SpectralMismatch(BPMEError, ArithmeticError):
    pass


class IndexOutOfRange(BPMEError, IndexError):
    pass


class TailNotConverged(BPMEError, RuntimeError):
    pass


class NotCritical(BPMEError, ValueError):
    pass


class HorizonTooShort(BPMEError, RuntimeError):
    pass


class OutsideSupport(BPMEError, ValueError):
    pass


class NoPlateau(BPMEError, RuntimeError):
    pass


class TooFewSurvivors(BPMEError, RuntimeError):
    pass


# -------------------------------------------------------------------------
## Configuration


class ParseError(BPMEError, ValueError):
    """Config text is not valid JSON. Context carries ``line`` and ``column``."""


class ValidationError(BPMEError, ValueError):
    """Config parsed but is not a valid experiment. Context carries ``field``."""
