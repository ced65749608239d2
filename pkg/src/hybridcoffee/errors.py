"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`HybridCoffeeError`; the CLI reports the class name as the
machine-readable error kind.
"""


class HybridCoffeeError(Exception):
    """Base class for all package errors."""


class IndexOutOfRange(HybridCoffeeError, IndexError):
    pass


class DuplicateEntry(HybridCoffeeError, ValueError):
    pass


class NonFiniteValue(HybridCoffeeError, ValueError):
    pass


class ShapeMismatch(HybridCoffeeError, ValueError):
    pass


class TooLargeForDense(HybridCoffeeError, MemoryError):
    pass


class RankTooLarge(HybridCoffeeError, ValueError):
    pass


class ConvergenceFailure(HybridCoffeeError, RuntimeError):
    pass


class NotSymmetric(HybridCoffeeError, ValueError):
    pass


class NotPositiveDefinite(HybridCoffeeError, ValueError):
    pass


class SingularFactor(HybridCoffeeError, ValueError):
    pass


class UnknownField(HybridCoffeeError, KeyError):
    pass


class EmptyList(HybridCoffeeError, ValueError):
    pass


class EmptyHistory(HybridCoffeeError, ValueError):
    pass


class NotEnoughEligibleUsers(HybridCoffeeError, ValueError):
    pass


class DegenerateSample(HybridCoffeeError, ValueError):
    pass


class EmptyGrid(HybridCoffeeError, ValueError):
    pass


class ParseError(HybridCoffeeError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownRatingValue(HybridCoffeeError, ValueError):
    pass


class ConfigError(HybridCoffeeError, ValueError):
    pass


class IoError(HybridCoffeeError, OSError):
    pass
