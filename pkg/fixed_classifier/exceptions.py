"""
Exceptions Module

Error types raised by the fixed-classifier framework.

Every class also derives from the built-in exception a caller would naturally
catch (ValueError, IndexError, OSError, ArithmeticError), so plain
``except ValueError`` handlers keep working.
"""

from typing import Optional


class FixedHeadError(Exception):
    """Base class for all framework errors."""


class DimensionError(FixedHeadError, ValueError):
    """Tensor or array shapes do not fit together."""


class ConfigError(FixedHeadError, ValueError):
    """
    Invalid configuration value.

    Args:
        message: Human readable description
        key: Dotted path of the offending configuration key, if known
    """

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key

    def __reduce__(self):
        return type(self), (str(self), self.key)


class ContractError(FixedHeadError, ValueError):
    """An API was called in a way its contract does not allow."""


class LabelRangeError(FixedHeadError, IndexError):
    """A class label lies outside [0, m)."""


class RangeError(FixedHeadError, ValueError):
    """A corruption parameter lies outside its domain."""


class FormatError(FixedHeadError, ValueError):
    """A binary file has the wrong magic number or version."""


class ConsistencyError(FixedHeadError, ValueError):
    """Two related inputs disagree (e.g. image and label counts)."""


class TruncatedFileError(FixedHeadError, OSError):
    """A binary file ended before its header said it would."""


class IntegrityError(FixedHeadError, ValueError):
    """Stored fixed class vectors do not match their recorded digest."""


class DivergenceError(FixedHeadError, ArithmeticError):
    """
    Training produced a non-finite loss or parameter.

    Args:
        epoch: 1-based epoch in which the divergence was detected
    """

    def __init__(self, epoch: int):
        super().__init__(f"Training diverged: non-finite values in epoch {epoch}")
        self.epoch = epoch

    def __reduce__(self):
        return type(self), (self.epoch,)


class UndefinedStatisticError(FixedHeadError, ValueError):
    """A rank statistic is undefined (one argument has zero rank variance)."""


class InsufficientPairsError(FixedHeadError, ValueError):
    """Fewer than three classes, so too few class pairs to correlate."""


class UndefinedCentroidError(FixedHeadError, ValueError):
    """A class centroid is empty or has zero length."""


class NumericError(FixedHeadError, ArithmeticError):
    """An iterative numerical method did not converge."""
