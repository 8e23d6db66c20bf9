"""Exception hierarchy shared by every module."""


class AqpinnError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AqpinnError, ValueError):
    """Invalid static configuration (qubit counts, topology, dimensions)."""


class UsageError(AqpinnError, ValueError):
    """A call with arguments that violate the operation's preconditions."""


class DataError(AqpinnError, ValueError):
    """Non-finite or otherwise unusable input data."""


class NumericError(AqpinnError, ArithmeticError):
    """Division by zero, NaN objective, or a diverging computation."""


class FormatError(AqpinnError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
