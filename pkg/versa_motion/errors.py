"""Exception hierarchy for versa_motion.

Every domain error is a ``ValueError`` so callers that only know the
numerical contract can keep catching ``ValueError``. The ``code`` attribute
is the stable identifier printed by the command line.
"""


class VersaError(ValueError):
    """Base class for all versa_motion errors."""

    code = "ERROR"


class InvalidInputError(VersaError):
    code = "INVALID_INPUT"


class DegeneracyError(VersaError):
    code = "DEGENERATE"


class InsufficientLengthError(VersaError):
    code = "INSUFFICIENT_LENGTH"


class ShapeError(VersaError):
    code = "SHAPE"


class UndefinedMeanError(VersaError):
    code = "UNDEFINED_MEAN"


class ConsistencyError(VersaError):
    code = "CONSISTENCY"


class DivergenceError(VersaError):
    code = "DIVERGENCE"


class AlignmentError(VersaError):
    code = "ALIGNMENT"


class ProtocolError(VersaError):
    code = "PROTOCOL"


class InsufficientDataError(VersaError):
    code = "INSUFFICIENT_DATA"


class StratificationError(VersaError):
    code = "STRATIFICATION"


class CompatibilityError(VersaError):
    code = "COMPATIBILITY"


class OrderingError(VersaError):
    code = "ORDERING"


class ConfigError(VersaError):
    code = "CONFIG"


class InputError(VersaError):
    code = "INPUT"


class ParseError(VersaError):
    """Malformed file. ``line`` is the 1-based line number when known."""

    code = "PARSE"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
