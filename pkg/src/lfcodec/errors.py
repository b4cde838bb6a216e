"""Exception hierarchy shared by every lfcodec module."""


class LFCodecError(Exception):
    """Base class for all errors raised by lfcodec."""


class ShapeError(LFCodecError, ValueError):
    pass


class AlignmentError(ShapeError):
    """Patch origin or size not on a macro-pixel boundary."""


class StateError(LFCodecError, RuntimeError):
    pass


class ParameterError(LFCodecError, ValueError):
    pass


class NumericError(LFCodecError, ArithmeticError):
    pass


class ContractError(LFCodecError, AssertionError):
    """A causality or pre-condition contract was violated."""


class ConfigError(LFCodecError, ValueError):
    pass


class MetricError(LFCodecError, ValueError):
    pass


class DecodeError(LFCodecError):
    """Raised when a bitstream cannot be decoded.

    ``position`` is the byte offset (or symbol index, for range-coded
    payloads) where decoding failed, when known.
    """

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class IntegrityError(DecodeError):
    """CRC or checkpoint-hash mismatch."""
