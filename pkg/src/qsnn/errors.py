"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not compose."""


class ValidationError(ValueError):
    """A value or file violates a documented invariant."""


class ParseError(ValueError):
    """A file could not be parsed.

    ``offset`` is the byte position where parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericOverflowError(ArithmeticError):
    """A membrane potential became non-finite."""

    def __init__(self, index, value):
        super().__init__(f"non-finite membrane potential {value!r} at neuron index {index}")
        self.index = index
        self.value = value


class ProtocolError(RuntimeError):
    """An environment was driven outside its step protocol."""
