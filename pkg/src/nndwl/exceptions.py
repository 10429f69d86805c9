"""Exception hierarchy shared by every module.

The CLI maps :class:`InputError` to exit code 2 and :class:`DivergenceError`
to exit code 3.
"""


class NNDWLError(Exception):
    """Base class for all errors raised by this package."""


class InputError(NNDWLError, ValueError):
    """Malformed or inconsistent input data (files, dimensions, vocabularies)."""


class CorpusError(InputError):
    pass


class ModelFormatError(InputError):
    """A model file could not be decoded.

    ``offset`` is the byte position at which decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DimensionError(InputError):
    pass


class DivergenceError(NNDWLError, ArithmeticError):
    """Training produced non-finite weights or loss."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer
