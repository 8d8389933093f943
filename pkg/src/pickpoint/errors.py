"""Exception hierarchy shared by every module.

Anything raised as a :class:`PickPointError` is an input or data problem the
caller can act on; the CLI maps these to exit code 2.
"""


class PickPointError(Exception):
    """Base class for recoverable input/data errors."""


class ParseError(PickPointError):
    pass


class UnsupportedProperty(PickPointError):
    pass


class CalibrationError(PickPointError):
    pass


class ShapeError(PickPointError):
    """Tensor or weight shape does not match what a layer expects."""


class WeightFormatError(PickPointError):
    pass
