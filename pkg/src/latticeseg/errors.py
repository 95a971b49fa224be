"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes or sizes of inputs are inconsistent with an operation's contract."""


class StateError(RuntimeError):
    """A cached forward record does not match the backward call using it."""


class TrainingError(RuntimeError):
    """Optimization cannot proceed (non-finite gradient, empty dataset, ...)."""


class DegenerateInputError(ValueError):
    """An input is structurally valid but carries no usable content."""


class ParseError(ValueError):
    """A text input could not be decoded."""
