"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A precondition on an argument was violated."""


class DataCorruption(ValueError):
    """A field contains non-finite values."""


class DivergenceError(RuntimeError):
    """A solver or sampler produced non-finite or exploding values."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class FormatError(ValueError):
    """A binary container could not be parsed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class SelectionError(RuntimeError):
    """Model selection could not rank any candidate."""
