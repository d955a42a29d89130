"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """A parameter set violates its documented invariants."""


class InputError(ValueError):
    """An array argument has the wrong length, shape or content."""


class DegenerateInputError(InputError):
    """The input makes the requested quantity undefined (e.g. a zero vector)."""


class FramingError(InputError):
    """Sample streams cannot be aligned to symbol boundaries."""


class NumericError(ArithmeticError):
    """Non-finite values appeared where finite values are required."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(ValueError):
    """A binary file is corrupt or written by an unsupported version."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and seed set for replay."""

    def __init__(self, stage, seeds, cause):
        super().__init__(f"stage '{stage}' failed (seeds={seeds}): {cause}")
        self.stage = stage
        self.seeds = seeds
