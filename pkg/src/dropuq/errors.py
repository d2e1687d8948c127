"""Exception hierarchy.

Every error carries a short ``category`` string so the command line can
report failures as a single machine-parsable line.
"""


class DropUQError(Exception):
    category = "error"


class ShapeError(DropUQError, ValueError):
    category = "shape"

    def __init__(self, message, *shapes):
        self.shapes = shapes
        super().__init__(message)


class ValidationError(DropUQError, ValueError):
    category = "validation"


class NumericalError(DropUQError, ArithmeticError):
    category = "numerical"


class TrainingError(DropUQError, RuntimeError):
    category = "training"

    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)


class DataError(DropUQError, ValueError):
    category = "data"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(DropUQError, ValueError):
    category = "config"
