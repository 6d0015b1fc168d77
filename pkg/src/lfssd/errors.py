"""Exception hierarchy shared by every module in the package."""


class LfssdError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for this failure."""

    exit_code = 2


class ConfigError(LfssdError):
    exit_code = 1


class ShapeError(LfssdError, ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        joined = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class LabelRangeError(LfssdError, ValueError):
    def __init__(self, label, n_classes):
        self.label = label
        self.n_classes = n_classes
        super().__init__(f"label {label} outside [0, {n_classes})")


class NotScalarError(LfssdError, ValueError):
    def __init__(self, shape):
        self.shape = tuple(shape)
        super().__init__(f"backward needs a single-element output, got shape {self.shape}")


class CheckpointIOError(LfssdError, OSError):
    pass


class MalformedFileError(LfssdError, ValueError):
    pass


class LengthMismatchError(LfssdError, ValueError):
    pass


class SchemaError(LfssdError, ValueError):
    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        super().__init__(f"missing column {column!r}" + (f" in {path}" if path else ""))


class ParseError(LfssdError, ValueError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")


class EmptyFileError(LfssdError, ValueError):
    pass


class SplitError(LfssdError, ValueError):
    exit_code = 1


class DivergenceError(LfssdError, ArithmeticError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


class EmptySelectionError(LfssdError, ValueError):
    pass


class SourceMismatchError(LfssdError, ValueError):
    pass


class DegenerateAttackError(LfssdError, ValueError):
    pass


class CheckpointMismatchError(LfssdError, ValueError):
    """An importance file was computed from a different checkpoint."""
