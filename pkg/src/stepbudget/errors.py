"""Exception taxonomy shared across the package.

The CLI maps ValidationError (and subclasses) to exit code 1 and
OS-level I/O failures to exit code 2.
"""


class ValidationError(ValueError):
    """Input violates a documented invariant or schema."""


class FormatError(ValidationError):
    """A serialized stream or file does not conform to its format."""


class IncompleteDatasetError(ValidationError):
    """A (prompt, metric, timestep) cell is missing from a metric table."""

    def __init__(self, holes):
        self.holes = list(holes)
        preview = ", ".join(str(h) for h in self.holes[:8])
        suffix = "" if len(self.holes) <= 8 else f", ... ({len(self.holes)} total)"
        super().__init__(f"missing metric cells: {preview}{suffix}")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training; carries diagnostics."""

    def __init__(self, message, epoch=None, batch=None, loss=None):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(message)
