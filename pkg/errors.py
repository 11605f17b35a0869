"""
Exceptions raised by the detection pipeline.

Library code raises these; the command-line layer logs them and turns them
into a nonzero exit status.
"""


class PipelineError(Exception):
    """Base class for every expected pipeline failure."""


class StructuralError(PipelineError):
    """Input files or datasets have an inconsistent geometry."""


class ParseError(PipelineError):
    """A token in an input file could not be read as a number."""

    def __init__(self, path, line, column, token):
        self.path = str(path)
        self.line = line
        self.column = column
        self.token = token
        super().__init__(f"{self.path}:{line}:{column}: cannot parse {token!r} as a number")


class ConfigError(PipelineError):
    """A configuration value is invalid or inconsistent."""


class ShapeError(PipelineError):
    """Tensor shapes do not fit the requested operation."""


class TrainingError(PipelineError):
    """Training diverged (non-finite loss or gradient)."""

    def __init__(self, message, epoch=None, batch=None, parameters=()):
        self.epoch = epoch
        self.batch = batch
        self.parameters = tuple(parameters)
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch is not None:
            where.append(f"batch {batch}")
        if self.parameters:
            where.append(f"parameters {', '.join(self.parameters)}")
        suffix = f" ({'; '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class CacheError(PipelineError):
    """The channel cache holds an entry that does not match its key."""


class CheckpointError(PipelineError):
    """A checkpoint file is missing, malformed or of an unknown version."""
