"""Exception types shared across the package."""


class GeoSolveError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GeoSolveError, ValueError):
    pass


class ShapeError(GeoSolveError, ValueError):
    pass


class ConfigurationError(GeoSolveError):
    pass


class SchemaError(GeoSolveError, ValueError):
    """Corpus or file content does not match the expected schema."""

    def __init__(self, message, problem_id=None, field=None):
        super().__init__(message)
        self.problem_id = problem_id
        self.field = field


class ParseError(GeoSolveError, ValueError):
    pass


class GenerationError(GeoSolveError):
    pass


class CheckpointError(GeoSolveError):
    pass


class GradCheckError(GeoSolveError):
    """Raised when a gradient check hits a non-finite loss."""

    def __init__(self, message, param_name=None):
        super().__init__(message)
        self.param_name = param_name


class TrainingError(GeoSolveError):
    """A training loop produced a non-finite loss."""
