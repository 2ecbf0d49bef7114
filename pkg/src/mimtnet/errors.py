"""Exception hierarchy. The CLI maps each family to an exit code."""


class MimtnetError(Exception):
    exit_code = 1


class ParameterError(MimtnetError, ValueError):
    exit_code = 2


class ShapeError(ParameterError):
    pass


class DataFormatError(MimtnetError, ValueError):
    exit_code = 3


class GenerationError(MimtnetError, RuntimeError):
    exit_code = 3


class TrainingError(MimtnetError, RuntimeError):
    exit_code = 4


class UndefinedMetricError(MimtnetError, ValueError):
    """Raised when a metric has no defined value (e.g. no positives)."""

    exit_code = 3
