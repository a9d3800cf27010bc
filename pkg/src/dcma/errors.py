"""Exception types shared across the package."""


class DcmaError(Exception):
    """Base class for package errors."""


class ShapeError(DcmaError, ValueError):
    pass


class ArgumentError(DcmaError, ValueError):
    pass


class UnsupportedDimensionError(ArgumentError):
    pass


class ConfigError(DcmaError, ValueError):
    pass


class DataError(DcmaError, ValueError):
    pass


class TrainingError(DcmaError, RuntimeError):
    pass


class FitError(DcmaError, RuntimeError):
    pass


class SimulationError(DcmaError, RuntimeError):
    pass
