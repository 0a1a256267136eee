"""Exception types raised by the simulator."""


class InvalidParameterError(ValueError):
    """A parameter lies outside the range an operation accepts."""


class DegenerateEstimateError(ArithmeticError):
    """A channel estimate is exactly zero, so its direction is undefined."""


class CalibrationInfeasibleError(ValueError):
    """No positive inversion gain satisfies the average power constraint."""


class DomainError(ValueError):
    """A DMT curve was requested outside its admissible parameter box."""


class EstimationError(ValueError):
    """Too few usable points to fit an outage slope."""


class ConfigError(ValueError):
    """An experiment configuration file is malformed or inconsistent."""
