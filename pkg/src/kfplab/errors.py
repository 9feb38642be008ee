"""Exception types raised across the package."""


class KFPError(Exception):
    """Base class for all errors raised by kfplab."""


class ParameterError(KFPError, ValueError):
    """An argument is outside the domain of the operation."""


class DegenerateConditioningError(KFPError, ValueError):
    """Conditioning on a variable with zero variance (t = 0)."""


class SpreadingUnavailableError(KFPError):
    """The wrapped conditional law has no uniform component (beta <= 0)."""


class SizeMismatchError(KFPError, ValueError):
    pass


class DomainError(KFPError, ValueError):
    """A deterministic bound was requested outside its region of validity."""


class FitWindowError(KFPError):
    """Not enough points with adequate signal-to-noise to fit a rate."""


class ConfigError(KFPError, ValueError):
    pass
