"""Exception hierarchy shared by all simulator modules."""


class UflsimError(Exception):
    """Base class for all simulator errors."""


class ConfigError(UflsimError):
    """Invalid or inconsistent configuration value."""


class InputError(UflsimError):
    """Malformed runtime input (bad dimensions, out-of-range values, ...)."""


class ParseError(UflsimError):
    """Malformed external file (IDX datasets, config files, ...)."""


class DecodeFailure(UflsimError):
    """Numerical failure inside an iterative decoder.

    Carries the iteration index at which the failure was detected.
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
