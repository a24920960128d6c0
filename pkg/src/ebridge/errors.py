"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration and input problems exit
with 2, numeric failures with 3.
"""


class EBridgeError(Exception):
    pass


class ConfigError(EBridgeError, ValueError):
    """Invalid configuration, checkpoint schema or unknown tag."""


class InputError(EBridgeError, ValueError):
    """Array arguments with the wrong shape."""


class DomainError(EBridgeError, ValueError):
    """A scalar argument (time, horizon) outside its admissible range."""


class NumericError(EBridgeError, ArithmeticError):
    """A computation produced NaN/Inf or hit a degenerate denominator."""


class TrainingError(NumericError):
    """Non-finite loss, gradient or parameter during optimization."""
