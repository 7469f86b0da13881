"""Exception hierarchy shared by all stv modules.

The CLI maps these onto process exit codes: configuration problems exit
with 2, protocol violations with 3 and numerical failures with 4.
"""


class StvError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StvError):
    """Invalid configuration: bad orders, malformed flags, missing data."""


class ProtocolError(StvError):
    """A multi-party protocol rule was violated (fail-stop)."""


class ShareMismatchError(ProtocolError):
    """Shares with different tags or dimensions were combined."""


class NumericalError(StvError):
    """A numerical failure: overflow, singularity, divergence."""


class EncodingRangeError(NumericalError):
    """A value does not fit the fixed-point representable range."""


class SingularMatrixError(NumericalError):
    """A matrix that must be inverted is (near-)singular."""


class DivergenceError(NumericalError):
    """Iterative optimisation produced non-finite values."""
