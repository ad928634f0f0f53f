"""Exception hierarchy shared by all modules.

Each class carries the process exit code the CLI maps it to.
"""


class SgcdplError(Exception):
    exit_code = 1


class InputError(SgcdplError):
    """Malformed or inconsistent input data / parameters."""

    exit_code = 1


class NumericalError(SgcdplError):
    """Divergence or non-finite values during iterative computation."""

    exit_code = 2


class GuidanceUnavailableError(SgcdplError):
    """The labeled set cannot provide the guidance an operation needs."""

    exit_code = 3
