"""Exception hierarchy. Each error carries the stable code the CLI prints."""


class GmgError(Exception):
    code = "E_INTERNAL"
    exit_code = 2


class DomainError(GmgError):
    """Bad input; the CLI maps these to exit code 1."""

    code = "E_DOMAIN"
    exit_code = 1


class DimensionMismatch(DomainError):
    code = "E_DIM_MISMATCH"


class ZeroVectorInCosine(DomainError):
    code = "E_ZERO_VECTOR"

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DegenerateScale(DomainError):
    code = "E_DEGENERATE_SCALE"


class NonFiniteCost(DomainError):
    code = "E_NON_FINITE"


class TooLarge(DomainError):
    code = "E_TOO_LARGE"


class DegenerateGradient(DomainError):
    code = "E_DEGENERATE_GRADIENT"


class ConfigError(DomainError):
    code = "E_CONFIG_PARSE"


class InputNotFound(DomainError):
    code = "E_INPUT_NOT_FOUND"


class NotConverged(GmgError):
    """Solver did not reach tolerance where a converged result is required."""

    code = "E_NOT_CONVERGED"
