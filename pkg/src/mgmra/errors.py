"""Exception hierarchy shared by all modules."""


class MGMRAError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ContractError(MGMRAError, ValueError):
    """A precondition of an operation was violated by the caller."""

    exit_code = 7


class DimensionError(ContractError):
    exit_code = 7


class DegenerateInputError(ContractError):
    """A vector that must have nonzero norm is (numerically) zero."""

    exit_code = 7


class ConfigurationError(ContractError):
    exit_code = 4


class SamplingError(ContractError):
    """A batch does not satisfy the PK sampling contract."""

    exit_code = 7


class NumericHealthError(MGMRAError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""

    exit_code = 6


class DatasetFormatError(MGMRAError):
    """Base for malformed dataset / checkpoint files. ``code`` is stable."""

    code = 10
    exit_code = 5


class BadMagicError(DatasetFormatError):
    code = 11


class VersionMismatchError(DatasetFormatError):
    code = 12


class TruncatedPayloadError(DatasetFormatError):
    code = 13
