"""Exception types shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 2, NumericalError -> 3.
"""


class HjgamesError(Exception):
    """Base class for all package errors."""


class ContractError(HjgamesError):
    """A call violated an operation precondition (shape/dimension mismatch)."""


class ConfigError(HjgamesError):
    """Invalid or inconsistent configuration (bad grid spec, unknown keys, ...)."""


class OutOfDomainError(HjgamesError):
    """Query outside the declared domain of a value representation."""


class NumericalError(HjgamesError):
    """Non-finite values where finite ones are required (solver sweeps, losses)."""


class EstimationError(HjgamesError):
    """A sampling-based value estimate could not be produced for a point."""
