"""Exception types raised by the package."""


class IWFError(Exception):
    """Base class for all package errors."""


class FeasibilityError(IWFError, ValueError):
    """A power budget cannot be met under the given spectral masks."""


class DomainError(IWFError, ValueError):
    """An argument lies outside the domain of an operation."""


class MatrixError(IWFError, ValueError):
    """A matrix argument lacks a required property (e.g. positive definiteness)."""


class EstimationError(IWFError):
    """Too little usable data to fit an estimate."""
