"""Exception types shared across the package.

Everything raised on purpose derives from ScaleScanError so the CLI can
catch one base class and exit nonzero without swallowing real bugs.
"""


class ScaleScanError(Exception):
    """Base class for deliberate failures."""


class ConfigError(ScaleScanError):
    """A configuration value is invalid or inconsistent with the rest."""


class ContractError(ScaleScanError):
    """An API was called in a way its contract forbids (shapes, modes, order)."""


class DomainError(ScaleScanError):
    """A numeric input left the mathematical domain of an operation."""
