"""Exception types shared across the package.

The CLI maps these onto exit codes: config problems exit 1, data problems
exit 2, anything else exits 3.
"""


class VitbenchError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VitbenchError, ValueError):
    """Operands have incompatible shapes; the message names both."""


class ConfigError(VitbenchError, ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class ContractError(VitbenchError, ValueError):
    """An operation was called in a way its contract forbids."""


class DataError(VitbenchError, ValueError):
    """A dataset record, manifest, or label is invalid."""


class DecodeError(DataError, IOError):
    """An image file is missing, unsupported, or corrupt; carries the path."""
