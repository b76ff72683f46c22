"""Exception hierarchy shared across the package."""


class DualVitError(Exception):
    """Base class for all errors raised by dualvit."""


class DimensionError(DualVitError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(DualVitError):
    """A model or layer configuration is internally inconsistent."""


class ContractError(DualVitError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class InputError(DualVitError):
    """User-supplied input (image resolution, file path, ...) is invalid."""


class FormatError(DualVitError):
    """A serialized file does not conform to its format."""
