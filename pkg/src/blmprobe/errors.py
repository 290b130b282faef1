"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2,
DataIntegrityError/FormatError -> 3, NumericError -> 4.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input, e.g. a zero-norm vector fed to cosine."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataIntegrityError(ValueError):
    """Dataset fails referential integrity (missing ids, bad candidate sets)."""


class FormatError(ValueError):
    """A serialized file violates its declared format."""


class NumericError(RuntimeError):
    """Non-finite values encountered where finiteness is required."""
