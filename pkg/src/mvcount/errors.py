"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""


class GenerationError(RuntimeError):
    """Synthetic scene or layout generation could not satisfy its constraints."""


class ConfigError(ValueError):
    """A configuration is invalid or incompatible with a checkpoint."""
