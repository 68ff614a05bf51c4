"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """A configuration value is invalid or unknown."""


class EvaluationError(ArithmeticError):
    """A computation produced a non-finite value."""


class DivergenceError(EvaluationError):
    """Training produced a non-finite loss."""


class GenerationError(RuntimeError):
    """A synthetic environment could not be generated."""


class EpisodeError(RuntimeError):
    """An invalid action or a step after termination."""
