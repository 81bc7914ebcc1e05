"""Exception types raised across the package."""


class DegenerateSceneError(ValueError):
    """A propagation length collapsed to zero."""


class NoCapacityError(ValueError):
    """Every channel gain is zero, so no power can be allocated."""


class NumericalError(ArithmeticError):
    """A matrix needed for whitening or least squares is singular."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
