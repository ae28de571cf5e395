class ShapeError(ValueError):
    """Tensor or array has the wrong shape or channel count."""


class InputError(ValueError):
    """Input values are invalid (non-finite pixels, masks outside [0, 1])."""


class ConfigurationError(ValueError):
    """Arguments are inconsistent with the model configuration."""


class EmptyMaskError(ValueError):
    """A support mask has no foreground mass."""


class InfeasibleEpisodeError(ValueError):
    """The split cannot supply an episode with the requested ways/shots/queries."""
