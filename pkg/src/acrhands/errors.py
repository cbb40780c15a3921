"""Exception types raised by the pipeline."""


class ACRError(Exception):
    """Base class for all errors raised by acrhands."""


class DegenerateRotation(ACRError, ValueError):
    """A 6D rotation whose two column vectors are near-zero or parallel."""


class CoincidentCenters(ACRError, ValueError):
    """Two hand centers too close to define a separation direction."""


class DegenerateAlignment(ACRError, ValueError):
    """Point configuration for which a similarity alignment is not defined."""


class InvalidLabel(ACRError, ValueError):
    """Segmentation label outside the valid class range."""


class InitializationError(ACRError, RuntimeError):
    """Fitting started from a point where the loss is not finite."""


class FormatError(ACRError, ValueError):
    """Malformed file contents."""
