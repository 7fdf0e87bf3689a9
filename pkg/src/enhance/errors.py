"""Exception hierarchy shared across the package."""


class EnhanceError(Exception):
    """Base class for all errors raised by this package."""


class InvalidValue(EnhanceError, ValueError):
    """Input contains a non-finite entry."""


class ShapeMismatch(EnhanceError, ValueError):
    """Array lengths or canvas dimensions disagree."""


class DegenerateInput(EnhanceError, ValueError):
    """Input carries no ordering information (e.g. every entry tied)."""


class DegenerateMask(EnhanceError, ValueError):
    """Mask covers too few pixels to be usable."""


class MaskNotFull(EnhanceError, ValueError):
    pass


class FormatError(EnhanceError):
    """A persisted file is truncated, has a wrong magic or version."""


class IntegrityError(EnhanceError):
    """A persisted file decodes but violates a state invariant."""


class DegenerateQuad(EnhanceError, ValueError):
    pass


class TooFewStars(EnhanceError, ValueError):
    pass


class NoSolution(EnhanceError):
    """Plate solving exhausted its quad budget without an accepted proposal."""


class DecodeError(EnhanceError):
    pass


class ConfigError(EnhanceError, ValueError):
    pass


class EmptyRun(EnhanceError):
    """No input image survived decoding and registration."""
