"""Exception hierarchy shared by every subpackage."""


class ArenaError(Exception):
    """Base class for all errors raised by captcha_arena."""


class ConfigError(ArenaError, ValueError):
    pass


class FormatError(ArenaError):
    """A container file is truncated, corrupted, or of an unknown version."""


class ShapeError(ArenaError, ValueError):
    pass


class BoundsError(ArenaError, ValueError):
    pass


class DomainError(ArenaError, ValueError):
    """A numeric argument lies outside the domain of the function."""


class IncompleteTableError(ArenaError, KeyError):
    pass


class MissingStageError(ArenaError, KeyError):
    pass


class MalformedTreeError(ArenaError, ValueError):
    pass
