"""Exception hierarchy shared across the toolkit.

Two families matter for the CLI: InputError maps to exit code 2
(bad or inconsistent inputs), RuntimeFailure maps to exit code 3.
"""


class CystsegError(Exception):
    """Base class for all toolkit errors."""


class InputError(CystsegError):
    """A problem with user-supplied inputs (files, shapes, values)."""


class RuntimeFailure(CystsegError):
    """A failure while computing or writing results."""


# -- manifest / image I/O -------------------------------------------------

class MissingFileError(InputError):
    pass


class SchemaError(InputError):
    pass


class ShapeMismatchError(InputError):
    pass


class UnsupportedFormatError(InputError):
    pass


class CorruptImageError(InputError):
    pass


# -- preprocessing ---------------------------------------------------------

class InvalidBandError(InputError):
    pass


class TileTooSmallError(InputError):
    pass


# -- patch extraction ------------------------------------------------------

class FrameTooSmallError(InputError):
    pass


class NotEnoughGradersError(InputError):
    pass


class NoPositivesError(InputError):
    pass


# -- neural net engine -----------------------------------------------------

class ShapeError(InputError):
    pass


class NotForwardedError(CystsegError):
    pass


class DivergedError(RuntimeFailure):
    pass


class VersionMismatchError(InputError):
    pass


class CorruptCheckpointError(InputError):
    pass


# -- inference / evaluation ------------------------------------------------

class MissingSpacingError(InputError):
    pass


class MissingPredictionError(InputError):
    pass


class EmptyGroupError(InputError):
    pass


class IoError(RuntimeFailure):
    pass
