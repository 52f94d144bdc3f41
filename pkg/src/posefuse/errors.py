"""Exception types raised by the posefuse library.

Everything inherits from PoseFuseError so callers (and the CLI) can catch
library failures uniformly without swallowing unrelated bugs.
"""


class PoseFuseError(Exception):
    """Base class for all posefuse errors."""


class DegenerateRay(PoseFuseError):
    """View ray is (numerically) parallel to the image Y axis or zero-length."""


class InvalidScale(PoseFuseError):
    """Non-positive image scale passed to depth rescaling."""


class InvalidRange(PoseFuseError):
    """Malformed grid range (empty interval or non-positive bin count)."""


class EmptyCode(PoseFuseError):
    """A bin & delta code has no usable confidence entry in some subspace."""


class TableMismatch(PoseFuseError):
    """Distance table does not match the rotation bins or model it is used with."""


class EmptyInput(PoseFuseError):
    """An operation that needs at least one sample received none."""


class EmptyHypothesisSet(PoseFuseError):
    """Voting was asked to run on zero hypotheses."""


class InvalidShape(PoseFuseError):
    """Bad synthetic-shape parameters (or a generated model failed its symmetry check)."""


class FileFormatError(PoseFuseError):
    """A file failed to parse or validate; the message names the field/line."""
