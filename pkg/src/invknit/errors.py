"""Exception types shared across the package.

Every error raised by invknit's public API derives from InvknitError so
callers (notably the CLI) can map failures to a nonzero exit without
catching bare Exception.
"""


class InvknitError(Exception):
    """Base class for all invknit errors."""


class MapFormatError(InvknitError):
    """A label-map CSV is malformed or violates map invariants."""


class ColoredLabelError(InvknitError):
    """A colored label name has an invalid slot/count prefix."""


class GridFormatError(InvknitError):
    """A stitch grid is malformed: wrong shape, bad cell values, bad CSV."""


class SpaceMismatchError(InvknitError):
    """Grids/maps/matrices from incompatible label spaces were combined."""


class NormalizationError(InvknitError):
    """A probability field does not sum to one where required."""


class GenerationError(InvknitError):
    """Pattern generation failed (unsupported family/yarn combination...)."""


class ParamError(InvknitError):
    """Degradation parameters are outside their documented ranges."""


class ConfigError(InvknitError):
    """A dataset/model/training config is invalid or inconsistent."""


class ShapeError(InvknitError):
    """A tensor argument has the wrong shape for the requested model."""


class ConfigMismatchError(InvknitError):
    """A checkpoint's stored config does not match what the caller expects."""


class CheckpointFormatError(InvknitError):
    """A checkpoint file is truncated, corrupt, or not an IKNT container."""


class EvalError(InvknitError):
    """Evaluation inputs are unusable (length/space mismatches...)."""
