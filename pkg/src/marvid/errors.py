"""Exception taxonomy for the whole package.

Every error raised on purpose derives from MarvidError so callers can catch
the package's failures without catching programming mistakes.
"""


class MarvidError(Exception):
    """Base class for all deliberate failures."""


class InvalidShape(MarvidError):
    """Tensor creation asked for an empty shape or a zero-sized dimension."""


class ShapeError(MarvidError):
    """Operands of an op do not have compatible shapes."""


class ContractError(MarvidError):
    """An API precondition was violated (wrong rank, scalar expected, T too small)."""


class PlanError(MarvidError):
    """A mask plan does not fit the clip geometry it is applied to."""


class RangeError(MarvidError):
    """An index argument is outside its documented range."""


class ConfigError(MarvidError):
    """A config file or override has an unknown key or an invalid value."""


class CheckpointError(MarvidError):
    """A checkpoint file is corrupt, mismatched, or structurally wrong."""


class FormatError(MarvidError):
    """A dataset file is truncated, corrupt, or not a dataset file at all."""


class DataError(MarvidError):
    """A dataset is unusable for the requested task (no labels, too few clips)."""


class SpecError(MarvidError):
    """A clip specification cannot be rendered (sprite larger than the frame)."""


class NumericError(MarvidError):
    """A non-finite value appeared where training must abort."""
