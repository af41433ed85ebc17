"""Exception hierarchy shared by all pfnlab modules."""


class PFNLabError(Exception):
    """Base class for every error raised by pfnlab."""


class ShapeError(PFNLabError, ValueError):
    """Operand dimensions do not agree."""


class DegenerateMaskError(PFNLabError, ValueError):
    """A softmax slice has every position masked out."""


class LabelError(PFNLabError, ValueError):
    """A class index falls outside the active class range."""


class ContractError(PFNLabError, ValueError):
    """A documented precondition of an operation was violated."""


class TaskDegenerateError(PFNLabError, RuntimeError):
    """The synthetic prior could not produce a usable task."""


class SplitError(PFNLabError, ValueError):
    """A requested partition of rows is too small or malformed."""


class CapacityError(PFNLabError, ValueError):
    """Input width exceeds what the model was built for."""


class ProtocolError(PFNLabError, ValueError):
    """A training protocol is inconsistent with the data it is applied to."""


class DivergenceError(PFNLabError, RuntimeError):
    """Training produced a non-finite loss."""


class SweepError(PFNLabError, RuntimeError):
    """Every run of a learning-rate sweep failed."""


class BaselineError(PFNLabError, RuntimeError):
    """The MLP baseline diverged for every learning rate."""


class LoadError(PFNLabError, ValueError):
    """A dataset file could not be parsed."""


class ConfigError(PFNLabError, ValueError):
    """An experiment configuration is missing keys or has invalid values."""


class CheckpointError(PFNLabError, ValueError):
    """A checkpoint file is malformed."""
