"""Exception types shared across the package."""


class StimputeError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(StimputeError):
    """Operands have incompatible shapes."""


class ContractError(StimputeError):
    """A documented precondition was violated by the caller."""


class ConfigError(StimputeError):
    """Invalid model, training, or generator configuration."""


class DataError(StimputeError):
    """Dataset loading or validation failure; message names the offending array."""


class SplitError(StimputeError):
    """A validation split cannot be constructed from the given mask."""


class LossError(StimputeError):
    """The surrogate loss is undefined (no masked target entries)."""


class MetricError(StimputeError):
    """A metric is undefined for the given inputs."""


class ReconstructionError(StimputeError):
    """Overlap-average reconstruction cannot cover the full grid."""


class TrainingError(StimputeError):
    """Optimization aborted (for example a non-finite gradient)."""


class CheckpointError(StimputeError):
    """Checkpoint file is malformed or does not match the model."""
