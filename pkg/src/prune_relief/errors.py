"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: config/usage problems exit 2,
malformed data or model files exit 3, numeric failures during training exit 4.
"""


class PruneReliefError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PruneReliefError):
    """Invalid run configuration, CLI usage, or out-of-contract argument."""


class DimensionError(PruneReliefError):
    """Tensor shapes that do not conform (kernel larger than padded input,
    batch that does not match the network input shape, and so on)."""


class FormatError(PruneReliefError):
    """Malformed external bytes: IDX files, model manifests, weight blobs."""


class TrainingError(PruneReliefError):
    """Numeric failure while optimizing (non-finite loss)."""


class EmptyPruningSetError(ConfigError):
    """A pruning pass or score measurement was asked to run on zero samples."""


class CapabilityError(PruneReliefError):
    """A requested combination is out of scope for the implementation
    (e.g. network-level output bounds through a convolutional tail)."""
