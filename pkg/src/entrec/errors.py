"""Exception types shared across the package."""


class EntrecError(Exception):
    """Base class for all errors raised by this package."""


class EmptyQueryError(EntrecError):
    """Query text produced no tokens."""


class EmptyCorpusError(EntrecError):
    """Vocabulary construction received no usable records."""


class EmptySequenceError(EntrecError):
    """Sequence encoder received an empty token sequence."""


class DimensionMismatchError(EntrecError):
    """Tensor shapes are inconsistent."""


class NonFiniteLossError(EntrecError):
    """A loss evaluation produced NaN or infinity."""


class StaleActivationCacheError(EntrecError):
    """backward() was called with activations from an older parameter version."""


class VocabTooSmallError(EntrecError):
    """Negative sampling needs at least two entities."""


class TargetInNegativesError(EntrecError):
    """The target id appeared among the sampled negatives."""


class ZeroNormEntityError(EntrecError):
    """Entity embedding rows with zero norm cannot be indexed."""

    def __init__(self, names):
        self.names = list(names)
        super().__init__(f"zero-norm embedding rows for entities: {self.names}")


class IndexNotClusteredError(EntrecError):
    """Approximate search requires an index built with clustering."""


class UnknownEntityError(EntrecError):
    """Entity name is not present in the index."""


class DuplicateRulePatternError(EntrecError):
    """Two tag rules share the same query pattern."""


class MethodIndexMismatchError(EntrecError):
    """Checkpoint and index do not belong together."""


class MZeroError(EntrecError):
    """Precision@M is undefined for M < 1."""


class ConfigError(EntrecError):
    """Invalid or unknown configuration."""


class InputMissingError(EntrecError):
    """A referenced input file does not exist."""


class FormatError(EntrecError):
    """A persisted artifact has an unreadable or unsupported layout."""
