"""Exception types shared across the package."""


class MotionGenError(Exception):
    """Base class for all package-specific errors."""


class BadMagicError(MotionGenError, ValueError):
    """File does not start with the expected magic bytes."""


class DimensionMismatchError(MotionGenError, ValueError):
    """A declared dimension disagrees with the data or layout."""


class NonFiniteValueError(MotionGenError, ValueError):
    """Payload contains NaN or Inf."""


class EmptyDatasetError(MotionGenError, ValueError):
    """Operation requires a non-empty dataset."""


class LayoutMismatchError(MotionGenError, ValueError):
    """Samples reference different feature layouts."""


class LayoutMissingFeetError(MotionGenError, ValueError):
    """Layout does not define foot joints / contact slice."""


class ShapeMismatchError(MotionGenError, ValueError):
    """Array arguments have incompatible shapes."""


class ScheduleOutOfRangeError(MotionGenError, ValueError):
    """Timestep lies outside the noise schedule."""


class OddHeadDimError(MotionGenError, ValueError):
    """Rotary embedding requires an even head dimension."""


class LengthExceededError(MotionGenError, ValueError):
    """Sequence is longer than the model's maximum length."""


class NonFiniteActivationError(MotionGenError, FloatingPointError):
    """A forward pass produced NaN or Inf activations."""


class TokenOverflowError(MotionGenError, ValueError):
    """Conditioning record exceeds the maximum token count."""


class EmptyPromptError(MotionGenError, ValueError):
    """Prompt contains no tokens."""


class UnknownPromptError(MotionGenError, KeyError):
    """Prompt is not present in the embedding file."""


class CheckpointMismatchError(MotionGenError, ValueError):
    """Checkpoint contents disagree with the expected config or hashes."""


class TooFewSamplesError(MotionGenError, ValueError):
    """Metric needs more samples than were provided."""


class ZeroVectorError(MotionGenError, ValueError):
    """Cosine similarity is undefined for zero-norm vectors."""
