"""Exception types shared across the package."""


class TextuqError(Exception):
    """Base class for all errors raised by textuq."""


class DimensionMismatch(TextuqError):
    """Operands have incompatible shapes or dimensions."""


class NotSymmetric(TextuqError):
    """Matrix expected to be symmetric is not, within tolerance."""


class NotPositiveDefinite(TextuqError):
    """Cholesky factorization failed even after jitter escalation."""


class EmptyInput(TextuqError):
    """An operation requiring at least one element got none."""


class LengthMismatch(TextuqError):
    """Paired sequences have different lengths."""


class TooFewPoints(TextuqError):
    """Fewer data points available than requested."""


class NonFiniteLoss(TextuqError):
    """Training objective became NaN or infinite.

    Carries the optimizer step index at which the value went bad.
    """

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite objective {value!r} at step {step}")


class BatchTooSmall(TextuqError):
    """Batch-statistics mode requires at least two examples."""


class MalformedHeader(TextuqError):
    """Embedding file header is not 'vocab_size dimension'."""


class MissingSecondaryLabel(TextuqError):
    """Agreement partitioning needs a secondary label on every example."""


class FractionOverflow(TextuqError):
    """Split fractions outside (0, 1) or summing to >= 1."""


class InconsistentSetEmpty(TextuqError):
    """Test views require at least one labeller-disagreement example."""


class InvalidConfig(TextuqError):
    """A configuration value is out of range or inconsistent."""


class MalformedRow(TextuqError):
    """A corpus or feature CSV row does not match the documented schema."""
