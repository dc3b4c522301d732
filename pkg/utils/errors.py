"""
================================================================================
ERROR TYPES
================================================================================

Purpose: One exception hierarchy for the whole pipeline. Every stage raises a
subclass of HandscoreError so the command line can turn any pipeline failure
into a clean message and a nonzero exit status.

Errors that describe a bad input value also subclass ValueError, so callers
that only catch ValueError keep working.
================================================================================
"""


class HandscoreError(Exception):
    """Base class for all pipeline errors."""


# =============================================================================
# CONFIGURATION AND VOCABULARY
# =============================================================================

class ConfigError(HandscoreError, ValueError):
    """A config value or a referenced path is missing or invalid."""


class VocabularyError(HandscoreError, ValueError):
    """The vocabulary definition file is malformed or has the wrong size."""


class VocabularyMismatchError(HandscoreError):
    """A checkpoint was written against a different vocabulary."""


class UnknownLabelError(HandscoreError, KeyError):
    """A (dataset, label) pair or class name is not in the vocabulary."""

    def __str__(self):
        # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class BadShadowTargetError(HandscoreError, ValueError):
    """A shadow ("bad") class was requested as a generation target."""


class DuplicateShadowError(HandscoreError, ValueError):
    """The shadow class for this base is already registered."""


# =============================================================================
# DATA
# =============================================================================

class UnreadableSourceError(HandscoreError, OSError):
    """A source path or file cannot be read or decoded."""


class EmptyImageError(HandscoreError, ValueError):
    """An image has no pixels or no ink."""


class AugmentationForbiddenError(HandscoreError, ValueError):
    """The class permissions do not allow this augmentation."""


class DegreesOutOfRangeError(HandscoreError, ValueError):
    """Rotation angle outside the allowed +-10 degrees."""


class EmptyDatasetError(HandscoreError, ValueError):
    """No samples to batch."""


class EmptyFocusSetError(HandscoreError, ValueError):
    """A focused batch was requested but no sample matches the focus classes."""


# =============================================================================
# MODELS, LOSSES AND TRAINING
# =============================================================================

class ShapeMismatchError(HandscoreError, ValueError):
    """An image or batch does not have the expected dimensions."""


class ScoreOutOfRangeError(HandscoreError, ValueError):
    """A discriminator score is NaN or infinite."""


class LengthMismatchError(HandscoreError, ValueError):
    """Two distributions have different lengths."""


class NotADistributionError(HandscoreError, ValueError):
    """A vector is negative somewhere or does not sum to 1."""


class BatchTooSmallError(HandscoreError, ValueError):
    """The operation needs at least two samples."""


class BothCyclesZeroError(HandscoreError, ValueError):
    """Standard and focused cycle lengths are both zero."""


class BatchMismatchError(HandscoreError, ValueError):
    """Input and generated batches differ in size."""


class NonFiniteLossError(HandscoreError, ArithmeticError):
    """A loss became NaN or infinite during training."""


# =============================================================================
# ENGRAVING
# =============================================================================

class MalformedDocumentError(HandscoreError, ValueError):
    """The MusicXML text is not well-formed or not a score."""


class UnsupportedStructureError(HandscoreError, ValueError):
    """The score uses structure the engraver does not handle (parts, staves)."""


class PitchOutOfRangeError(HandscoreError, ValueError):
    """A pitch lies beyond three ledger lines above or below the staff."""


class MissingSymbolClassError(HandscoreError, KeyError):
    """The symbol bank has no exemplar for a class the score needs."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class EmptyBankError(HandscoreError, ValueError):
    """The symbol bank holds no images."""


# =============================================================================
# METRICS
# =============================================================================

class DimensionMismatchError(HandscoreError, ValueError):
    """Two feature sets have different feature dimensions."""


class TooFewSamplesError(HandscoreError, ValueError):
    """A feature set is too small for the estimator."""


class ZeroVectorError(HandscoreError, ValueError):
    """A style vector has zero norm and cannot be normalized."""


class EmptyDirectoryError(HandscoreError, ValueError):
    """An image directory is missing or holds no images."""


class ExtractorUnavailableError(HandscoreError, RuntimeError):
    """The requested feature extractor cannot be built."""
