"""Exception and warning types shared across the toolkit.

Every error raised by the library derives from ResidualIdError so callers
can catch the whole family in one clause.
"""


class ResidualIdError(Exception):
    """Base class for all library errors."""


# audio-io
class MalformedHeader(ResidualIdError):
    """File is not a parseable RIFF/WAVE container."""


class UnsupportedFormat(ResidualIdError):
    """WAV file exists but is not 16-bit signed PCM mono."""


class EmptyAudio(ResidualIdError):
    """WAV file contains zero samples."""


class IoFailure(ResidualIdError):
    """Underlying OS-level read/write failed."""


class ClipTooShort(ResidualIdError):
    """Signal shorter than a single analysis frame."""


# lp
class LagTooLarge(ResidualIdError):
    """Requested autocorrelation lag is not shorter than the frame."""


class ZeroEnergy(ResidualIdError):
    """Autocorrelation at lag 0 is not positive."""


class NumericalBreakdown(ResidualIdError):
    """Reflection coefficient left the unit disc; input is ill-conditioned."""


class MemoryLengthMismatch(ResidualIdError):
    """Filter memory length does not equal the predictor order."""


# features
class NegativeFrequency(ResidualIdError):
    """Mel mapping evaluated at a negative frequency."""


class InvalidBand(ResidualIdError):
    """Filterbank band edges are inconsistent with the sample rate."""


class FrameLongerThanFft(ResidualIdError):
    """Frame has more samples than the FFT size."""


class AllFramesRejected(ResidualIdError):
    """Clip is effectively silent; no frame survived selection."""


# gmm / hmm
class DimensionMismatch(ResidualIdError):
    """Observation dimension differs from the model dimension."""


class TooFewFrames(ResidualIdError):
    """Fewer observations than mixture components."""


class EmptyFeatures(ResidualIdError):
    """Feature matrix has no rows."""


class IndivisibleComponents(ResidualIdError):
    """Total mixture count does not divide evenly across states."""


class ImpossibleObservation(ResidualIdError):
    """Forward recursion underflowed to exact zero; model is corrupt."""


# recog
class EmptyModelSet(ResidualIdError):
    """Identification requested against zero enrolled models."""


class ClipShorterThanRequested(ResidualIdError):
    """Test clip is shorter than the requested test duration."""


class FingerprintMismatch(ResidualIdError):
    """Stored model was built under a different feature configuration."""


class InsufficientTrainingData(ResidualIdError):
    """Not enough extracted frames to train the requested model."""


class UnknownFormatVersion(ResidualIdError):
    """Model file header does not announce a supported version."""


class CorruptModel(ResidualIdError):
    """Model file failed an invariant check on load."""


# synth-corpus
class ProfileSpaceExhausted(ResidualIdError):
    """Could not place a new speaker profile after the resample budget."""


# cli
class ConfigParseError(ResidualIdError):
    """Configuration file or override could not be parsed/validated."""

    def __init__(self, message, line=None, field=None):
        detail = message
        if field is not None:
            detail = f"{field}: {detail}"
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)
        self.line = line
        self.field = field


# warnings: conditions that are flagged but do not abort
class DegenerateData(UserWarning):
    """All training rows identical while fitting more than one component."""


class DegenerateState(UserWarning):
    """An HMM state received almost no occupancy and was frozen."""
