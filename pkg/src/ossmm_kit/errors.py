"""Exception taxonomy for the toolkit.

Two top-level families matter to callers (and to the CLI exit-code
mapping): ValidationError for malformed or contract-violating input,
and MissingInputError for files or directories that simply are not
there. Everything more specific subclasses one of those so library
users can catch broadly or narrowly as they prefer.
"""

from __future__ import annotations


class OssmmError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(OssmmError):
    """Input was present but malformed or violated a documented contract."""


class MissingInputError(OssmmError):
    """A required file, directory, or artifact does not exist."""


# --- ingest ---------------------------------------------------------------

class WrongHeaderError(ValidationError):
    """A CSV header row does not match the fixed column contract."""


class MalformedRowError(ValidationError):
    """A data row could not be parsed into the expected types."""


class NonMonotonicTimestampError(ValidationError):
    """Frame timestamps within one night must be strictly increasing."""


class NonMonotonicLabelError(ValidationError):
    """Label start times within one night must be strictly increasing."""


class DuplicateNightError(ValidationError):
    """The same night id appears more than once in a corpus."""


class UnknownLabelError(ValidationError):
    """A stage label string is not one of the recognized vocabulary."""


class NoOverlapError(ValidationError):
    """Labels and frames for a night share no common time span."""


# --- dsp ------------------------------------------------------------------

class InvalidCutoffError(ValidationError):
    """A filter cutoff is non-positive or at/above the Nyquist frequency."""


class WindowTooLongError(ValidationError):
    """A requested analysis window exceeds the available signal length."""


class BandOutOfRangeError(ValidationError):
    """A requested frequency band extends past the Nyquist frequency."""


# --- features -------------------------------------------------------------

class UnqualifiedEpochError(ValidationError):
    """Feature extraction was asked to run on an epoch that is not qualified."""


# --- ml -------------------------------------------------------------------

class ConfigError(ValidationError):
    """A classifier configuration has an unknown kind or bad parameter."""


class DegenerateClassError(ValidationError):
    """A class has too few samples for the requested resampling."""


class TooFewGroupsError(ValidationError):
    """Grouped cross-validation was asked for more folds than groups."""


class MissingClassError(ValidationError):
    """Training data does not contain every class in the class order."""


class DimensionMismatchError(ValidationError):
    """Feature matrix width does not match what a model was trained on."""


class EmptyInputError(ValidationError):
    """An operation received zero rows or zero samples."""


class BadDistributionError(ValidationError):
    """A probability vector does not sum to one or has negative entries."""


class UnsupportedModelError(ValidationError):
    """A serialized model file declares a kind this build cannot load."""


class EmptyResultsError(ValidationError):
    """Model selection was invoked on an empty result set."""


class LeakageError(OssmmError):
    """A train/validation split shares nights or identical rows.

    Deliberately not a ValidationError: this is an internal invariant
    breach, not a user-input problem, and should never be swallowed.
    """


# --- stream ---------------------------------------------------------------

class OutOfOrderFrameError(ValidationError):
    """A streamed frame arrived with a timestamp earlier than its predecessor."""
