"""Typed errors raised across the pipeline.

Every failure mode that callers are expected to branch on gets its own class
so tests and the CLI can report precise reason codes. All of them derive from
PipelineError; anything else escaping the package is a bug.
"""


class PipelineError(Exception):
    """Base class for all domain errors raised by this package."""


# --- C3D parsing / writing -------------------------------------------------

class MagicMismatch(PipelineError):
    """File does not start with a valid C3D header signature."""


class UnsupportedProcessor(PipelineError):
    """Parameter prologue declares a non-Intel byte order."""


class TruncatedFile(PipelineError):
    """File ends before a declared section does."""


class MalformedParameter(PipelineError):
    """Parameter record is inconsistent or runs past its section."""


class UnrepresentableValue(PipelineError):
    """Value cannot be stored in the target encoding (non-finite, overflow)."""


class MissingMarker(PipelineError):
    """A required marker label is absent from the point labels."""


class GappedTrajectory(PipelineError):
    """A marker trajectory has invalid or non-finite samples."""


class MissingPlate(PipelineError):
    """Requested force plate is not present in the file."""


class ChannelCountMismatch(PipelineError):
    """Force plate does not map exactly six analog channels."""


# --- Event detection --------------------------------------------------------

class NoEvent(PipelineError):
    """No sample satisfies the event rule."""


class DegenerateStance(PipelineError):
    """Stance interval too short to classify."""


class AmbiguousStance(PipelineError):
    """Zero or both feet are over the plate at contact."""


# --- Trial preparation -------------------------------------------------------

class InsufficientLeadIn(PipelineError):
    """Not enough recorded frames before (or after) the stance window."""


class WindowOutOfRange(PipelineError):
    """Requested resampling window leaves the recorded series."""


class EmptyDataset(PipelineError):
    """No rows survive selection and hygiene."""


class TooFewSamples(PipelineError):
    """Operation needs more rows than the dataset has."""


# --- Image codec --------------------------------------------------------------

class DegenerateAxis(PipelineError):
    """An axis has zero spread on the fitting split."""


# --- PCA / network -------------------------------------------------------------

class ShapeMismatch(PipelineError):
    """Array shape does not match the declared contract."""


class IncompatibleArchitecture(PipelineError):
    """Layer chain does not produce valid shapes, or donor does not match."""


class DivergenceDetected(PipelineError):
    """Training loss became non-finite.

    Carries the last finite model state and the loss history collected so
    far, so callers can save partial work.
    """

    def __init__(self, message, model=None, loss_history=None):
        super().__init__(message)
        self.model = model
        self.loss_history = list(loss_history) if loss_history else []


class CorruptFile(PipelineError):
    """Serialized bundle fails magic, length, or shape validation."""


# --- Metrics / comparison --------------------------------------------------------

class DegenerateSeries(PipelineError):
    """A series is constant where variation is required."""


class DegenerateRange(PipelineError):
    """Truth and prediction both have zero range."""


class EmptySample(PipelineError):
    """A statistical sample is empty."""


class FoldMismatch(PipelineError):
    """Two artifacts were produced from different dataset folds."""
