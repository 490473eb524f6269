"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all asymforge errors."""


class MalformedHeader(PipelineError):
    """A volume file header could not be parsed or is unsupported."""


class DimensionMismatch(PipelineError):
    """Two volumes that must share dims do not."""


class LabelOutOfVocabulary(PipelineError):
    """A label volume contains a value outside {0, 1, 2, 4}."""


class InvalidLabel(PipelineError):
    """A scalar label is outside {0, 1, 2, 4}."""


class DegenerateIntensity(PipelineError):
    """Masked intensities have zero spread; z-scoring is undefined."""


class SourceTooSmall(PipelineError):
    """A source volume is smaller than the requested crop."""


class EmptyBrainMask(PipelineError):
    """No foreground voxels; calibration has nothing to align."""


class InsufficientSamples(PipelineError):
    """Fewer sample ids than the requested split sizes."""


class TooFewSamples(PipelineError):
    """Pair sampling needs at least two distinct ids."""


class TooFewModalities(PipelineError):
    """Modality dropout needs at least two available modalities."""


class NonFiniteLoss(PipelineError):
    """Training produced NaN or Inf; aborted with diagnostics."""


class EmptySplit(PipelineError):
    """Evaluation was asked to run on an empty sample list."""


class MissingCombination(PipelineError):
    """A Dice report is missing one of the 15 modality combinations."""


class ConfigError(PipelineError):
    """Unknown or conflicting configuration keys."""
