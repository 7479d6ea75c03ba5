"""Exception hierarchy for noisedeconv."""


class NoiseDeconvError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(NoiseDeconvError, ValueError):
    """Array or matrix shapes disagree with the declared model dimensions."""


class RankDeficiencyError(NoiseDeconvError, ValueError):
    """A measurement matrix lacks full column rank."""

    def __init__(self, step, singular_value, message=None):
        self.step = int(step)
        self.singular_value = float(singular_value)
        if message is None:
            message = (f"measurement matrix at step {self.step} is rank deficient "
                       f"(smallest singular value {self.singular_value:.3e})")
        super().__init__(message)


class IndependenceGapError(NoiseDeconvError, ValueError):
    """Subsampling stride too small for the residues to be uncorrelated."""


class DegenerateBandwidthError(NoiseDeconvError, ValueError):
    """Bandwidth cannot be formed (zero sample variance) or is not SPD."""


class UnsupportedFamilyError(NoiseDeconvError, TypeError):
    """The requested operation is not implemented for this noise family."""


class GridMismatchError(NoiseDeconvError, ValueError):
    """Two gridded objects were combined on different grids."""


class DeconvolutionError(NoiseDeconvError, ArithmeticError):
    """The regularised division could not be carried out."""


class TuningError(NoiseDeconvError):
    """Every candidate in a tuning sweep failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class ConfigError(NoiseDeconvError, ValueError):
    """Invalid experiment configuration."""


class DataError(NoiseDeconvError, ValueError):
    """Malformed input data file."""
