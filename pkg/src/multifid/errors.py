"""Exception hierarchy shared across the toolkit."""


class MultifidError(Exception):
    """Base class for all toolkit errors."""


class NotPositiveDefinite(MultifidError):
    """Matrix could not be factorized even after exhausting the jitter ladder."""


class SingularTriangular(MultifidError):
    """Triangular solve hit a (numerically) zero diagonal."""


class NonPositiveVariance(MultifidError):
    """A Gaussian density was requested with variance <= 0."""


class NegativeVariance(MultifidError):
    """A kernel was given a negative variance."""


class NonFiniteGradient(MultifidError):
    """An optimizer step received NaN or Inf gradients."""


class DimensionMismatch(MultifidError):
    """Array shapes are inconsistent with the declared dimensions."""


class DegenerateData(MultifidError):
    """Too few observations to fit a model."""


class MappingUnavailable(MultifidError):
    """A per-point nominal mapping was queried outside its table."""


class MissingNominalValues(MultifidError):
    """Model assembly requires nominal mapped values that were not supplied."""


class NonFiniteElbo(MultifidError):
    """Training objective became NaN/Inf; carries the iteration index."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class OutOfBounds(MultifidError):
    """Evaluation point lies outside the problem's declared bounds."""


class DatasetBacked(MultifidError):
    """No closed form exists for this fidelity; data must come from a CSV."""


class SchemaMismatch(MultifidError):
    """A CSV file does not match its declared schema."""


class NonFiniteValue(MultifidError):
    """A data file contains NaN or Inf."""


class MissingNominalRow(MultifidError):
    """Nominal-value table does not cover a required high-fidelity row."""


class LengthMismatch(MultifidError):
    """Paired vectors have different lengths."""


class ZeroVariance(MultifidError):
    """Output scaling requires non-constant high-fidelity outputs."""


class ConfigError(MultifidError):
    """Experiment configuration failed validation."""
