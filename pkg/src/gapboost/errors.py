"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class GapboostError(Exception):
    """Base class for all package errors."""


class ConfigError(GapboostError):
    """Invalid configuration: bad parameter combination, metric/loss mismatch."""


class ParameterError(ConfigError):
    """Invalid generator parameters (e.g. non-positive-definite covariance)."""


class DataError(GapboostError):
    """The supplied data violates a precondition of an operation."""


class ParseError(DataError):
    """Malformed input file (wrong arity, unparseable cell)."""


class SchemaError(DataError):
    """Column missing from, or inconsistent with, the declared schema."""


class ImputationError(DataError):
    """Imputation impossible (e.g. every value missing)."""


class DomainError(DataError):
    """Value outside the mathematical domain of a transform."""


class QuantileError(DataError):
    """Too few observations to compute the requested quantiles."""


class SplitError(DataError):
    """Dataset cannot be partitioned as requested."""


class AlignmentError(DataError):
    """Vectors that must be aligned have different lengths."""


class DegenerateTargetError(DataError):
    """A binary target contains a single class."""


class LossError(DataError):
    """Outcome values incompatible with the chosen loss."""


class MetricError(DataError):
    """Metric undefined on the supplied inputs."""


class ReportError(DataError):
    """Aggregate report undefined (e.g. zero total tax base)."""


class NumericalError(GapboostError):
    """An estimation routine failed numerically."""


class FitError(NumericalError):
    """Model fitting impossible (empty data, zero total weight, ...)."""


class SeparationError(NumericalError):
    """Probit likelihood unbounded: classes perfectly separated."""


class CollinearityError(NumericalError):
    """Design matrix is rank deficient."""


class IdentificationError(NumericalError):
    """Second-stage regressors (including the Mills column) are collinear."""


class TheoremPreconditionError(NumericalError):
    """Bias-correction check invoked where true selection probability is 0."""


class ReplicateError(NumericalError):
    """A bootstrap replicate failed; the message names the replicate index."""
