"""Exception types raised across the package."""


class InterfSurvError(Exception):
    """Base class for package errors."""


class SchemaError(InterfSurvError):
    """Input data do not match the expected schema."""


class EmptyClusterError(InterfSurvError):
    """A cluster with no units was supplied."""


class FoldTooSmall(InterfSurvError):
    """Cross-fitting asked for fewer than two clusters per fold."""


class FoldViolation(InterfSurvError):
    """A nuisance bundle was asked to score a cluster it was trained on."""


class UnsupportedPolicy(InterfSurvError):
    """Policy parameters are outside the supported range."""


class DegenerateTail(InterfSurvError):
    """The estimated threshold probability of a TPB policy is too small."""


class InferenceInputError(InterfSurvError):
    """Inference was requested on a table with no usable rows."""


class UnsupportedMode(InterfSurvError):
    """An evaluation mode cannot be applied to the given cluster."""


class MissingColumn(SchemaError):
    """A required column is absent from the input header."""


class NonBinaryField(SchemaError):
    """An indicator column holds a value other than 0 or 1."""


class NegativeTime(SchemaError):
    """An observed time is negative or not finite."""


class RaggedCluster(SchemaError):
    """Covariate rows have inconsistent lengths."""


class EmptyDataset(InterfSurvError):
    """The dataset has no clusters."""


class TooFewClusters(InterfSurvError):
    """Fewer clusters than folds."""


class LengthMismatch(InterfSurvError):
    """An allocation or array does not match the cluster size."""


class ClusterTooLargeForExactSum(UnsupportedMode):
    """Exact enumeration requested for a cluster above the size gate."""


class UnsupportedTransform(InterfSurvError):
    """The outcome transform is not available for this computation."""


class UnsupportedWorld(InterfSurvError):
    """A brute-force world exceeds the enumeration limits."""


class ZeroVariance(InferenceInputError):
    """A grid point has zero estimated standard deviation."""


class SeparationDetected(InterfSurvError):
    """Training treatments are all equal; raised only when fallback is disabled."""


class SeparationWarning(UserWarning):
    """Training treatments are all equal; the propensity model is a constant rate."""


class NoEventsWarning(UserWarning):
    """No target events in the training data; the fitted hazard is zero."""
