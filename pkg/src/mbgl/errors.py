"""Exception hierarchy and warning categories.

Three error families map onto the CLI exit-code contract: I/O problems
(exit 1), input validation (exit 2), and numerical failures (exit 3).
"""


class MbglError(Exception):
    """Base class for all library errors."""


class ValidationError(MbglError):
    """Inputs violate a shape, domain, or invariant requirement."""


class NumericalError(MbglError):
    """A computation failed for numerical reasons."""


class FileFormatError(MbglError):
    """A container file is malformed (bad magic, version, or dimensions)."""


class CorruptMatrixFile(FileFormatError):
    """Payload checksum does not match; file refused."""


# -- validation ------------------------------------------------------------

class ZeroVarianceSeries(ValidationError):
    """A pixel/variable series is constant across realizations."""


class TooFewRealizations(ValidationError):
    """At least two realizations are required."""


class RankDeficient(ValidationError):
    """Requested more basis functions than the data supports."""


class NotOrthonormal(ValidationError):
    """Basis columns fail the orthonormality check."""


class DimensionMismatch(ValidationError):
    """Array dimensions of the inputs do not agree."""


class IndexOutOfRange(ValidationError):
    """A variable, level, or location index is out of bounds."""


class TooLargeForOracle(ValidationError):
    """Instance exceeds the size guard of the dense reference path."""


class FoldTooSmall(ValidationError):
    """Cross-validation folds cannot be formed from the realizations."""


class DegenerateData(ValidationError):
    """Data carry no usable variation for the requested estimate."""


# -- numerics --------------------------------------------------------------

class NotPositiveDefinite(NumericalError):
    """A matrix required to be positive definite is not."""


class UnboundedProblem(NumericalError):
    """The optimization problem has no finite minimizer."""


class SingularLinearization(NumericalError):
    """A linearization block is (effectively) singular; the unpenalized
    maximum likelihood estimate does not exist for these data."""


class InnerSolverFailure(NumericalError):
    """An inner solve failed; carries the outer iteration index."""


class NonmonotoneObjective(NumericalError):
    """Internal assertion: the outer objective increased.  Signals a bug."""


class OptimizerDiverged(NumericalError):
    """A derivative-free search returned a non-finite optimum."""


class ZeroVarianceLocation(NumericalError):
    """A correlation is requested at a location with zero marginal variance."""


# -- warnings --------------------------------------------------------------

class MaxIterationsExceeded(UserWarning):
    """Iteration budget exhausted; the best iterate so far is returned."""


class BoundaryHit(UserWarning):
    """An estimate landed on the boundary of its feasible region."""
