"""Exception hierarchy shared across the package.

Input/validation problems raise subclasses of :class:`InputError` (the CLI
maps these to exit code 2); everything else is an internal error.
"""


class FetwfeError(Exception):
    """Base class for all package errors."""


class InputError(FetwfeError):
    """User input is malformed or violates a precondition."""


# panel ----------------------------------------------------------------------

class MissingCell(InputError):
    """A unit is not observed at every time (unbalanced panel)."""


class CohortAtTimeOne(InputError):
    """A unit reports first treatment at the earliest observed time."""


class NoNeverTreated(InputError):
    """No unit has treatment status 0."""


class InconsistentTreatmentTime(InputError):
    """A unit's first-treatment time differs across its rows."""


class ZeroVarianceCovariate(InputError):
    """A covariate column is constant and collinear with centering."""


class ParseError(InputError):
    """A record could not be parsed; message carries row/column context."""


# design ---------------------------------------------------------------------

class CohortOutOfRange(InputError):
    """Cohort start times must be distinct, sorted, and within {2..T}."""


class RankPrecondition(InputError):
    """A hard rank precondition failed (p > NT)."""


# gls ------------------------------------------------------------------------

class NonPositiveSigma(InputError):
    """Noise variance must be strictly positive."""


class DegenerateResiduals(FetwfeError):
    """Residual decomposition yielded sigma^2 = 0; supply components."""


# solver ---------------------------------------------------------------------

class NotConverged(FetwfeError):
    """Coordinate descent hit the iteration cap (best iterate returned)."""


class RankDeficientAtZeroLambda(FetwfeError):
    """Unpenalized fit requires a full-column-rank design."""


class ZeroResponse(InputError):
    """All column/response inner products are zero; no usable lambda grid."""


# effects --------------------------------------------------------------------

class LayoutMismatch(FetwfeError):
    """Fit and layout come from different configurations."""


class UnknownKey(InputError):
    """A weight refers to a (cohort, time) pair outside the fit."""


class NoTreatedUnits(InputError):
    """Cohort-share weights need at least one treated unit."""


class CohortTimeOutOfRange(InputError):
    """Requested (cohort, time) is not a valid treated cell."""


# inference ------------------------------------------------------------------

class EmptySelection(FetwfeError):
    """No coefficients selected; the covariance of nothing is undefined."""


class SingularCovariance(FetwfeError):
    """Selected-column covariance is not positive definite."""


# simulate -------------------------------------------------------------------

class RedrawLimitExceeded(FetwfeError):
    """Assignment redraws exhausted without filling every cohort."""


class ConfigError(InputError):
    """Simulation or CLI configuration is invalid."""
