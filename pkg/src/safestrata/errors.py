"""Exception and warning types raised across the package."""


class BoundaryLikelihoodZero(ValueError):
    """A boundary parameter gives the observed counts probability zero."""


class InfiniteDivergence(ValueError):
    """The second argument of a KL divergence has a zero where the first has mass."""


class NumericUnderflow(ArithmeticError):
    """A posterior integrand is zero everywhere at working precision."""


class MisalignedHistories(ValueError):
    """Per-stratum (or per-mode) histories are not on the same block clock."""


class InfeasibleConstraint(ValueError):
    """No effect vector in [-1, 1]^K satisfies the weighted-mean constraint."""


class MalformedEvent(ValueError):
    """An outcome event has out-of-range fields."""


class EmptyConfidenceSet(UserWarning):
    """Every grid value has been rejected; the confidence set is empty.

    This happens under model misspecification.  It is emitted as a warning and
    the affected intervals carry ``empty=True`` rather than being hidden.
    """
