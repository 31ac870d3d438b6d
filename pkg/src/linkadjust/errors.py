"""Exception and warning types raised by linkadjust."""


class LinkAdjustError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(LinkAdjustError, ValueError):
    """Arguments have the wrong shape, contain non-finite values, etc."""


class DegenerateDataError(LinkAdjustError):
    """The data cannot support the requested estimate (e.g. zero variance)."""


class DegenerateDensityError(LinkAdjustError):
    """Every mixture component has zero density at some observation."""

    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"all mixture components vanish at observation {self.index}")


class SingularDesignError(LinkAdjustError):
    """A (weighted) design matrix is rank deficient."""


class SingularInformationError(LinkAdjustError):
    """The Hessian used for sandwich inference cannot be inverted."""

    def __init__(self, condition_number, message=None):
        self.condition_number = float(condition_number)
        super().__init__(
            message or f"Hessian is numerically singular (condition number {self.condition_number:.3g})"
        )


class NoMismatchMassError(LinkAdjustError):
    """All links are certain matches, so f(y | m=1) is unidentified."""


class LinkageWarning(UserWarning):
    """Non-fatal numerical issue (separation, optimizer failure, PSD repair)."""
