"""Exception types raised across the package."""


class RosGuardError(Exception):
    """Base class for all errors raised by this package."""


class RankDeficient(RosGuardError):
    pass


class DimMismatch(RosGuardError, ValueError):
    pass


class Unbounded(RosGuardError):
    """A support function or diameter is infinite for the requested set."""


class InfeasibleSet(RosGuardError):
    """A polyhedral uncertainty set is empty."""


class InfeasibleDual(RosGuardError):
    """A dual certificate violates p >= 0 or D^T p = mu."""


class TooLarge(RosGuardError):
    pass


class Diverged(RosGuardError):
    """The first-order solver's loss blew past the divergence guard."""


class AlreadyFired(RosGuardError):
    pass


class RankRetryExhausted(RosGuardError):
    pass


class SolverFailure(RosGuardError):
    """The conic backend returned a status we cannot interpret as a bound."""
