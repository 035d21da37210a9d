"""Exception types shared across the package.

Everything raised on purpose derives from LemuqError so callers can catch
one base class at the CLI boundary.
"""


class LemuqError(Exception):
    """Base class for all package-specific errors."""


# --- network construction ---

class CycleDetected(LemuqError):
    """The branch set contains a loop; only radial topologies are supported."""


class Disconnected(LemuqError):
    """At least one bus is unreachable from the slack bus."""


class SingularIncidence(LemuqError):
    """The reduced incidence matrix is not invertible."""


class DimensionMismatch(LemuqError):
    """An injection vector does not match the number of non-slack buses."""


# --- polynomial chaos ---

class UnsupportedDistribution(LemuqError):
    """Germ component distribution outside the supported families."""


class OutOfSupport(LemuqError):
    """Evaluation point lies outside a germ component's support."""


class IndexOutOfRange(LemuqError):
    """Germ component index does not exist in the germ specification."""


class InvalidRisk(LemuqError):
    """Risk level outside the accepted interval."""


# --- optimal power flow ---

class InconsistentDimensions(LemuqError):
    """Problem inputs disagree on horizon length, bus count or basis size."""


class Infeasible(LemuqError):
    """A single timestep's conic program is infeasible.

    Carries the offending timestep so the caller can report which hour
    of the horizon broke.
    """

    def __init__(self, t: int, message: str = ""):
        self.t = t
        super().__init__(message or f"optimization infeasible at timestep {t}")


class SolverFailure(LemuqError):
    """The conic solver terminated abnormally (numerical trouble, not infeasibility)."""


class MissingDuals(LemuqError):
    """Dual variables were requested but the solution does not carry them."""


# --- agents ---

class InfeasibleBoundary(LemuqError):
    """Storage boundary condition cannot be met within one period's power limit."""


class PathMismatch(LemuqError):
    """Agent runs being compared do not share path ids or horizon length."""


# --- load flow ---

class NotConverged(LemuqError):
    """Backward-forward sweep failed to reach the mismatch tolerance.

    Carries the final mismatch achieved.
    """

    def __init__(self, mismatch: float, message: str = ""):
        self.mismatch = mismatch
        super().__init__(message or f"load flow not converged, mismatch {mismatch:.3e}")


# --- scenario handling ---

class ParseError(LemuqError):
    """Scenario file is not syntactically valid."""


class ValidationError(LemuqError):
    """Scenario file parsed but the contents are inconsistent."""
