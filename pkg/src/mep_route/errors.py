"""Exception types raised by the solver, oracle and parsers."""


class RouteError(Exception):
    """Base class for all package errors."""


class InstanceError(RouteError, ValueError):
    """An instance violates its structural invariants."""


class NumericalDivergence(RouteError, ArithmeticError):
    """A codevector became NaN/Inf during annealing."""

    def __init__(self, beta, theta, detail=""):
        self.beta = beta
        self.theta = theta
        msg = f"numerical divergence at beta={beta:.6g}, theta={theta:.6g}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DegenerateUpdate(NumericalDivergence):
    """The denominator of a codevector update vanished."""

    def __init__(self, beta, theta, j, hint=""):
        self.j = j
        detail = f"degenerate update for codevector {j + 1}"
        if hint:
            detail += f" ({hint})"
        super().__init__(beta, theta, detail)


class PartitionError(RouteError, ValueError):
    """Unsupported salesman count or partition layout."""


class OracleSizeLimit(RouteError, ValueError):
    """Instance too large for exhaustive enumeration."""


class TsplibError(RouteError, ValueError):
    """Malformed or unsupported TSPLIB input."""
