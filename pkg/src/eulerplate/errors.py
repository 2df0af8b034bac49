"""Exception types raised by the solver components."""


class EulerPlateError(Exception):
    """Base class for all solver errors; unless overridden they count as solver failures."""

    exit_code = 4


class OverflowGuard(EulerPlateError):
    """A per-mode evaluation would leave the float range."""


class DegenerateJacobian(EulerPlateError):
    """The vertical Jacobian of the map is not positive."""

    exit_code = 3


class MeanViolation(EulerPlateError):
    """Plate forcing or velocity has a mean above tolerance."""


class NonConvergence(EulerPlateError):
    """An iterative solve hit its iteration cap."""

    exit_code = 4


class CompatibilityViolation(EulerPlateError):
    """Neumann data fails the solvability condition."""

    exit_code = 4


class BoundaryInflow(EulerPlateError):
    """The boundary is not characteristic for vorticity transport."""


class KernelUnderdetermined(EulerPlateError):
    """Div-curl reconstruction was called without mean-flow data."""


class GeometryAbort(EulerPlateError):
    """The geometry monitor tripped during a run."""

    exit_code = 3


class NoContraction(EulerPlateError):
    """The window iteration failed to contract."""

    exit_code = 4


class ValidationFailure(EulerPlateError):
    """Initial data fails the compatibility conditions."""

    exit_code = 2

    def __init__(self, report):
        self.report = report
        super().__init__("initial data failed: " + ", ".join(report.failures()))
