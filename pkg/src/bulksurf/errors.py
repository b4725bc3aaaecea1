"""Exception hierarchy.

Everything derived from :class:`NumericalError` makes the CLI exit with
status 3.
"""


class NumericalError(RuntimeError):
    """A computation failed for numerical or geometric reasons."""


class DegenerateGradientError(NumericalError):
    pass


class ClosestPointError(NumericalError):
    """The projection iteration did not converge."""

    def __init__(self, last_iterate, residual, start=None):
        self.last_iterate = last_iterate
        self.residual = residual
        self.start = start
        super().__init__(
            f"closest-point iteration did not converge: |phi| = {residual:.3e} "
            f"at last iterate {last_iterate}"
        )


class GeometryError(NumericalError):
    """Surface not captured by the mesh, or a point left the active region."""


class SolverError(NumericalError):
    pass
