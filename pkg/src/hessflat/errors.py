"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``hessflat.cli``).
"""


class HessflatError(Exception):
    """Base class for all package errors."""


class SpecError(HessflatError, ValueError):
    """Invalid scenario, budget or operator description."""


class ResolutionError(HessflatError):
    """The grid is too coarse for the requested subcube or cascade depth."""


class StencilError(HessflatError, IndexError):
    """A finite-difference stencil reaches outside the grid."""


class NonMonotoneStencilError(SpecError):
    """Coefficient matrix fails diagonal dominance at some node."""

    def __init__(self, node, margin):
        self.node = tuple(int(i) for i in node)
        self.margin = float(margin)
        super().__init__(
            f"stencil not monotone at node {self.node}: "
            f"min_i (a_ii - sum_j |a_ij|) = {self.margin:.3e} < 0"
        )


class NonConvergenceError(HessflatError):
    """Raised by callers that require a converged solve."""
