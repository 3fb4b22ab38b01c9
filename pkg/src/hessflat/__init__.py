"""Measure improvement of flatness at Hessian-degenerate points of elliptic solutions."""

from hessflat.errors import (
    HessflatError,
    NonConvergenceError,
    NonMonotoneStencilError,
    ResolutionError,
    SpecError,
    StencilError,
)
from hessflat.flatness import (
    RegularityBudget,
    check_cascade_bounds,
    dini_integral,
    fit_exponent,
    iterate_flatness,
    select_theta_delta,
)
from hessflat.grid import Cube, GridFunction, UniformGrid, hessian_at, sample
from hessflat.operators import Bellman, Linear, Pucci, beta_F, check_ellipticity
from hessflat.solver import DirichletProblem, solve, solve_pseudo_fb

__all__ = [
    "Bellman",
    "Cube",
    "DirichletProblem",
    "GridFunction",
    "HessflatError",
    "Linear",
    "NonConvergenceError",
    "NonMonotoneStencilError",
    "Pucci",
    "RegularityBudget",
    "ResolutionError",
    "SpecError",
    "StencilError",
    "UniformGrid",
    "beta_F",
    "check_cascade_bounds",
    "check_ellipticity",
    "dini_integral",
    "fit_exponent",
    "hessian_at",
    "iterate_flatness",
    "sample",
    "select_theta_delta",
    "solve",
    "solve_pseudo_fb",
]
