"""Improvement-of-flatness machinery at a Hessian-degenerate point.

Two ways to build a trace of affine approximations on shrinking cubes
``Q_{theta^k}``:

``cascade``
    The induction made executable.  At step ``k`` the solution is rescaled to
    ``v_k(X) = (u - l_k)(theta^k X) / theta^(k(2+beta))``, replaced on
    ``Q_{1/2}`` by the solution ``h`` of the frozen operator with the same
    boundary values, and the affine part of ``h`` at the origin updates
    ``l_{k+1}(X) = l_k(X) + theta^(k(2+beta)) l_*(X / theta^k)``.
``measure``
    Direct multiscale decay: the least-squares affine fit on each cube.

Either trace is summarized by a log-log fit of the sup-errors against the
radii, ``sup_{Q_r} |u - l| ~ C r^(2 + alpha)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate

from hessflat.errors import ResolutionError, SpecError
from hessflat.grid import (
    AffineFunction,
    Cube,
    GridFunction,
    UniformGrid,
    best_affine_fit,
    gradient_at,
    hessian_at,
    spectral_norm,
    sup_norm,
)
from hessflat.operators import EllipticOperator, freeze
from hessflat.solver import DEFAULT_TOL, DirichletProblem, solve

#: default constant in the affine-increment bound
CASCADE_C = 100.0


@dataclass(frozen=True)
class RegularityBudget:
    Theta: float = 2.0
    alpha_F: float = 1.0
    beta: float = 0.5
    gamma: float = 0.99
    eps_bar: float = 0.1

    def __post_init__(self):
        if not self.Theta > 0:
            raise SpecError(f"Theta must be positive, got {self.Theta}")
        if not 0 < self.beta < self.alpha_F <= 1:
            raise SpecError(f"need 0 < beta < alpha_F <= 1, got beta={self.beta}, alpha_F={self.alpha_F}")
        if not self.beta <= self.gamma < 1:
            raise SpecError(f"need beta <= gamma < 1, got beta={self.beta}, gamma={self.gamma}")
        if not 0 < self.eps_bar < 1:
            raise SpecError(f"eps_bar must lie in (0, 1), got {self.eps_bar}")

    @property
    def predicted_exponent(self) -> float:
        """``min(alpha_F^-, gamma)``, reported as ``min(alpha_F, gamma)``."""
        return min(self.alpha_F, self.gamma)


class ThetaWarning(UserWarning):
    pass


def select_theta_delta(Theta, alpha_F, beta):
    """Scale ``theta`` and closeness ``delta`` of one improvement step.

    ``theta = (1/(2 Theta))^(1/(alpha_F - beta))`` and
    ``delta = (1/2) (1/(2 Theta))^((2+beta)/(alpha_F - beta))``, so that
    ``delta + Theta theta^(2+alpha_F) = theta^(2+beta)``.
    """
    if not beta < alpha_F:
        raise SpecError(f"need beta < alpha_F, got beta={beta}, alpha_F={alpha_F}")
    if not Theta > 0:
        raise SpecError("Theta must be positive")
    base = 1.0 / (2.0 * Theta)
    gap = alpha_F - beta
    theta = base ** (1.0 / gap)
    delta = 0.5 * base ** ((2.0 + beta) / gap)
    if theta >= 1.0:
        warnings.warn(f"Theta = {Theta} <= 1/2 gives theta = {theta} >= 1; override Theta", ThetaWarning)
    return theta, delta


@dataclass(frozen=True)
class FlatnessStep:
    k: int
    radius: float
    ell: AffineFunction
    sup_error: float
    frozen_gap: float | None = None
    hessian_at_center: float | None = None


class ExponentFit(NamedTuple):
    alpha: float
    C: float
    flag: str | None = None


@dataclass
class FlatnessTrace:
    budget: RegularityBudget
    theta: float
    delta: float
    mode: str
    steps: list = field(default_factory=list)
    fitted_exponent: float | None = None
    fitted_constant: float | None = None
    fit_flag: str | None = None
    cascade_ok: bool | None = None
    truncated: bool = False
    requested_depth: int = 0
    normalization: float = 1.0
    noise_floor: float = 10 * DEFAULT_TOL
    point: tuple = ()

    @property
    def radii(self) -> np.ndarray:
        return np.array([s.radius for s in self.steps])

    @property
    def errors(self) -> np.ndarray:
        return np.array([s.sup_error for s in self.steps])

    def rows(self) -> list:
        """One flat record per step (for CSV persistence)."""
        out = []
        for s in self.steps:
            row = {"k": s.k, "radius": s.radius, "a": s.ell.a}
            row.update({f"b{i + 1}": float(v) for i, v in enumerate(s.ell.b)})
            row.update(
                {"sup_error": s.sup_error, "frozen_gap": s.frozen_gap, "hess0": s.hessian_at_center}
            )
            out.append(row)
        return out

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "point": list(self.point),
            "theta": self.theta,
            "delta": self.delta,
            "alpha_hat": self.fitted_exponent,
            "C_hat": self.fitted_constant,
            "fit_flag": self.fit_flag,
            "cascade_ok": self.cascade_ok,
            "truncated": self.truncated,
            "requested_depth": self.requested_depth,
            "depth": len(self.steps),
            "normalization": self.normalization,
            "noise_floor": self.noise_floor,
        }


# ---------------------------------------------------------------------------
# single-step ingredients


class FrozenApproximation(NamedTuple):
    h: GridFunction
    gap: float
    hess0: float


def approximate_frozen_harmonic(u: GridFunction, F: EllipticOperator, sub: Cube | None = None,
                                tol=DEFAULT_TOL) -> FrozenApproximation:
    """Replace ``u`` on ``sub`` by the solution of the frozen equation.

    ``h`` solves ``F(0, D^2 h) = 0`` in ``sub`` with ``h = u`` on its
    boundary.  Nothing forces ``D^2 h(0) = 0``; its spectral norm is returned
    as ``hess0`` so callers can check it is small.
    """
    if sub is None:
        sub = u.grid.cube.scaled(0.5)
    v = u.restrict(sub)
    zero = GridFunction(v.grid, np.zeros(v.grid.shape))
    report = solve(DirichletProblem(freeze(F), zero, v), tol)
    h = report.solution
    gap = sup_norm(v - h)
    hess0 = float(spectral_norm(hessian_at(h)))
    return FrozenApproximation(h, gap, hess0)


def extract_affine(h: GridFunction, center=None) -> AffineFunction:
    """``h(c) + grad h(c) . (X - c)`` at an interior node ``c``."""
    g = h.grid
    node = g.center_index if center is None else g.node_of(center)
    b = gradient_at(h, node)
    c = g.point(node)
    return AffineFunction(h(node) - b @ c, b)


@dataclass(frozen=True)
class RescaledProblem:
    operator: EllipticOperator
    source: Callable
    ell: AffineFunction
    theta: float
    k: int
    beta: float

    @property
    def radius_factor(self) -> float:
        return self.theta**self.k

    @property
    def amplitude(self) -> float:
        return self.theta ** (self.k * (2 + self.beta))

    def normalize(self, u: GridFunction) -> GridFunction:
        """``v_k`` on a grid of the same cube, read off the nodes of ``u``.

        Needs ``theta^k * halfwidth`` to be a whole number of spacings.
        """
        cube = u.grid.cube
        t = self.radius_factor
        inner, sl = u.grid.subgrid(Cube(cube.center, t * cube.halfwidth))
        vals = (u.values[sl] - self.ell(inner.coords())) / self.amplitude
        return GridFunction(UniformGrid(cube, inner.m), vals)


def rescale_problem(F: EllipticOperator, f, ell_k: AffineFunction, theta, k, beta) -> RescaledProblem:
    """Operator ``F_k``, source ``f_k`` and the ``v_k`` recipe at step ``k``.

    ``F_k(X, M) = F(theta^k X, theta^(k beta) M) / theta^(k beta)`` and
    ``f_k(X) = f(theta^k X) / theta^(k beta)``.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if k < 0:
        raise ValueError("k must be nonnegative")
    t = theta**k
    s = theta ** (k * beta)
    Fk = F.rescaled(t, s)
    if f is None:
        fk = _zero_field
    else:
        def fk(X, _f=f):
            return np.asarray(_f(t * np.asarray(X, dtype=float)), dtype=float) / s
    return RescaledProblem(Fk, fk, ell_k, theta, k, beta)


def _zero_field(X):
    return np.zeros(np.shape(X)[:-1])


def update_affine(ell_k: AffineFunction, ell_star: AffineFunction, theta, k, beta) -> AffineFunction:
    """``l_{k+1}(X) = l_k(X) + theta^(k(2+beta)) l_*(X / theta^k)``."""
    return AffineFunction(
        ell_k.a + theta ** (k * (2 + beta)) * ell_star.a,
        ell_k.b + theta ** (k * (1 + beta)) * ell_star.b,
    )


# ---------------------------------------------------------------------------
# traces


def depth_cap(grid: UniformGrid, theta, radius=None) -> int:
    """Largest ``k`` with ``theta^k * radius >= 3 h``."""
    R = grid.cube.halfwidth if radius is None else radius
    h = grid.spacing
    k = 0
    while theta ** (k + 1) * R >= 3 * h * (1 - 1e-9):
        k += 1
    return k


def _measure_trace(u, trace, theta, K, point):
    grid = u.grid
    c = np.asarray(grid.cube.center)
    R = grid.cube.halfwidth - float(np.max(np.abs(np.asarray(point) - c)))
    cap = depth_cap(grid, theta, R)
    if K > cap:
        trace.truncated = True
    for k in range(1, min(K, cap) + 1):
        sub = Cube(point, theta**k * R)
        ell = best_affine_fit(u, sub)
        trace.steps.append(FlatnessStep(k, theta**k * R, ell, sup_norm(u - ell, sub)))


def _cascade_trace(u, F, f, trace, theta, K, tol):
    grid = u.grid
    if any(x != 0.0 for x in grid.cube.center):
        raise ValueError("cascade mode needs the distinguished point at the origin")
    if F is None:
        raise ValueError("cascade mode needs the operator")
    beta = trace.budget.beta
    R = grid.cube.halfwidth
    scale = max(1.0, sup_norm(u))
    trace.normalization = scale
    un = u / scale
    Fn = F.rescaled(1.0, scale)
    fn = None if f is None else (lambda X, _f=f: np.asarray(_f(X)) / scale)
    cap = depth_cap(grid, theta, R)
    if K > cap:
        trace.truncated = True
    ell = AffineFunction.zero(grid.dim)
    for k in range(min(K, cap)):
        rp = rescale_problem(Fn, fn, ell, theta, k, beta)
        v = rp.normalize(un)
        approx = approximate_frozen_harmonic(v, rp.operator, tol=tol)
        ell_star = extract_affine(approx.h)
        ell = update_affine(ell, ell_star, theta, k, beta)
        r_next = theta ** (k + 1) * R
        err = sup_norm(un - ell, Cube(grid.cube.center, r_next))
        trace.steps.append(FlatnessStep(k + 1, r_next, ell, err, approx.gap, approx.hess0))


def iterate_flatness(u: GridFunction, F: EllipticOperator | None = None, f=None,
                     budget: RegularityBudget | None = None, K=5, mode="measure", theta=None,
                     point=None, tol=DEFAULT_TOL, cascade_C=CASCADE_C) -> FlatnessTrace:
    """Build and fit a flatness trace at ``point`` (default: grid center).

    ``theta`` defaults to the scale chosen by :func:`select_theta_delta` for
    the budget.  Requests deeper than the grid allows are truncated and
    flagged instead of failing.
    """
    budget = budget or RegularityBudget()
    theta_sel, delta = select_theta_delta(budget.Theta, budget.alpha_F, budget.beta)
    theta = theta_sel if theta is None else float(theta)
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    point = tuple(u.grid.cube.center) if point is None else tuple(float(x) for x in point)
    trace = FlatnessTrace(budget, theta, delta, mode, requested_depth=K, noise_floor=10 * tol,
                          point=point)
    if mode == "measure":
        _measure_trace(u, trace, theta, K, point)
    elif mode == "cascade":
        if point != tuple(u.grid.cube.center):
            raise ValueError("cascade mode runs at the grid center only")
        _cascade_trace(u, F, f, trace, theta, K, tol)
        trace.cascade_ok = check_cascade_bounds(trace, cascade_C)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    fit = fit_exponent(trace)
    trace.fitted_exponent, trace.fitted_constant, trace.fit_flag = fit
    return trace


def fit_decay(radii, errors, noise_floor=0.0) -> ExponentFit:
    """Least squares of ``log e`` on ``log r``; ``alpha = slope - 2``."""
    radii = np.asarray(radii, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > noise_floor
    if len(errors) and not np.any(keep):
        return ExponentFit(math.inf, 0.0, "exact to tolerance")
    if keep.sum() < 3:
        return ExponentFit(math.nan, math.nan, "too few steps")
    slope, intercept = np.polyfit(np.log(radii[keep]), np.log(errors[keep]), 1)
    return ExponentFit(float(slope - 2.0), float(np.exp(intercept)), None)


def fit_exponent(trace: FlatnessTrace) -> ExponentFit:
    return fit_decay(trace.radii, trace.errors, trace.noise_floor)


def check_cascade_bounds(trace: FlatnessTrace, C=CASCADE_C, theta=None, beta=None) -> bool:
    """``|a_k - a_{k-1}| + theta^k |b_k - b_{k-1}| <= C theta^(k(2+beta))`` for all steps.

    The affine function before the first step is zero.
    """
    theta = trace.theta if theta is None else theta
    beta = trace.budget.beta if beta is None else beta
    if not trace.steps:
        return True
    prev = AffineFunction.zero(len(trace.steps[0].ell.b))
    for s in trace.steps:
        k = s.k
        inc = abs(s.ell.a - prev.a) + theta**k * float(np.linalg.norm(s.ell.b - prev.b))
        if inc > C * theta ** (k * (2 + beta)):
            return False
        prev = s.ell
    return True


# ---------------------------------------------------------------------------
# Dini condition


def dini_integral(omega: Callable, t_min=1e-6):
    """``int_{t_min}^1 omega(t)/t dt`` and whether the full integral converges.

    With ``s = -log t`` the integrand is ``g(s) = omega(e^-s)``.  The verdict
    compares the dyadic blocks ``int_{S}^{2S} g`` for ``S = 128`` and
    ``S = 256``: a log-type modulus ``log(e/t)^-p`` gives the block ratio
    ``2^(1-p)``, so the integral is declared convergent when the ratio is
    below ``0.97`` (``p`` above about 1.04) or the tail is negligible.
    """
    if not 0 < t_min < 1:
        raise ValueError("t_min must lie in (0, 1)")

    def g(s):
        return float(omega(math.exp(-s)))

    def integral(a, b):
        return integrate.quad(g, a, b, limit=200)[0]

    value = integral(0.0, -math.log(t_min))
    b1, b2 = integral(128.0, 256.0), integral(256.0, 512.0)
    if b2 <= 1e-12 * max(abs(value), 1e-300) or b1 <= 0:
        return value, True
    return value, bool(b2 / b1 < 0.97)
