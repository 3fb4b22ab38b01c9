"""Dirichlet solvers producing monotone finite-difference solutions.

The discrete operator for ``trace(A(X) D^2 u)`` uses second differences on
the axes and, for each mixed pair ``(i, j)``, the diagonal direction whose
sign matches ``a_ij`` (Motzkin-Wasow type stencil).  It is exact on
quadratics, has nonnegative off-center weights whenever
``a_ii >= sum_{j != i} |a_ij|``, and therefore obeys a discrete comparison
principle.  That is 9 points in 2D and 19 in 3D.

Linear systems are factorized with SuperLU and polished by iterative
refinement, where residuals are computed in the difference form
``sum_o w_o (u[p+o] - u[p])`` to keep cancellation error near ``eps / h``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from hessflat.errors import NonMonotoneStencilError
from hessflat.grid import GridFunction, UniformGrid, hessian_field
from hessflat.operators import Bellman, CoefficientField, EllipticOperator, Linear, Pucci

DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class DirichletProblem:
    operator: EllipticOperator
    source: GridFunction
    boundary: Callable | GridFunction

    @property
    def grid(self) -> UniformGrid:
        return self.source.grid

    def __post_init__(self):
        if isinstance(self.boundary, GridFunction) and self.boundary.grid != self.source.grid:
            raise ValueError("boundary data and source live on different grids")
        if self.operator.dim != self.source.grid.dim:
            raise ValueError("operator and grid dimensions differ")

    def boundary_values(self) -> np.ndarray:
        """Full-grid array holding ``g`` on boundary nodes and 0 inside."""
        return boundary_values(self.boundary, self.grid)


def boundary_values(g, grid: UniformGrid) -> np.ndarray:
    mask = grid.boundary_mask()
    out = np.zeros(grid.shape)
    if isinstance(g, GridFunction):
        out[mask] = g.values[mask]
    else:
        out[mask] = np.asarray(g(grid.coords()[mask]), dtype=float)
    if not np.all(np.isfinite(out)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(out))[0])
        raise ValueError(f"boundary data not finite at node {bad}")
    return out


@dataclass
class SolveReport:
    solution: GridFunction
    iterations: int
    residual: float
    converged: bool
    tol: float
    method: str = "direct"
    free_boundary: np.ndarray | None = field(default=None, repr=False)
    policy: np.ndarray | None = field(default=None, repr=False)

    def summary(self) -> dict:
        out = {
            "method": self.method,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "tol": self.tol,
        }
        if self.free_boundary is not None:
            out["free_boundary_nodes"] = int(len(self.free_boundary))
        return out


# ---------------------------------------------------------------------------
# stencil


class Stencil:
    """Monotone discretization of ``trace(A D^2 u)`` at the interior nodes."""

    def __init__(self, field: CoefficientField, grid: UniformGrid, check=True):
        self.grid = grid
        d, h = grid.dim, grid.spacing
        interior = grid.interior_mask()
        self.interior = np.flatnonzero(interior.ravel())
        A = np.asarray(field(grid.coords()[interior]))
        if check:
            _check_dominance(A, grid, interior)
        strides = np.array([grid.m ** (d - 1 - i) for i in range(d)])
        self.offsets = []
        self.weights = []

        def add(o, w):
            self.offsets.append(int(np.dot(o, strides)))
            self.weights.append(w / h**2)

        for i in range(d):
            cross = sum(np.abs(A[:, i, j]) for j in range(d) if j != i) if d > 1 else 0.0
            e = np.zeros(d, dtype=int)
            e[i] = 1
            add(e, A[:, i, i] - cross)
            add(-e, A[:, i, i] - cross)
        for i, j in itertools.combinations(range(d), 2):
            a = A[:, i, j]
            e = np.zeros(d, dtype=int)
            e[i], e[j] = 1, 1
            add(e, np.maximum(a, 0.0))
            add(-e, np.maximum(a, 0.0))
            e[j] = -1
            add(e, np.maximum(-a, 0.0))
            add(-e, np.maximum(-a, 0.0))
        self.coefficients = A

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Discrete operator at interior nodes, in difference form."""
        flat = np.asarray(u, dtype=float).ravel()
        center = flat[self.interior]
        out = np.zeros(len(self.interior))
        for off, w in zip(self.offsets, self.weights):
            out += w * (flat[self.interior + off] - center)
        return out

    def matrix(self, extra_diagonal=None) -> sp.csr_matrix:
        """Operator rows at interior nodes, identity rows on the boundary.

        ``extra_diagonal`` is added to the interior diagonal (used for the
        zeroth-order term of the free-boundary iteration).
        """
        n = self.grid.size
        K = len(self.interior)
        rows = [self.interior] * (len(self.offsets) + 1)
        cols = [self.interior + off for off in self.offsets]
        vals = list(self.weights)
        diag = -np.sum(self.weights, axis=0)
        if extra_diagonal is not None:
            diag = diag + extra_diagonal
        cols.append(self.interior)
        vals.append(diag)
        boundary = np.setdiff1d(np.arange(n), self.interior, assume_unique=True)
        rows.append(boundary)
        cols.append(boundary)
        vals.append(np.ones(len(boundary)))
        M = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        assert K + len(boundary) == n
        return M.tocsr()


def _check_dominance(A, grid, interior):
    d = A.shape[-1]
    diag = np.diagonal(A, axis1=-2, axis2=-1)
    off = np.sum(np.abs(A), axis=-1) - np.abs(diag)
    margin = np.min(diag - off, axis=-1)
    scale = np.max(np.abs(diag))
    bad = margin < -1e-12 * scale
    if np.any(bad):
        k = int(np.argmax(bad))
        node = np.argwhere(interior)[k]
        raise NonMonotoneStencilError(node, margin[k])
    if d and np.any(diag <= 0):
        k = int(np.argmax(np.any(diag <= 0, axis=-1)))
        raise NonMonotoneStencilError(np.argwhere(interior)[k], float(np.min(diag[k])))


def _odd_symmetric(problem: DirichletProblem, stencil: Stencil, g: np.ndarray) -> bool:
    """True when data are exactly odd and coefficients exactly even."""
    d = problem.grid.dim
    axes = tuple(range(d))
    f = problem.source.values
    if not (np.array_equal(np.flip(g, axes), -g) and np.array_equal(np.flip(f, axes), -f)):
        return False
    shape = (problem.grid.m - 2,) * d
    A = stencil.coefficients.reshape(shape + (d, d))
    return np.array_equal(np.flip(A, axes), A)


def _refine(lu, apply, f_int, u, interior, n, tol, max_steps):
    steps = 0
    r = f_int - apply(u)
    while steps < max_steps and np.max(np.abs(r), initial=0.0) > 0.1 * tol:
        rhs = np.zeros(n)
        rhs[interior] = r
        u = u + lu.solve(rhs)
        steps += 1
        r_new = f_int - apply(u)
        if np.max(np.abs(r_new)) >= np.max(np.abs(r)):
            r = r_new
            break
        r = r_new
    return u, float(np.max(np.abs(r), initial=0.0)), steps


def solve_linear(problem: DirichletProblem, tol=DEFAULT_TOL, max_iter=5) -> SolveReport:
    """Direct solve of ``L_h u = f`` with ``u = g`` on the boundary.

    ``max_iter`` bounds the number of refinement passes.  When the problem is
    exactly point-symmetric (odd data, even coefficients) the solution is
    projected onto odd grid functions, which only removes rounding noise.
    """
    F = problem.operator
    if not isinstance(F, Linear):
        raise TypeError("solve_linear needs a Linear operator")
    grid = problem.grid
    st = Stencil(F.field, grid)
    g = problem.boundary_values()
    f_int = problem.source.values.ravel()[st.interior]
    rhs = g.ravel().copy()
    rhs[st.interior] = f_int
    lu = splu(st.matrix().tocsc())
    u = lu.solve(rhs)
    u, res, steps = _refine(lu, st.apply, f_int, u, st.interior, grid.size, tol, max_iter)
    if _odd_symmetric(problem, st, g):
        U = u.reshape(grid.shape)
        U = 0.5 * (U - np.flip(U, tuple(range(grid.dim))))
        u = U.ravel()
        res = float(np.max(np.abs(f_int - st.apply(u)), initial=0.0))
    sol = GridFunction(grid, u)
    return SolveReport(sol, 1 + steps, res, res <= tol, tol, method="direct")


def solve_bellman(problem: DirichletProblem, tol=DEFAULT_TOL, max_iter=50) -> SolveReport:
    """Policy iteration for ``min_i (L_i u + c_i) = f``.

    Starts from the policy of the first family member.  A node switches
    policy only on strict improvement, so ties never cause cycling.
    """
    F = problem.operator
    if not isinstance(F, Bellman):
        raise TypeError("solve_bellman needs a Bellman operator")
    grid = problem.grid
    stencils = [Stencil(fld, grid) for fld, _ in F.family]
    shifts = np.array([c for _, c in F.family])
    interior = stencils[0].interior
    n, K = grid.size, len(interior)
    g = problem.boundary_values().ravel()
    f_int = problem.source.values.ravel()[interior]
    mats = [s.matrix() for s in stencils]
    policy = np.zeros(K, dtype=int)
    interior_row = np.zeros(n, dtype=bool)
    interior_row[interior] = True

    def values(u):
        return np.stack([s.apply(u) for s in stencils], axis=-1) + shifts

    u = g.copy()
    converged = False
    it = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        rows = []
        for i, M in enumerate(mats):
            sel = np.zeros(n)
            sel[interior[policy == i]] = 1.0
            rows.append(sp.diags(sel) @ M)
        rows.append(sp.diags((~interior_row).astype(float)))
        A = sum(rows[1:], rows[0]).tocsc()
        rhs = g.copy()
        rhs[interior] = f_int - shifts[policy]
        lu = splu(A)
        u = lu.solve(rhs)

        def apply_policy(v, _p=policy):
            return np.take_along_axis(values(v), _p[:, None], axis=1)[:, 0] - shifts[_p]

        u, _, _ = _refine(lu, apply_policy, f_int - shifts[policy], u, interior, n, tol, 3)
        V = values(u)
        current = V[np.arange(K), policy]
        best = np.argmin(V, axis=1)
        gain = current - V[np.arange(K), best]
        improve = gain > 1e-13 * (1.0 + np.abs(current))
        res = float(np.max(np.abs(V.min(axis=1) - f_int), initial=0.0))
        if not np.any(improve):
            converged = res <= tol
            break
        policy = np.where(improve, best, policy)
    full_policy = np.full(grid.shape, -1)
    full_policy.ravel()[interior] = policy
    return SolveReport(
        GridFunction(grid, u), it, res, converged, tol, method="policy-iteration", policy=full_policy
    )


def solve(problem: DirichletProblem, tol=DEFAULT_TOL, max_iter=50) -> SolveReport:
    F = problem.operator
    if isinstance(F, Linear):
        return solve_linear(problem, tol, min(max_iter, 5))
    if isinstance(F, Bellman):
        return solve_bellman(problem, tol, max_iter)
    raise NotImplementedError(f"no Dirichlet solver for {type(F).__name__} operators")


# ---------------------------------------------------------------------------
# pseudo free boundary problem  max{L phi - phi^mu, -phi} = 0


def _fb_residual(st, phi, mu):
    p = phi.ravel()
    Lp = st.apply(p)
    pint = p[st.interior]
    return np.maximum(Lp - np.maximum(pint, 0.0) ** mu, -pint)


def complementarity_residual(L: Linear, phi: GridFunction, mu) -> float:
    """Max over interior nodes of ``|max{L_h phi - phi_+^mu, -phi}|``."""
    st = Stencil(L.field, phi.grid, check=False)
    return float(np.max(np.abs(_fb_residual(st, phi.values, mu)), initial=0.0))


def free_boundary_nodes(phi: GridFunction, threshold: float) -> np.ndarray:
    """Nodes of ``{phi > threshold}`` with an axis neighbor outside it."""
    pos = phi.values > threshold
    d = phi.grid.dim
    edge = np.zeros_like(pos)
    for ax in range(d):
        for step in (1, -1):
            nb = np.roll(pos, step, axis=ax)
            # np.roll wraps around; neutralize the wrapped slab
            sl = [slice(None)] * d
            sl[ax] = 0 if step == 1 else -1
            nb[tuple(sl)] = True
            edge |= pos & ~nb
    return np.argwhere(edge)


def solve_pseudo_fb(
    L: Linear, mu, g, grid: UniformGrid, tol=DEFAULT_TOL, max_iter=500, damping=1.0
) -> SolveReport:
    """Nonnegative solution of ``max{L phi - phi_+^mu, -phi} = 0``.

    Fixed-point iteration from the ``L``-harmonic extension of ``g``: each
    sweep solves ``(L_h - w) phi_new = 0`` with the frozen weight
    ``w = phi^(mu - 1)``.  From a supersolution the iterates decrease
    monotonically and stay above the solution; nodes that reach exactly zero
    are pinned to zero.  ``damping`` is halved whenever the residual grows.
    """
    if not isinstance(L, Linear):
        raise TypeError("the free-boundary solver needs a Linear operator")
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    gv = boundary_values(g, grid)
    bmask = grid.boundary_mask()
    if np.any(gv[bmask] < 0):
        node = tuple(int(i) for i in np.argwhere(bmask & (gv < 0))[0])
        raise ValueError(f"negative boundary data at node {node}")
    st = Stencil(L.field, grid)
    n = grid.size
    phi = splu(st.matrix().tocsc()).solve(gv.ravel())
    phi = np.maximum(phi, 0.0)
    res = float(np.max(np.abs(_fb_residual(st, phi, mu)), initial=0.0))
    it = 0
    omega = damping
    while res > tol and it < max_iter:
        it += 1
        pint = phi[st.interior]
        zero = pint <= 0.0
        with np.errstate(divide="ignore"):
            w = np.where(zero, 0.0, np.where(zero, 1.0, pint) ** (mu - 1.0))
        keep = np.ones(n)
        keep[st.interior[zero]] = 0.0
        # zero nodes get identity rows: they stay pinned at zero
        A = sp.diags(keep) @ st.matrix(extra_diagonal=-w) + sp.diags(1.0 - keep)
        rhs = gv.ravel().copy()
        rhs[st.interior] = 0.0
        new = splu(A.tocsc()).solve(rhs)
        new = np.maximum(new, 0.0)
        trial = phi + omega * (new - phi)
        trial_res = float(np.max(np.abs(_fb_residual(st, trial, mu)), initial=0.0))
        if trial_res > res and omega > 1e-3:
            omega *= 0.5
            continue
        phi, res = trial, trial_res
    sol = GridFunction(grid, phi)
    fb = free_boundary_nodes(sol, 10 * tol)
    return SolveReport(sol, it, res, res <= tol, tol, method="pseudo-fb-picard", free_boundary=fb)


# ---------------------------------------------------------------------------
# residuals and refinement studies


def residual(F: EllipticOperator, u: GridFunction, f: GridFunction) -> float:
    """Max over interior nodes of ``|F_h[u] - f|``.

    Linear and Bellman operators use the same monotone stencil as the
    solvers; Pucci operators are evaluated on the centered Hessian.
    """
    grid = u.grid
    if f.grid != grid:
        raise ValueError("u and f must share a grid")
    interior = grid.interior_mask()
    f_int = f.values[interior]
    if isinstance(F, Linear):
        Fu = Stencil(F.field, grid, check=False).apply(u.values)
    elif isinstance(F, Bellman):
        vals = [Stencil(fld, grid, check=False).apply(u.values) + c for fld, c in F.family]
        Fu = np.min(vals, axis=0)
    elif isinstance(F, Pucci):
        Fu = F.evaluate(grid.coords()[interior], hessian_field(u)[interior])
    else:
        X = grid.coords()[interior]
        Fu = F.evaluate(X, hessian_field(u)[interior])
    return float(np.max(np.abs(Fu - f_int), initial=0.0))


@dataclass
class ConvergenceStudy:
    ms: list
    errors: list
    orders: list

    @property
    def exact(self) -> bool:
        return all(e <= 1e-12 for e in self.errors)


def convergence_study(make_problem, ms, exact, solver=None, tol=DEFAULT_TOL) -> ConvergenceStudy:
    """Max-norm errors against ``exact`` and orders ``log2(e_k / e_{k+1})``."""
    solver = solver or solve
    errors = []
    for m in ms:
        p = make_problem(m)
        rep = solver(p, tol)
        ref = np.asarray(exact(p.grid.coords()), dtype=float)
        errors.append(float(np.max(np.abs(rep.solution.values - ref))))
    orders = []
    for e0, e1 in zip(errors, errors[1:]):
        if e0 <= 1e-12 and e1 <= 1e-12:
            orders.append(math.inf)
        else:
            orders.append(math.log2(e0 / e1) if e1 > 0 else math.inf)
    return ConvergenceStudy(list(ms), errors, orders)
