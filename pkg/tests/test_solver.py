import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessflat.errors import NonMonotoneStencilError
from hessflat.grid import Cube, GridFunction, UniformGrid, hessian_at, sample
from hessflat.operators import (
    Bellman,
    CoefficientField,
    EllipticityPair,
    Linear,
    Pucci,
    constant_field,
    holder_even,
    identity_field,
)
from hessflat.scenarios import quartic_profile
from hessflat.solver import (
    DirichletProblem,
    Stencil,
    complementarity_residual,
    convergence_study,
    residual,
    solve,
    solve_bellman,
    solve_linear,
    solve_pseudo_fb,
)

LAPLACE = Linear(identity_field(2))


def x(X, i):
    return X[..., i]


def zero_source(m, d=2):
    g = UniformGrid(Cube.unit(d), m)
    return GridFunction(g, np.zeros(g.shape))


def poisson(F, m, g, f=None):
    src = zero_source(m, F.dim) if f is None else sample(f, Cube.unit(F.dim), m)
    return DirichletProblem(F, src, g)


def sin_exact(X):
    return np.sin(math.pi * x(X, 0)) * np.sin(math.pi * x(X, 1))


def sin_source(X):
    return -2 * math.pi**2 * sin_exact(X)


# -- linear ---------------------------------------------------------------------


@pytest.mark.parametrize("g", [lambda X: x(X, 0) ** 2 - x(X, 1) ** 2, lambda X: x(X, 0) * x(X, 1)])
def test_quadratic_harmonic_is_exact(g):
    rep = solve_linear(poisson(LAPLACE, 33, g))
    assert rep.converged
    exact = sample(g, Cube.unit(2), 33).values
    assert np.max(np.abs(rep.solution.values - exact)) <= 1e-12


def test_manufactured_sine_ratio():
    e = []
    for m in (65, 129):
        rep = solve_linear(poisson(LAPLACE, m, sin_exact, sin_source))
        e.append(np.max(np.abs(rep.solution.values - sample(sin_exact, Cube.unit(2), m).values)))
    assert 3.5 <= e[0] / e[1] <= 4.5


def test_nonmonotone_stencil_names_node():
    def A(X):
        out = np.broadcast_to(np.eye(2), X.shape[:-1] + (2, 2)).copy()
        out[..., 0, 1] = out[..., 1, 0] = np.where(x(X, 0) > 0.5, 1.5, 0.0)
        return out

    F = Linear(CoefficientField(A, 2, bounds=(0.1, 3.0)), EllipticityPair(0.1, 3.0))
    with pytest.raises(NonMonotoneStencilError) as exc:
        solve_linear(poisson(F, 17, lambda X: 0 * x(X, 0)))
    assert exc.value.node is not None
    assert x(UniformGrid(Cube.unit(2), 17).point(exc.value.node)[None], 0)[0] > 0.5


def test_residual_quadratic_is_zero():
    u = sample(lambda X: x(X, 0) ** 2 - x(X, 1) ** 2, Cube.unit(2), 33)
    assert residual(LAPLACE, u, zero_source(33)) <= 1e-12


def test_residual_single_node_bump():
    m = 33
    u = sample(lambda X: x(X, 0) ** 2 - x(X, 1) ** 2, Cube.unit(2), m)
    h = u.grid.spacing
    v = u.values.copy()
    v[10, 12] += h**2
    assert residual(LAPLACE, u.with_values(v), zero_source(m)) == pytest.approx(4.0, rel=1e-6)


def test_residual_of_converged_reports(rng):
    F = Linear(holder_even(2, 0.5, 0.1))
    p = poisson(F, 65, lambda X: x(X, 0) ** 3 - 3 * x(X, 0) * x(X, 1) ** 2, lambda X: 1 + x(X, 1))
    rep = solve(p)
    assert rep.converged and rep.residual <= rep.tol
    assert residual(F, rep.solution, p.source) <= rep.tol


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_affine_invariance(a, b1, b2):
    g0 = lambda X: np.cos(2 * x(X, 0)) + x(X, 1) ** 3
    u0 = solve_linear(poisson(LAPLACE, 17, g0)).solution
    u1 = solve_linear(poisson(LAPLACE, 17, lambda X: g0(X) + a + b1 * x(X, 0) + b2 * x(X, 1))).solution
    ell = sample(lambda X: a + b1 * x(X, 0) + b2 * x(X, 1), Cube.unit(2), 17)
    assert np.max(np.abs(u1.values - u0.values - ell.values)) <= 1e-11


def test_odd_data_even_coefficients_zero_hessian():
    F = Linear(holder_even(2, 0.5, 0.1))
    for m in (17, 33, 65):
        u = solve_linear(poisson(F, m, lambda X: x(X, 0) ** 3 - 3 * x(X, 0) * x(X, 1) ** 2)).solution
        assert np.all(hessian_at(u) == 0.0)


def test_three_dimensional_solve():
    F = Linear(holder_even(3, 0.5, 0.1))
    rep = solve(poisson(F, 17, lambda X: x(X, 0) ** 2 - x(X, 2) ** 2))
    assert rep.converged
    F0 = Linear(identity_field(3))
    rep0 = solve(poisson(F0, 17, lambda X: x(X, 0) ** 2 - x(X, 2) ** 2))
    exact = sample(lambda X: x(X, 0) ** 2 - x(X, 2) ** 2, Cube.unit(3), 17).values
    assert np.max(np.abs(rep0.solution.values - exact)) <= 1e-12


def test_pucci_has_no_dirichlet_solver():
    P = Pucci("plus", EllipticityPair(1.0, 2.0), 2)
    with pytest.raises(NotImplementedError):
        solve(DirichletProblem(P, zero_source(9), lambda X: 0 * x(X, 0)))


# -- comparison -----------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_comparison_principle(seed):
    rng = np.random.default_rng(seed)
    m = 17
    grid = UniformGrid(Cube.unit(2), m)
    F = Linear(holder_even(2, 0.5, 0.1))
    g1 = GridFunction(grid, rng.normal(size=grid.shape))
    g2 = g1.with_values(g1.values + np.abs(rng.normal(size=grid.shape)))
    f = zero_source(m)
    u1 = solve_linear(DirichletProblem(F, f, g1)).solution
    u2 = solve_linear(DirichletProblem(F, f, g2)).solution
    assert np.all(u1.values <= u2.values)


# -- bellman --------------------------------------------------------------------


def _g(X):
    return np.sin(2 * x(X, 0)) + x(X, 1) ** 2


def test_bellman_singleton_matches_linear():
    B = Bellman(((identity_field(2), 0.0),))
    a = solve_bellman(poisson(B, 33, _g, lambda X: 1 + x(X, 0)))
    b = solve_linear(poisson(LAPLACE, 33, _g, lambda X: 1 + x(X, 0)))
    assert np.max(np.abs(a.solution.values - b.solution.values)) <= 1e-10


def test_bellman_larger_family_is_lower():
    minus_one = lambda X: -np.ones(X.shape[:-1])
    zero = lambda X: 0 * x(X, 0)
    fam = Bellman(((identity_field(2), 0.0), (constant_field(2 * np.eye(2)), 0.0)))
    single = Bellman(((identity_field(2), 0.0),))
    u_fam = solve_bellman(poisson(fam, 33, zero, minus_one))
    u_one = solve_bellman(poisson(single, 33, zero, minus_one))
    assert u_fam.converged
    assert np.all(u_fam.solution.values <= u_one.solution.values + 1e-12)
    assert np.any(u_fam.solution.values < u_one.solution.values - 1e-3)


def test_bellman_shifted_family_zero_data():
    fam = Bellman(((identity_field(2), 0.0), (identity_field(2), 1.0)))
    rep = solve_bellman(poisson(fam, 17, lambda X: 0 * x(X, 0)))
    assert rep.converged and rep.residual <= rep.tol
    assert np.all(rep.solution.values == 0.0)


def test_bellman_rough_family_converges():
    fam = Bellman(((identity_field(2), 0.0), (holder_even(2, 0.5, 0.1), -0.5)))
    p = poisson(fam, 65, _g, lambda X: np.cos(3 * x(X, 0)))
    rep = solve_bellman(p)
    assert rep.converged
    assert residual(fam, rep.solution, p.source) <= rep.tol


# -- pseudo free boundary -------------------------------------------------------


def test_pseudo_fb_zero_data():
    grid = UniformGrid(Cube.unit(2), 17)
    rep = solve_pseudo_fb(LAPLACE, 0.5, lambda X: 0 * x(X, 0), grid)
    assert rep.iterations == 0 and np.all(rep.solution.values == 0.0)


def test_pseudo_fb_negative_data_rejected():
    grid = UniformGrid(Cube.unit(2), 9)
    with pytest.raises(ValueError, match="negative"):
        solve_pseudo_fb(LAPLACE, 0.5, lambda X: x(X, 0), grid)


def _dead_core_1d(m, a=0.5):
    L = Linear(identity_field(1))
    grid = UniformGrid(Cube.unit(1), m)
    g = lambda X: quartic_profile(np.abs(X[..., 0]), a)
    rep = solve_pseudo_fb(L, 0.5, g, grid)
    exact = g(grid.coords())
    return rep, float(np.max(np.abs(rep.solution.values - exact)))


def test_pseudo_fb_dead_core_profile():
    errs = []
    for m in (33, 65, 129):
        rep, e = _dead_core_1d(m)
        assert rep.converged
        errs.append(e)
    for e0, e1 in zip(errs, errs[1:]):
        assert 3.5 <= e0 / e1 <= 4.5


def test_pseudo_fb_invariants_2d():
    grid = UniformGrid(Cube.unit(2), 33)
    g = lambda X: quartic_profile(np.abs(x(X, 0)), 0.5) * (1 + 0.25 * (x(X, 1) + 1))
    rep = solve_pseudo_fb(LAPLACE, 0.5, g, grid)
    phi = rep.solution
    assert rep.converged and np.all(phi.values >= 0.0)
    assert complementarity_residual(LAPLACE, phi, 0.5) <= rep.tol
    zero = phi.values == 0.0
    core = zero.copy()
    for s0 in (-1, 0, 1):
        for s1 in (-1, 0, 1):
            core &= np.roll(zero, (s0, s1), axis=(0, 1))
    nodes = np.argwhere(core & grid.interior_mask())
    assert len(nodes) > 0
    for node in nodes[:20]:
        assert np.all(hessian_at(phi, tuple(node)) == 0.0)
    assert len(rep.free_boundary) > 0


# -- refinement studies ---------------------------------------------------------


def test_convergence_study_quadratic_exact():
    g = lambda X: x(X, 0) ** 2 - x(X, 1) ** 2
    study = convergence_study(lambda m: poisson(LAPLACE, m, g), [9, 17, 33], g)
    assert study.exact and all(o == math.inf for o in study.orders)


def test_convergence_study_sine_orders():
    study = convergence_study(lambda m: poisson(LAPLACE, m, sin_exact, sin_source), [17, 33, 65], sin_exact)
    assert all(1.8 <= o <= 2.2 for o in study.orders)


def test_rough_coefficient_orders_positive():
    # reference: finest grid; restrict by striding
    F = Linear(holder_even(2, 0.5, 0.1))
    g = lambda X: x(X, 0) ** 2 - x(X, 1) ** 2 + 0.3 * x(X, 0)
    ref = solve(poisson(F, 257, g)).solution.values
    errs = []
    for m in (33, 65, 129):
        u = solve(poisson(F, m, g)).solution.values
        s = 256 // (m - 1)
        errs.append(np.max(np.abs(u - ref[::s, ::s])))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(o >= 1.0 for o in orders)


def test_stencil_matrix_is_m_matrix():
    st_ = Stencil(holder_even(2, 0.5, 0.1), UniformGrid(Cube.unit(2), 9))
    A = st_.matrix().toarray()
    off = A - np.diag(np.diag(A))
    assert np.all(np.diag(A)[st_.interior] < 0)
    assert np.all(off[st_.interior] >= 0)
