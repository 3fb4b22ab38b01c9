"""Acceptance criteria, one test each, at their stated tolerances and time budgets."""

import math
import time
from decimal import Decimal, getcontext

import numpy as np
import pytest

from conftest import record_acceptance
from hessflat.experiment import run_experiment
from hessflat.flatness import (
    RegularityBudget,
    check_cascade_bounds,
    dini_integral,
    iterate_flatness,
    rescale_problem,
    select_theta_delta,
)
from hessflat.grid import (
    AffineFunction,
    Cube,
    GridFunction,
    UniformGrid,
    hessian_at,
    sample,
    spectral_norm,
)
from hessflat.operators import (
    Bellman,
    EllipticityPair,
    Linear,
    Pucci,
    estimate_oscillation_seminorm,
    estimate_source_seminorm,
    holder_even,
    holder_iso,
    identity_field,
    increment_ratios,
    random_psd,
    random_symmetric,
)
from hessflat.scenarios import build_scenario, example_spec, quartic_profile
from hessflat.solver import (
    DirichletProblem,
    complementarity_residual,
    convergence_study,
    solve,
    solve_linear,
    solve_pseudo_fb,
)


def x(X, i):
    return X[..., i]


def zero_source(m, d=2):
    g = UniformGrid(Cube.unit(d), m)
    return GridFunction(g, np.zeros(g.shape))


# 1 ------------------------------------------------------------------------------


def _theta_delta_decimal(Theta, alpha_F, beta):
    getcontext().prec = 50
    base = Decimal(1) / (Decimal(2) * Decimal(Theta))
    gap = Decimal(alpha_F) - Decimal(beta)
    theta = base ** (Decimal(1) / gap)
    delta = Decimal("0.5") * base ** ((Decimal(2) + Decimal(beta)) / gap)
    return float(theta), float(delta)


def test_criterion_1_theta_delta():
    t0 = time.perf_counter()
    ref_ok = select_theta_delta(2, 1, 0.5) == (0.0625, 1 / 2048)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        alpha_F = float(rng.uniform(0.3, 1.0))
        beta = float(rng.uniform(0.05, 0.95)) * alpha_F
        Theta = float(rng.uniform(0.6, 5.0))
        got = select_theta_delta(Theta, alpha_F, beta)
        want = _theta_delta_decimal(Theta, alpha_F, beta)
        worst = max(worst, *(abs(g - w) / w for g, w in zip(got, want)))
    dt = time.perf_counter() - t0
    ok = ref_ok and worst <= 1e-14 and dt < 1.0
    assert record_acceptance(1, ok, f"reference exact {ref_ok}; sweep max rel err {worst:.2e}; {dt:.2f}s")


# 2 ------------------------------------------------------------------------------


def test_criterion_2_solver_order():
    t0 = time.perf_counter()
    L = Linear(identity_field(2))
    exact = lambda X: np.sin(math.pi * x(X, 0)) * np.sin(math.pi * x(X, 1))
    f = lambda X: -2 * math.pi**2 * exact(X)

    def sin_problem(m):
        return DirichletProblem(L, sample(f, Cube.unit(2), m), exact)

    study = convergence_study(sin_problem, [65, 129, 257], exact)
    quad = lambda X: x(X, 0) ** 2 - x(X, 1) ** 2
    qstudy = convergence_study(lambda m: DirichletProblem(L, zero_source(m), quad), [65, 129, 257], quad)
    qerr = max(qstudy.errors)
    dt = time.perf_counter() - t0
    ok = all(1.8 <= o <= 2.2 for o in study.orders) and qerr <= 1e-10 and dt < 30
    orders = ", ".join(f"{o:.3f}" for o in study.orders)
    assert record_acceptance(2, ok, f"orders [{orders}]; quadratic max err {qerr:.1e}; {dt:.1f}s")


# 3 ------------------------------------------------------------------------------


def test_criterion_3_scaling_algebra():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    d, n = 2, 100
    theta, beta, gamma = 0.5, 0.5, 0.7
    operators = [
        Linear(holder_even(d, 0.5, 0.1)),
        Bellman(((identity_field(d), 0.0), (holder_iso(d, 0.5, 0.1), 0.2))),
        Pucci("plus", EllipticityPair(1.0, 2.0), d),
    ]
    violations = 0
    for F in operators:
        lam, Lam = F.ellipticity.lam, F.ellipticity.Lam
        for k in (1, 3, 7):
            Fk = rescale_problem(F, None, AffineFunction.zero(d), theta, k, beta).operator
            X = rng.uniform(-1, 1, (n, d))
            M = random_symmetric(rng, d, n, scale=3.0)
            P = random_psd(rng, d, n)
            r = increment_ratios(Fk, X, M, P)
            violations += int(np.sum(r < lam - 1e-12) + np.sum(r > d * Lam + 1e-12))
    # source seminorm contraction for beta <= gamma
    radii = [0.5, 0.25, 0.125, 0.0625]
    f = lambda X: np.linalg.norm(X, axis=-1) ** gamma + 0.3 * x(X, 0)
    base = estimate_source_seminorm(sample(f, Cube.unit(d), 161), gamma, radii).seminorm
    contraction = True
    for k in (1, 3, 7):
        fk = rescale_problem(operators[0], f, AffineFunction.zero(d), theta, k, beta).source
        sk = estimate_source_seminorm(sample(fk, Cube.unit(d), 161), gamma, radii).seminorm
        contraction &= sk <= base * (1 + 1e-3)
    # Laplacian invariance
    L = Linear(identity_field(d))
    X, M = rng.uniform(-1, 1, (n, d)), random_symmetric(rng, d, n)
    lap_err = max(
        float(np.max(np.abs(rescale_problem(L, None, AffineFunction.zero(d), theta, k, beta).operator.evaluate(X, M)
                            - L.evaluate(X, M))))
        for k in (1, 3, 7)
    )
    dt = time.perf_counter() - t0
    ok = violations == 0 and contraction and lap_err <= 1e-12 and dt < 10
    assert record_acceptance(3, ok, f"H0 violations {violations}; contraction {contraction}; "
                                    f"Laplacian invariance err {lap_err:.1e}; {dt:.1f}s")


# 4 ------------------------------------------------------------------------------


def test_criterion_4_exponent_fitting():
    t0 = time.perf_counter()
    cub = sample(lambda X: x(X, 0) ** 3 - 3 * x(X, 0) * x(X, 1) ** 2, Cube.unit(2), 257)
    sq = sample(lambda X: x(X, 0) ** 2, Cube.unit(2), 257)
    a1 = iterate_flatness(cub, K=5, mode="measure", theta=0.5)
    a0 = iterate_flatness(sq, K=5, mode="measure", theta=0.5)
    dt = time.perf_counter() - t0
    ok = (len(a1.steps) >= 5 and abs(a1.fitted_exponent - 1.0) <= 0.05
          and abs(a0.fitted_exponent) <= 0.05 and dt < 20)
    assert record_acceptance(4, ok, f"cubic alpha {a1.fitted_exponent:.4f}; x1^2 alpha "
                                    f"{a0.fitted_exponent:.4f}; {dt:.1f}s")


# 5 and 6 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def illustration(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    deg = run_experiment(example_spec(m=257), out=out)
    t_deg = time.perf_counter() - t0
    gen = run_experiment(example_spec(name="illustration_generic", boundary="generic_quad", m=257), out=out)
    return deg, gen, t_deg, time.perf_counter() - t0


def test_criterion_5_illustration(illustration):
    deg, gen, _, dt = illustration
    p, q = deg.point(), gen.point()
    alpha = p["traces"]["measure"]["alpha_hat"]
    slope = 2 + q["traces"]["measure"]["alpha_hat"]
    ok = (not deg.errors and not gen.errors and p["hessian_norm"] <= 1e-12 and alpha >= 0.5
          and q["hessian_norm"] >= 0.5 and abs(slope - 2.0) <= 0.1 and dt < 180)
    assert record_acceptance(5, ok, f"|D2u(0)| {p['hessian_norm']:.1e}, alpha {alpha:.3f}; generic |D2u(0)| "
                                    f"{q['hessian_norm']:.3f}, slope {slope:.3f}; {dt:.1f}s")


def test_criterion_6_cascade(illustration):
    deg, _, dt, _ = illustration
    tr = deg.traces[("p0", "cascade")]
    bounds = check_cascade_bounds(tr, C=100)
    gap = max(s.frozen_gap for s in tr.steps)
    hess0 = max(s.hessian_at_center for s in tr.steps)
    ok = bounds and gap <= tr.delta * 1.5 and hess0 <= 1e-6 and not tr.truncated and dt < 120
    assert record_acceptance(6, ok, f"depth {len(tr.steps)} (theta {tr.theta:.3g}); bounds {bounds}; "
                                    f"max gap {gap:.2e} vs 1.5 delta {1.5 * tr.delta:.2e}; "
                                    f"max hess0 {hess0:.1e}; {dt:.1f}s")


# 7 ------------------------------------------------------------------------------


def test_criterion_7_seminorms():
    t0 = time.perf_counter()
    radii = [0.4, 0.2, 0.1, 0.05]
    osc = estimate_oscillation_seminorm(Linear(holder_iso(2, 0.5, 0.1)), 0.1, radii, m=161)
    src = estimate_source_seminorm(sample(lambda X: np.linalg.norm(X, axis=-1) ** 0.3, Cube.unit(2), 161),
                                   0.3, radii)
    osc0 = estimate_oscillation_seminorm(Linear(identity_field(2)), 0.1, radii, m=161)
    src0 = estimate_source_seminorm(sample(lambda X: np.full(X.shape[:-1], 4.0), Cube.unit(2), 161), 0.3, radii)
    dt = time.perf_counter() - t0
    ok = (abs(osc.fitted_exponent - 0.1) <= 0.03 and abs(src.fitted_exponent - 0.3) <= 0.05
          and osc0.seminorm == 0 and src0.seminorm == 0 and dt < 20)
    assert record_acceptance(7, ok, f"[F] exponent {osc.fitted_exponent:.4f}; [f] exponent "
                                    f"{src.fitted_exponent:.4f}; constants {osc0.seminorm}, {src0.seminorm}; {dt:.2f}s")


# 8 ------------------------------------------------------------------------------


def test_criterion_8_dini():
    t0 = time.perf_counter()
    v, ok1 = dini_integral(lambda t: t**0.5)
    _, ok2 = dini_integral(lambda t: 1 / math.log(math.e / t))
    dt = time.perf_counter() - t0
    ok = ok1 and abs(v - 2.0) <= 0.02 and not ok2 and dt < 1
    assert record_acceptance(8, ok, f"t^0.5 -> {v:.4f} converged {ok1}; 1/log(e/t) converged {ok2}; {dt:.3f}s")


# 9 ------------------------------------------------------------------------------


def test_criterion_9_pseudo_free_boundary():
    t0 = time.perf_counter()
    a, mu = 0.5, 0.5
    P = lambda s: quartic_profile(s, a)
    errs = []
    for m in (65, 129, 257):
        grid = UniformGrid(Cube.unit(1), m)
        rep = solve_pseudo_fb(Linear(identity_field(1)), mu, lambda X: P(np.abs(X[..., 0])), grid)
        errs.append(float(np.max(np.abs(rep.solution.values - P(np.abs(grid.coords()[..., 0]))))))
    ratios = [e0 / e1 for e0, e1 in zip(errs, errs[1:])]

    L2 = Linear(identity_field(2))
    grid = UniformGrid(Cube.unit(2), 129)
    rep = solve_pseudo_fb(L2, mu, lambda X: P(np.abs(X[..., 0])), grid)
    phi = rep.solution
    res = complementarity_residual(L2, phi, mu)
    h = grid.spacing
    interior = [tuple(nd) for nd in rep.free_boundary if all(0 < i < grid.m - 1 for i in nd)]
    worst = 0.0
    for node in interior[:: max(1, len(interior) // 40)]:
        s = abs(grid.point(node)[0])
        d2 = abs(P(s + h) - 2 * P(s) + P(s - h)) / h**2
        worst = max(worst, spectral_norm(hessian_at(phi, node)) / d2)
    dt = time.perf_counter() - t0
    ok = (all(3.5 <= r <= 4.5 for r in ratios) and rep.converged and np.all(phi.values >= 0)
          and res <= rep.tol and len(interior) > 0 and worst <= 10 and dt < 120)
    assert record_acceptance(9, ok, f"1D ratios {', '.join(f'{r:.3f}' for r in ratios)}; 2D min phi "
                                    f"{phi.values.min():.1e}, residual {res:.1e}, FB nodes {len(interior)}, "
                                    f"max Hessian/profile {worst:.3f}; {dt:.1f}s")


# 10 -----------------------------------------------------------------------------


def test_criterion_10_comparison():
    t0 = time.perf_counter()
    scn = build_scenario(example_spec(m=65))
    F, f, grid = scn.operator, scn.problem.source, scn.grid
    rng = np.random.default_rng(10)
    violations = 0
    for _ in range(50):
        g1 = GridFunction(grid, rng.normal(size=grid.shape))
        g2 = g1.with_values(g1.values + np.abs(rng.normal(size=grid.shape)))
        u1 = solve_linear(DirichletProblem(F, f, g1)).solution
        u2 = solve_linear(DirichletProblem(F, f, g2)).solution
        violations += int(np.sum(u1.values > u2.values))
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 60
    assert record_acceptance(10, ok, f"50 ordered pairs, violations {violations}; {dt:.1f}s")
