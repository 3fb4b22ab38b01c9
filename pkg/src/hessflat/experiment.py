"""Experiment orchestration: solve, measure, fit, persist and re-validate.

Results live in ``<out>/<scenario>/<timestamp>/``.  ``result.json`` holds the
numerical payload only and is byte-identical across reruns of the same spec;
wall-clock timings go to ``timings.json``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hessflat.errors import NonConvergenceError, ResolutionError, SpecError
from hessflat.flatness import (
    FlatnessTrace,
    ThetaWarning,
    depth_cap,
    dini_integral,
    fit_decay,
    iterate_flatness,
    select_theta_delta,
)
from hessflat.grid import Cube, GridFunction, hessian_at, sample, spectral_norm
from hessflat.operators import (
    Linear,
    _default_m,
    check_ellipticity,
    estimate_oscillation_seminorm,
    estimate_source_seminorm,
)
from hessflat.scenarios import ScenarioSpec, build_scenario
from hessflat.solver import complementarity_residual, residual, solve, solve_pseudo_fb

STAGES = ("solve", "hypotheses", "measure", "cascade")
SEMINORM_RADII = (0.5, 0.25, 0.125, 0.0625)

EXIT_OK, EXIT_SPEC, EXIT_NONCONVERGENCE, EXIT_RESOLUTION = 0, 2, 3, 4
_EXIT_OF_KIND = {"spec": EXIT_SPEC, "nonconvergence": EXIT_NONCONVERGENCE, "resolution": EXIT_RESOLUTION}


def _num(x):
    """JSON-safe float: non-finite values become strings."""
    if x is None:
        return None
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def _unnum(x):
    return math.nan if x is None else float(x)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


@dataclass
class ExperimentResult:
    spec: ScenarioSpec
    solve: dict | None = None
    hypotheses: dict = field(default_factory=dict)
    points: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    solution: GridFunction | None = field(default=None, repr=False)
    traces: dict = field(default_factory=dict, repr=False)
    directory: Path | None = None

    def payload(self) -> dict:
        return _clean({
            "spec": self.spec.to_dict(),
            "solve": self.solve,
            "hypotheses": self.hypotheses,
            "points": self.points,
            "errors": self.errors,
        })

    def to_json(self) -> str:
        return json.dumps(self.payload(), indent=2, sort_keys=True) + "\n"

    @property
    def exit_code(self) -> int:
        codes = [_EXIT_OF_KIND.get(e["kind"], EXIT_SPEC) for e in self.errors]
        return min(codes) if codes else EXIT_OK

    def point(self, label="p0") -> dict:
        for p in self.points:
            if p["label"] == label:
                return p
        raise KeyError(label)


def _record(result, stage, exc):
    if isinstance(exc, ResolutionError):
        kind = "resolution"
    elif isinstance(exc, NonConvergenceError):
        kind = "nonconvergence"
    else:
        kind = "spec"
    result.errors.append({"stage": stage, "kind": kind, "message": str(exc)})


# ---------------------------------------------------------------------------
# stages


def _solve_stage(scn, result, tol):
    spec = scn.spec
    if spec.mu is not None:
        if not isinstance(scn.operator, Linear):
            raise SpecError("the pseudo free-boundary problem needs a linear operator")
        rep = solve_pseudo_fb(scn.operator, spec.mu, scn.boundary_field, scn.grid, tol,
                              max_iter=max(spec.solver.max_iter, 500), damping=spec.solver.damping)
    else:
        if scn.problem is None:
            raise SpecError(f"no Dirichlet solver for {spec.operator.kind} operators")
        rep = solve(scn.problem, tol, spec.solver.max_iter)
    result.solve = rep.summary()
    result.solution = rep.solution
    if not rep.converged:
        raise NonConvergenceError(f"residual {rep.residual:.3e} above tol {tol:.1e} after {rep.iterations} iterations")


def _hypotheses_stage(scn, result):
    spec, F = scn.spec, scn.operator
    b = spec.budget
    rep = check_ellipticity(F, trials=200, seed=spec.seed)
    hyp = {
        "ellipticity": {
            "holds": rep.holds,
            "lambda_star": rep.lambda_star,
            "Lambda_star": rep.Lambda_star,
            "declared": [F.ellipticity.lam, F.ellipticity.Lam],
        }
    }
    osc = estimate_oscillation_seminorm(F, b.eps_bar, SEMINORM_RADII)
    hyp["oscillation"] = {"seminorm": osc.seminorm, "fitted_exponent": osc.fitted_exponent,
                          "declared": b.eps_bar}
    f = sample(scn.source_field, Cube.unit(spec.dimension), _default_m(spec.dimension))
    src = estimate_source_seminorm(f, b.gamma, SEMINORM_RADII)
    hyp["source"] = {"seminorm": src.seminorm, "fitted_exponent": src.fitted_exponent,
                     "declared": b.gamma}
    modulus = getattr(getattr(F, "field", None), "modulus", None)
    if modulus is not None:
        value, converged = dini_integral(modulus)
        hyp["dini"] = {"value": value, "verdict": "converges" if converged else "diverges",
                       "linear_estimate_applicable": converged}
    result.hypotheses = hyp


def _point_label(i):
    return f"p{i}"


def _measure_stages(scn, result, stages, tol, depth):
    spec = scn.spec
    u = result.solution
    grid = scn.grid
    center = tuple(grid.cube.center)
    for i, node in enumerate(scn.marked_nodes):
        label = _point_label(i)
        X = tuple(float(x) for x in grid.point(node))
        entry = {"label": label, "point": list(X), "node": list(node),
                 "hessian_norm": float(spectral_norm(hessian_at(u, node))), "traces": {}}
        result.points.append(entry)
        if "measure" in stages:
            try:
                tr = iterate_flatness(u, budget=spec.budget, K=depth or spec.measure.depth, mode="measure",
                                      theta=spec.measure.theta, point=X, tol=tol)
                result.traces[(label, "measure")] = tr
                entry["traces"]["measure"] = tr.summary()
            except (ResolutionError, ValueError) as exc:
                _record(result, f"measure:{label}", exc)
        if "cascade" in stages and spec.measure.cascade and X == center and spec.mu is None:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", ThetaWarning)
                    theta, _ = select_theta_delta(spec.budget.Theta, spec.budget.alpha_F, spec.budget.beta)
                K = depth or spec.measure.cascade_depth or depth_cap(grid, theta)
                tr = iterate_flatness(u, scn.operator, scn.source_field, spec.budget, K=K, mode="cascade", tol=tol)
                result.traces[(label, "cascade")] = tr
                entry["traces"]["cascade"] = tr.summary()
            except ThetaWarning as exc:
                _record(result, f"cascade:{label}", SpecError(str(exc)))
            except (ResolutionError, ValueError) as exc:
                _record(result, f"cascade:{label}", exc)
        primary = entry["traces"].get("measure") or entry["traces"].get("cascade")
        entry["alpha_hat"] = primary["alpha_hat"] if primary else None
        entry["C_hat"] = primary["C_hat"] if primary else None


def run_experiment(spec: ScenarioSpec, out=None, stages=STAGES, depth=None, tol=None) -> ExperimentResult:
    """Run the requested stages and persist under ``out`` when given.

    Stage failures are recorded in ``result.errors`` with a stage tag; the
    caller maps them to exit codes.
    """
    stages = tuple(stages)
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown stages {sorted(unknown)}")
    tol = spec.solver.tol if tol is None else tol
    result = ExperimentResult(spec)
    t0 = time.perf_counter()
    try:
        scn = build_scenario(spec)
    except SpecError as exc:
        _record(result, "build", exc)
        return _finish(result, out)
    result.timings["build"] = time.perf_counter() - t0

    if "hypotheses" in stages:
        t = time.perf_counter()
        try:
            _hypotheses_stage(scn, result)
        except (ResolutionError, ValueError) as exc:
            _record(result, "hypotheses", exc)
        result.timings["hypotheses"] = time.perf_counter() - t

    needs_u = any(s in stages for s in ("solve", "measure", "cascade"))
    if needs_u:
        t = time.perf_counter()
        try:
            _solve_stage(scn, result, tol)
        except (SpecError, NonConvergenceError) as exc:
            _record(result, "solve", exc)
        result.timings["solve"] = time.perf_counter() - t

    if result.solution is not None and any(s in stages for s in ("measure", "cascade")):
        t = time.perf_counter()
        _measure_stages(scn, result, stages, tol, depth)
        result.timings["measure"] = time.perf_counter() - t
    result.timings["total"] = time.perf_counter() - t0
    return _finish(result, out)


# ---------------------------------------------------------------------------
# persistence


def _trace_csv(tr: FlatnessTrace) -> str:
    rows = tr.rows()
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else repr(float(v)) if k != "k" else v) for k, v in r.items()})
    return buf.getvalue()


def _plot_dat(tr: FlatnessTrace) -> str:
    lines = ["# log_radius log_error"]
    for r, e in zip(tr.radii, tr.errors):
        if e > 0:
            lines.append(f"{math.log(r)!r} {math.log(e)!r}")
    return "\n".join(lines) + "\n"


def _finish(result, out):
    if out is None:
        return result
    stamp = _dt.datetime.now().strftime("%Y%m%dT%H%M%S%f")
    d = Path(out) / result.spec.name / stamp
    d.mkdir(parents=True, exist_ok=False)
    result.directory = d
    (d / "result.json").write_text(result.to_json())
    (d / "timings.json").write_text(json.dumps(result.timings, indent=2, sort_keys=True) + "\n")
    if result.solution is not None:
        np.save(d / "solution.npy", result.solution.values)
    for (label, mode), tr in sorted(result.traces.items()):
        (d / f"trace_{label}_{mode}.csv").write_text(_trace_csv(tr))
        (d / f"plot_{label}_{mode}.dat").write_text(_plot_dat(tr))
    emit_report(result)
    return result


def load_result(directory) -> ExperimentResult:
    """Rebuild an :class:`ExperimentResult` (without traces) from disk."""
    d = Path(directory)
    payload = json.loads((d / "result.json").read_text())
    res = ExperimentResult(ScenarioSpec.from_dict(payload["spec"]), payload["solve"], payload["hypotheses"],
                           payload["points"], payload["errors"], directory=d)
    timings = d / "timings.json"
    if timings.exists():
        res.timings = json.loads(timings.read_text())
    return res


def _read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [float(r["radius"]) for r in rows], [float(r["sup_error"]) for r in rows]


def revalidate(directory) -> list:
    """Independent checks on a persisted result; returns a list of problems.

    Recomputes the residual of the stored solution, checks that trace radii
    decrease strictly and refits every exponent from its CSV.
    """
    d = Path(directory)
    problems = []
    res = load_result(d)
    spec = res.spec
    if res.solve is not None and (d / "solution.npy").exists():
        scn = build_scenario(spec, validate=False)
        u = GridFunction(scn.grid, np.load(d / "solution.npy"))
        tol = float(res.solve["tol"])
        if spec.mu is not None:
            r = complementarity_residual(scn.operator, u, spec.mu)
        else:
            r = residual(scn.operator, u, scn.problem.source)
        if not r <= tol:
            problems.append(f"residual {r:.3e} exceeds tol {tol:.1e}")
    for p in res.points:
        for mode, summ in p["traces"].items():
            path = d / f"trace_{p['label']}_{mode}.csv"
            if not path.exists():
                problems.append(f"missing {path.name}")
                continue
            radii, errors = _read_trace_csv(path)
            if any(b >= a for a, b in zip(radii, radii[1:])):
                problems.append(f"{path.name}: radii not strictly decreasing")
            fit = fit_decay(radii, errors, float(summ["noise_floor"]))
            want = _unnum(summ["alpha_hat"])
            same = (math.isnan(fit.alpha) and math.isnan(want)) or fit.alpha == want or abs(fit.alpha - want) <= 1e-12
            if not same:
                problems.append(f"{path.name}: refit exponent {fit.alpha!r} != stored {want!r}")
    return problems


# ---------------------------------------------------------------------------
# comparison and reports


@dataclass
class ComparisonTable:
    rows: list

    COLUMNS = ("scenario", "point", "hessian_norm", "alpha_hat", "C_hat", "slope")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r[c] for c in self.COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [list(self.COLUMNS)] + [[_fmt(r[c]) for c in self.COLUMNS] for r in self.rows]
        widths = [max(len(row[j]) for row in cells) for j in range(len(self.COLUMNS))]
        return "\n".join("  ".join(s.ljust(w) for s, w in zip(row, widths)).rstrip() for row in cells) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def compare_points(results) -> ComparisonTable:
    """One row per marked point with a fitted exponent, sorted by ``alpha_hat``.

    Accepts :class:`ExperimentResult` objects or result directories.  The
    sort is stable and puts undetermined exponents last.
    """
    results = list(results)
    if not results:
        warnings.warn("compare_points called with no results", stacklevel=2)
        return ComparisonTable([])
    rows = []
    for res in results:
        if not isinstance(res, ExperimentResult):
            res = load_result(res)
        fitted = [p for p in res.points if p.get("alpha_hat") is not None]
        if not fitted:
            raise ValueError(f"result {res.spec.name!r} has no marked point with a fitted exponent")
        for p in fitted:
            a = _unnum(p["alpha_hat"])
            rows.append({
                "scenario": res.spec.name,
                "point": p["label"] + "(" + ",".join(f"{x:g}" for x in p["point"]) + ")",
                "hessian_norm": float(p["hessian_norm"]),
                "alpha_hat": a,
                "C_hat": _unnum(p["C_hat"]),
                "slope": 2.0 + a,
            })
    rows.sort(key=lambda r: (math.isnan(r["alpha_hat"]), 0.0 if math.isnan(r["alpha_hat"]) else r["alpha_hat"]))
    return ComparisonTable(rows)


def emit_report(result: ExperimentResult, path=None) -> str:
    """Human-readable summary; written to ``report.txt`` of a persisted result."""
    spec = result.spec
    b = spec.budget
    lines = [f"scenario {spec.name}  (d = {spec.dimension}, m = {spec.m}, operator = {spec.operator.kind})"]
    if result.solve:
        s = result.solve
        lines.append(f"solve: method {s['method']}, iterations {s['iterations']}, "
                     f"residual {_unnum(s['residual']):.3e}, converged {s['converged']}")
    hyp = result.hypotheses
    if hyp:
        lines.append("hypotheses")
        e = hyp["ellipticity"]
        lines.append(f"  (H0) sampled increment ratios in [{_unnum(e['lambda_star']):.4g}, "
                     f"{_unnum(e['Lambda_star']):.4g}], declared lambda = {e['declared'][0]:g}, "
                     f"Lambda = {e['declared'][1]:g}: {'holds' if e['holds'] else 'VIOLATED'}")
        o = hyp["oscillation"]
        lines.append(f"  [F]_(n,eps_bar) = {_unnum(o['seminorm']):.4g}, fitted exponent "
                     f"{_unnum(o['fitted_exponent']):.4g} vs declared eps_bar = {o['declared']:g}")
        f = hyp["source"]
        lines.append(f"  [f]_(n,gamma) = {_unnum(f['seminorm']):.4g}, fitted exponent "
                     f"{_unnum(f['fitted_exponent']):.4g} vs declared gamma = {f['declared']:g}")
        if "dini" in hyp:
            dn = hyp["dini"]
            tail = "" if dn["linear_estimate_applicable"] else "; linear-coefficient estimate inapplicable"
            lines.append(f"  Dini integral {_unnum(dn['value']):.4g}: {dn['verdict']}{tail}")
    for p in result.points:
        lines.append(f"point {p['label']} at {tuple(p['point'])}: |D2u| = {_unnum(p['hessian_norm']):.3e}")
        for mode in sorted(p["traces"]):
            tr = result.traces.get((p["label"], mode))
            summ = p["traces"][mode]
            flag = " (truncated)" if summ["truncated"] else ""
            lines.append(f"  {mode} trace, theta = {_unnum(summ['theta']):.4g}, depth {summ['depth']}{flag}")
            if tr is not None:
                lines.append("    k  radius        sup_error     frozen_gap    hess0")
                for st in tr.steps:
                    fg = "-" if st.frozen_gap is None else f"{st.frozen_gap:.3e}"
                    h0 = "-" if st.hessian_at_center is None else f"{st.hessian_at_center:.3e}"
                    lines.append(f"    {st.k:<2d} {st.radius:<13.6g} {st.sup_error:<13.4e} {fg:<13} {h0}")
            a = _unnum(summ["alpha_hat"])
            note = f" ({summ['fit_flag']})" if summ["fit_flag"] else ""
            lines.append(f"  verdict: measured α̂ = {a:.4g} vs predicted min{{α_F⁻, γ}} = "
                         f"{b.predicted_exponent:g}{note}")
    for e in result.errors:
        lines.append(f"error [{e['stage']}] {e['kind']}: {e['message']}")
    text = "\n".join(lines) + "\n"
    target = Path(path) if path is not None else (result.directory / "report.txt" if result.directory else None)
    if target is not None:
        target.write_text(text)
    return text


# ---------------------------------------------------------------------------
# sweeps


def _sweep_one(args):
    path, out, tol = args
    try:
        spec = ScenarioSpec.load(path)
    except SpecError as exc:
        return str(path), EXIT_SPEC, None, str(exc)
    res = run_experiment(spec, out=out, tol=tol)
    return str(path), res.exit_code, str(res.directory), None


def run_sweep(spec_dir, out, jobs=1, tol=None):
    """Run every ``*.json`` spec in ``spec_dir``; one experiment per worker.

    Returns ``(outcomes, table)`` where ``outcomes`` lists
    ``(spec path, exit code, result dir, message)`` in path order.
    """
    paths = sorted(Path(spec_dir).glob("*.json"))
    work = [(p, out, tol) for p in paths]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_sweep_one, work))
    else:
        outcomes = [_sweep_one(w) for w in work]
    done = []
    for _, code, directory, _ in outcomes:
        if directory is None:
            continue
        res = load_result(directory)
        if any(p.get("alpha_hat") is not None for p in res.points):
            done.append(res)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = compare_points(done)
    if out is not None and done:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "comparison.csv").write_text(table.to_csv())
        (Path(out) / "comparison.txt").write_text(table.to_text())
    return outcomes, table
