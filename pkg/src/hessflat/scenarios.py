"""Declarative scenarios: JSON schema, registries and problem assembly.

A scenario names a coefficient field, a source and boundary data by registry
id.  Odd boundary data combined with even coefficients make the discrete
solution odd, so its centered Hessian vanishes at the center: that is how
Hessian-degenerate points are manufactured.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hessflat.errors import SpecError
from hessflat.flatness import RegularityBudget
from hessflat.grid import Cube, GridFunction, UniformGrid, sample
from hessflat.operators import (
    FIELDS,
    Bellman,
    EllipticityPair,
    Linear,
    Pucci,
    check_ellipticity,
)
from hessflat.solver import DEFAULT_TOL, DirichletProblem, Stencil

# ---------------------------------------------------------------------------
# registries: id -> factory(d, **params) -> callable on (..., d) arrays


def _x(X, i):
    return np.asarray(X, dtype=float)[..., i]


def _zero(d):
    return lambda X: np.zeros(np.shape(X)[:-1])


def _constant(d, value=0.0):
    return lambda X: np.full(np.shape(X)[:-1], float(value))


def _power(d, gamma, amp=1.0):
    return lambda X: amp * np.linalg.norm(X, axis=-1) ** gamma


def _linear(d, coeffs):
    b = np.asarray(coeffs, dtype=float)
    if b.shape != (d,):
        raise SpecError(f"linear source needs {d} coefficients")
    return lambda X: np.asarray(X, dtype=float) @ b


def _sin_product(d, k=1.0):
    return lambda X: np.prod(np.sin(k * math.pi * np.asarray(X, dtype=float)), axis=-1)


def _sin_product_laplacian(d, k=1.0):
    # Laplacian of prod sin(k pi x_i)
    return lambda X: -d * (k * math.pi) ** 2 * np.prod(np.sin(k * math.pi * np.asarray(X, dtype=float)), axis=-1)


def _odd_cubic(d):
    if d < 2:
        raise SpecError("odd_cubic needs dimension >= 2")
    return lambda X: _x(X, 0) ** 3 - 3 * _x(X, 0) * _x(X, 1) ** 2


def _generic_quad(d):
    if d < 2:
        raise SpecError("generic_quad needs dimension >= 2")
    return lambda X: _x(X, 0) ** 2 - _x(X, 1) ** 2 + 0.3 * _x(X, 0)


def _harmonic_quad(d):
    if d < 2:
        raise SpecError("harmonic_quad needs dimension >= 2")
    return lambda X: _x(X, 0) ** 2 - _x(X, 1) ** 2


def _affine(d, a=0.0, b=None):
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
    return lambda X: a + np.asarray(X, dtype=float) @ b


def quartic_profile(s, a):
    """Dead-core profile ``(s - a)_+^4 / 144`` solving ``phi'' = phi^(1/2)``."""
    return np.maximum(np.asarray(s, dtype=float) - a, 0.0) ** 4 / 144.0


def _quartic_profile(d, a=0.5, axis=0):
    return lambda X: quartic_profile(np.abs(_x(X, axis)), a)


SOURCES = {
    "zero": _zero,
    "constant": _constant,
    "power": _power,
    "linear": _linear,
    "sin_product_laplacian": _sin_product_laplacian,
}

BOUNDARIES = {
    "zero": _zero,
    "constant": _constant,
    "odd_cubic": _odd_cubic,
    "generic_quad": _generic_quad,
    "harmonic_quad": _harmonic_quad,
    "affine": _affine,
    "sin_product": _sin_product,
    "quartic_profile": _quartic_profile,
}


def _lookup(registry, kind, ref, d):
    if ref.id not in registry:
        raise SpecError(f"unknown {kind} id {ref.id!r}; known: {sorted(registry)}")
    try:
        return registry[ref.id](d, **ref.params)
    except TypeError as exc:
        raise SpecError(f"bad parameters for {kind} {ref.id!r}: {exc}") from None


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class Ref:
    id: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FamilyMember:
    field: Ref
    shift: float = 0.0


@dataclass(frozen=True)
class OperatorSpec:
    kind: str = "linear"
    field: Ref | None = None
    family: tuple = ()
    sign: str | None = None
    ellipticity: tuple | None = None


@dataclass(frozen=True)
class SolverSettings:
    tol: float = DEFAULT_TOL
    max_iter: int = 50
    damping: float = 1.0


@dataclass(frozen=True)
class MeasureSettings:
    theta: float = 0.5
    depth: int = 5
    cascade: bool = True
    cascade_depth: int | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    dimension: int
    operator: OperatorSpec
    boundary: Ref
    m: int
    source: Ref = Ref("zero")
    budget: RegularityBudget = RegularityBudget()
    solver: SolverSettings = SolverSettings()
    measure: MeasureSettings = MeasureSettings()
    marked_points: tuple = ()
    mu: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.name or not all(ch.isalnum() or ch in "-_." for ch in self.name):
            raise SpecError(f"scenario name {self.name!r} must be a plain identifier")
        if not 1 <= self.dimension <= 3:
            raise SpecError("dimension must be 1, 2 or 3")
        if self.m < 5 or self.m % 2 == 0:
            raise SpecError(f"m must be odd and >= 5, got {self.m}")
        if self.operator.kind not in ("linear", "bellman", "pucci"):
            raise SpecError(f"unknown operator kind {self.operator.kind!r}")
        if self.mu is not None and not 0 < self.mu < 1:
            raise SpecError("mu must lie in (0, 1)")
        pts = tuple(tuple(float(x) for x in p) for p in self.marked_points) or ((0.0,) * self.dimension,)
        if any(len(p) != self.dimension for p in pts):
            raise SpecError("marked points must have the scenario dimension")
        object.__setattr__(self, "marked_points", pts)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        return _from_plain(cls, data, "spec")

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"spec is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        return cls.from_json(Path(path).read_text())


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


_NESTED = {
    ("ScenarioSpec", "operator"): OperatorSpec,
    ("ScenarioSpec", "boundary"): Ref,
    ("ScenarioSpec", "source"): Ref,
    ("ScenarioSpec", "budget"): RegularityBudget,
    ("ScenarioSpec", "solver"): SolverSettings,
    ("ScenarioSpec", "measure"): MeasureSettings,
    ("OperatorSpec", "field"): Ref,
    ("FamilyMember", "field"): Ref,
}


def _from_plain(cls, data, path):
    if not isinstance(data, dict):
        raise SpecError(f"{path}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise SpecError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls.__name__, key))
        if sub is not None and value is not None:
            value = _from_plain(sub, value, f"{path}.{key}")
        elif cls is OperatorSpec and key == "family":
            value = tuple(_from_plain(FamilyMember, v, f"{path}.family[{i}]") for i, v in enumerate(value))
        elif isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except SpecError:
        raise
    except (TypeError, ValueError) as exc:
        raise SpecError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# assembly


def build_field(ref: Ref, d: int):
    return _lookup(FIELDS, "coefficient field", ref, d)


def build_operator(spec: OperatorSpec, d: int):
    ell = EllipticityPair(*spec.ellipticity) if spec.ellipticity is not None else None
    if spec.kind == "linear":
        if spec.field is None:
            raise SpecError("linear operator needs a coefficient field")
        return Linear(build_field(spec.field, d), ell)
    if spec.kind == "bellman":
        if not spec.family:
            raise SpecError("bellman operator needs a nonempty family")
        fam = tuple((build_field(mem.field, d), mem.shift) for mem in spec.family)
        return Bellman(fam, ell)
    if ell is None:
        raise SpecError("pucci operator needs explicit ellipticity constants")
    return Pucci(spec.sign or "plus", ell, d)


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    operator: object
    source_field: object
    boundary_field: object
    grid: UniformGrid
    problem: DirichletProblem | None
    marked_nodes: tuple


def build_scenario(spec: ScenarioSpec, validate=True) -> Scenario:
    """Materialize operator, source, boundary data and grid.

    With ``validate`` the operator is sampled for ellipticity and every
    linear piece is checked for diagonal dominance on the grid.
    """
    d = spec.dimension
    try:
        F = build_operator(spec.operator, d)
    except ValueError as exc:
        if isinstance(exc, SpecError):
            raise
        raise SpecError(str(exc)) from None
    f = _lookup(SOURCES, "source", spec.source, d)
    g = _lookup(BOUNDARIES, "boundary", spec.boundary, d)
    grid = UniformGrid(Cube.unit(d), spec.m)
    if validate:
        rep = check_ellipticity(F, trials=200, seed=spec.seed)
        if not rep.holds:
            raise SpecError(
                f"operator fails ellipticity: sampled ratios in [{rep.lambda_star:.4g}, "
                f"{rep.Lambda_star:.4g}] vs declared ({F.ellipticity.lam}, {F.ellipticity.Lam})"
            )
        fields = [F.field] if isinstance(F, Linear) else [fl for fl, _ in getattr(F, "family", ())]
        for fl in fields:
            Stencil(fl, grid)  # raises NonMonotoneStencilError
    nodes = []
    for p in spec.marked_points:
        try:
            node = grid.node_of(p)
        except Exception:
            raise SpecError(f"marked point {p} is not a grid node") from None
        if any(i < 2 or i > grid.m - 3 for i in node):
            raise SpecError(f"marked point {p} is too close to the boundary")
        nodes.append(node)
    problem = None
    if not isinstance(F, Pucci):
        source = sample(f, grid.cube, grid.m)
        problem = DirichletProblem(F, source, g)
    return Scenario(spec, F, f, g, grid, problem, tuple(nodes))


def example_spec(name="illustration_degenerate", boundary="odd_cubic", m=257, c=0.5, eps_bar=0.1,
                 kappa=0.5, Theta=2**-0.5, **overrides) -> ScenarioSpec:
    """The desk-scale version of the rough-coefficient illustration.

    ``Theta = 2^(-1/2)`` makes the selected scale ``theta = 1/2``, which
    keeps cascade cubes aligned with dyadic grids.
    """
    params = {"c": c, "eps_bar": eps_bar, "kappa": kappa}
    kw = dict(
        name=name,
        dimension=2,
        operator=OperatorSpec("linear", Ref("holder_even", params)),
        boundary=Ref(boundary),
        m=m,
        budget=RegularityBudget(Theta=Theta, alpha_F=1.0, beta=0.5, gamma=0.99, eps_bar=eps_bar),
    )
    kw.update(overrides)
    return ScenarioSpec(**kw)
