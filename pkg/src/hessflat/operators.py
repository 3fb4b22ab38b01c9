"""Uniformly elliptic operators ``F(X, M)`` and the oscillation seminorms.

Three kinds are provided: :class:`Linear` (``trace(A(X) M)``), :class:`Pucci`
extremal operators, and :class:`Bellman` (finite infimum of affine-linear
pieces).  All of them evaluate on stacks: ``X`` has shape ``(..., d)`` and
``M`` shape ``(..., d, d)``.

Matrix norms are spectral norms throughout.  Declared ellipticity pairs
``(lam, Lam)`` bound the spectra of the coefficient matrices; under the
spectral norm the increment bound then reads
``lam*|P| <= F(X, M+P) - F(X, M) <= d*Lam*|P|`` for ``P >= 0``, which is what
:func:`check_ellipticity` tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from hessflat.grid import Cube, GridFunction, UniformGrid, ln_average, spectral_norm, sym


@dataclass(frozen=True)
class EllipticityPair:
    lam: float
    Lam: float

    def __post_init__(self):
        if not (0 < self.lam <= self.Lam):
            raise ValueError(f"need 0 < lambda <= Lambda, got ({self.lam}, {self.Lam})")


# ---------------------------------------------------------------------------
# coefficient fields


@dataclass(frozen=True)
class CoefficientField:
    """Matrix-valued map ``X -> A(X)``.

    ``bounds`` brackets the eigenvalues of ``A`` on the unit cube and
    ``modulus`` is ``t -> sup_{|X| <= t} |A(X) - A(0)|`` in the nuclear norm,
    when known in closed form.
    """

    fn: Callable = field(repr=False, compare=False)
    dim: int
    name: str = "custom"
    params: tuple = ()
    bounds: tuple = (1.0, 1.0)
    modulus: Callable | None = field(default=None, repr=False, compare=False)
    is_constant: bool = False
    scale: float = 1.0

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        A = np.asarray(self.fn(self.scale * X), dtype=float)
        return np.broadcast_to(A, X.shape[:-1] + (self.dim, self.dim))

    def at_origin(self) -> np.ndarray:
        return np.array(self(np.zeros(self.dim)))

    def rescaled(self, t: float) -> "CoefficientField":
        """The field ``X -> A(t X)``."""
        if self.is_constant:
            return self
        return replace(self, scale=self.scale * t)

    def frozen(self) -> "CoefficientField":
        return constant_field(self.at_origin(), name=f"frozen({self.name})")


def constant_field(A, name="constant") -> CoefficientField:
    A = sym(np.array(A, dtype=float))
    ev = np.linalg.eigvalsh(A)
    return CoefficientField(
        fn=lambda X, _A=A: _A,
        dim=A.shape[0],
        name=name,
        bounds=(float(ev[0]), float(ev[-1])),
        modulus=lambda t: 0.0 * np.asarray(t, dtype=float),
        is_constant=True,
    )


def identity_field(d: int) -> CoefficientField:
    return constant_field(np.eye(d), name="identity")


def holder_iso(d: int, c: float, eps_bar: float) -> CoefficientField:
    """``A(X) = (1 + c |X|^eps_bar) I``."""
    if c < 0:
        raise ValueError("amplitude c must be nonnegative")
    if c == 0:
        return replace(identity_field(d), name="holder_iso", params=(("c", c), ("eps_bar", eps_bar)))

    def fn(X):
        r = np.linalg.norm(X, axis=-1)
        return (1.0 + c * r**eps_bar)[..., None, None] * np.eye(d)

    return CoefficientField(
        fn=fn,
        dim=d,
        name="holder_iso",
        params=(("c", c), ("eps_bar", eps_bar)),
        bounds=(1.0, 1.0 + c * d ** (eps_bar / 2)),
        modulus=lambda t: d * c * np.asarray(t, dtype=float) ** eps_bar,
    )


def holder_even(d: int, c: float, eps_bar: float, kappa: float = 0.5) -> CoefficientField:
    """``A(X) = I + c |X|^eps_bar (I + kappa n n^T)`` with ``n = X/|X|``.

    Even in ``X``; diagonally dominant for ``c >= 0`` and ``-1 < kappa <= 1``.
    """
    if c < 0:
        raise ValueError("amplitude c must be nonnegative")
    if not -1 < kappa <= 1:
        raise ValueError("kappa must lie in (-1, 1]")

    def fn(X):
        r = np.linalg.norm(X, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        n = X / safe[..., None]
        E = np.eye(d) + kappa * n[..., :, None] * n[..., None, :]
        return np.eye(d) + (c * r**eps_bar)[..., None, None] * E

    top = c * d ** (eps_bar / 2)
    return CoefficientField(
        fn=fn,
        dim=d,
        name="holder_even",
        params=(("c", c), ("eps_bar", eps_bar), ("kappa", kappa)),
        bounds=(1.0, 1.0 + top * max(1.0, 1 + kappa)),
        modulus=lambda t: (d + kappa) * c * np.asarray(t, dtype=float) ** eps_bar,
        is_constant=(c == 0),
    )


def log_modulus(t, p: float):
    """``1 / log(e / t)^p`` for ``t`` in ``(0, 1]``, zero at ``t = 0``."""
    t = np.minimum(np.asarray(t, dtype=float), 1.0)
    with np.errstate(divide="ignore"):
        out = np.where(t > 0, 1.0 / np.log(np.e / np.where(t > 0, t, 1.0)) ** p, 0.0)
    return out


def dini_log(d: int, c: float, p: float) -> CoefficientField:
    """``A(X) = (1 + c / log(e/|X|)^p) I``; Dini continuous iff ``p > 1``."""

    def fn(X):
        r = np.linalg.norm(X, axis=-1)
        return (1.0 + c * log_modulus(r, p))[..., None, None] * np.eye(d)

    return CoefficientField(
        fn=fn,
        dim=d,
        name="dini_log",
        params=(("c", c), ("p", p)),
        bounds=(1.0, 1.0 + c),
        modulus=lambda t: d * c * log_modulus(t, p),
        is_constant=(c == 0),
    )


FIELDS = {
    "identity": lambda d: identity_field(d),
    "constant": lambda d, matrix: constant_field(matrix),
    "holder_iso": holder_iso,
    "holder_even": holder_even,
    "dini_log": dini_log,
}


# ---------------------------------------------------------------------------
# operators


class EllipticOperator:
    dim: int
    ellipticity: EllipticityPair
    #: True when ``beta_F`` is available in closed form
    beta_exact = False

    def evaluate(self, X, M):
        raise NotImplementedError

    def frozen(self) -> "EllipticOperator":
        raise NotImplementedError

    def rescaled(self, t: float, s: float) -> "EllipticOperator":
        """``(X, M) -> F(t X, s M) / s``."""
        raise NotImplementedError

    @property
    def is_frozen(self) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class Linear(EllipticOperator):
    field: CoefficientField
    ellipticity: EllipticityPair | None = None
    beta_exact = True

    def __post_init__(self):
        if self.ellipticity is None:
            object.__setattr__(self, "ellipticity", EllipticityPair(*self.field.bounds))

    @property
    def dim(self):
        return self.field.dim

    def evaluate(self, X, M):
        return np.einsum("...ij,...ij->...", self.field(X), np.asarray(M, dtype=float))

    def frozen(self):
        return Linear(self.field.frozen(), self.ellipticity)

    def rescaled(self, t, s):
        # homogeneous of degree one in M: the s factors cancel
        return Linear(self.field.rescaled(t), self.ellipticity)

    @property
    def is_frozen(self):
        return self.field.is_constant


@dataclass(frozen=True)
class Pucci(EllipticOperator):
    sign: str
    ellipticity: EllipticityPair
    dim: int

    def __post_init__(self):
        if self.sign not in ("plus", "minus"):
            raise ValueError(f"Pucci sign must be 'plus' or 'minus', got {self.sign!r}")

    def evaluate(self, X, M):
        ev = np.linalg.eigvalsh(sym(M))
        pos = np.sum(np.maximum(ev, 0.0), axis=-1)
        neg = np.sum(np.maximum(-ev, 0.0), axis=-1)
        lam, Lam = self.ellipticity.lam, self.ellipticity.Lam
        if self.sign == "plus":
            out = Lam * pos - lam * neg
        else:
            out = lam * pos - Lam * neg
        X = np.asarray(X, dtype=float)
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(out), X.shape[:-1]))

    def frozen(self):
        return self

    def rescaled(self, t, s):
        return self

    @property
    def is_frozen(self):
        return True


@dataclass(frozen=True)
class Bellman(EllipticOperator):
    """``F(X, M) = min_i trace(A_i(X) M) + c_i`` over a finite family."""

    family: tuple
    ellipticity: EllipticityPair | None = None

    def __post_init__(self):
        fam = tuple((f, float(c)) for f, c in self.family)
        if not fam:
            raise ValueError("Bellman family must be nonempty")
        if len({f.dim for f, _ in fam}) != 1:
            raise ValueError("Bellman family members disagree on dimension")
        object.__setattr__(self, "family", fam)
        if self.ellipticity is None:
            lo = min(f.bounds[0] for f, _ in fam)
            hi = max(f.bounds[1] for f, _ in fam)
            object.__setattr__(self, "ellipticity", EllipticityPair(lo, hi))

    @property
    def dim(self):
        return self.family[0][0].dim

    def member_values(self, X, M):
        M = np.asarray(M, dtype=float)
        return np.stack(
            [np.einsum("...ij,...ij->...", f(X), M) + c for f, c in self.family], axis=-1
        )

    def evaluate(self, X, M):
        return np.min(self.member_values(X, M), axis=-1)

    def frozen(self):
        return Bellman(tuple((f.frozen(), c) for f, c in self.family), self.ellipticity)

    def rescaled(self, t, s):
        return Bellman(tuple((f.rescaled(t), c / s) for f, c in self.family), self.ellipticity)

    @property
    def is_frozen(self):
        return all(f.is_constant for f, _ in self.family)


def evaluate(F: EllipticOperator, X, M):
    return F.evaluate(X, M)


def freeze(F: EllipticOperator) -> EllipticOperator:
    """Constant-coefficient operator ``M -> F(0, M)``."""
    return F.frozen()


# ---------------------------------------------------------------------------
# oscillation and seminorms


def default_dictionary(d: int, scales=(1.0, 10.0, 100.0)) -> list:
    mats = []
    for t in scales:
        mats += [t * np.eye(d), -t * np.eye(d)]
        for i in range(d):
            for j in range(i, d):
                E = np.zeros((d, d))
                E[i, j] = 1.0
                E = t * sym(E) if i != j else t * E
                mats += [E, -E]
    return mats


def beta_F(F: EllipticOperator, X, dictionary=None):
    """Oscillation ``sup_N |F(X,N) - F(0,N)| / (1 + |N|)`` at points ``X``.

    Exact (nuclear norm of ``A(X) - A(0)``) for :class:`Linear`; otherwise the
    maximum over ``dictionary``, which is a lower bound for the supremum.
    """
    X = np.asarray(X, dtype=float)
    if isinstance(F, Linear):
        D = F.field(X) - F.field.at_origin()
        return np.sum(np.abs(np.linalg.eigvalsh(sym(D))), axis=-1)
    if dictionary is None:
        dictionary = default_dictionary(F.dim)
    if len(dictionary) == 0:
        raise ValueError("beta_F needs a nonempty dictionary for non-linear operators")
    zero = np.zeros(F.dim)
    best = np.zeros(X.shape[:-1])
    for N in dictionary:
        N = np.asarray(N, dtype=float)
        gap = np.abs(F.evaluate(X, N) - F.evaluate(zero, N))
        best = np.maximum(best, gap / (1.0 + spectral_norm(N)))
    return best


class SeminormEstimate(NamedTuple):
    seminorm: float
    fitted_exponent: float


def _default_m(d):
    return {1: 801, 2: 161, 3: 41}.get(d, 21)


def _fit_decay(averages, radii, exponent):
    averages = np.asarray(averages, dtype=float)
    radii = np.asarray(radii, dtype=float)
    seminorm = float(np.max(averages / radii**exponent))
    if np.all(averages > 0):
        slope = float(np.polyfit(np.log(radii), np.log(averages), 1)[0])
    else:
        slope = math.nan
    return SeminormEstimate(seminorm, slope)


def _check_radii(radii):
    radii = [float(r) for r in radii]
    if len(radii) < 3:
        raise ValueError("need at least three radii")
    if any(r <= 0 or r > 1 for r in radii):
        raise ValueError("radii must lie in (0, 1]")
    return radii


def estimate_oscillation_seminorm(
    F: EllipticOperator, eps_bar, radii, n=None, dictionary=None, m=None
) -> SeminormEstimate:
    """L^n cube averages of ``beta_F`` against ``r^eps_bar``.

    ``seminorm = max_r a_r / r^eps_bar`` and ``fitted_exponent`` is the
    log-log slope of ``a_r`` versus ``r``.
    """
    radii = _check_radii(radii)
    d = F.dim
    n = d if n is None else n
    grid = UniformGrid(Cube.unit(d), m or _default_m(d))
    beta = GridFunction(grid, beta_F(F, grid.coords(), dictionary))
    averages = [ln_average(beta, Cube.unit(d).scaled(r), n) for r in radii]
    return _fit_decay(averages, radii, eps_bar)


def estimate_source_seminorm(f: GridFunction, gamma, radii, n=None) -> SeminormEstimate:
    """Same recipe for ``|f - f(0)|``, the center value playing ``f(0)``."""
    radii = _check_radii(radii)
    d = f.grid.dim
    n = d if n is None else n
    g = f - f.center_value
    c = f.grid.cube
    averages = [ln_average(g, Cube(c.center, r * c.halfwidth), n) for r in radii]
    return _fit_decay(averages, radii, gamma)


class EllipticityReport(NamedTuple):
    holds: bool
    lambda_star: float
    Lambda_star: float


def random_symmetric(rng, d, size=None, scale=1.0):
    shape = (d, d) if size is None else (size, d, d)
    return sym(rng.normal(scale=scale, size=shape))


def random_psd(rng, d, size=None):
    shape = (d, d) if size is None else (size, d, d)
    G = rng.normal(size=shape)
    return G @ np.swapaxes(G, -1, -2)


def increment_ratios(F: EllipticOperator, X, M, P):
    """``(F(X, M+P) - F(X, M)) / |P|`` for stacked samples."""
    return (F.evaluate(X, M + P) - F.evaluate(X, M)) / spectral_norm(P)


def check_ellipticity(F: EllipticOperator, trials=200, seed=0, cube: Cube | None = None, tol=1e-9):
    """Sample the increment ratio over random ``X``, ``M`` and ``P >= 0``."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    d = F.dim
    cube = cube or Cube.unit(d)
    rng = np.random.default_rng(seed)
    X = np.asarray(cube.center) + cube.halfwidth * rng.uniform(-1, 1, size=(trials, d))
    M = random_symmetric(rng, d, trials, scale=3.0)
    P = random_psd(rng, d, trials)
    ratios = increment_ratios(F, X, M, P)
    lo, hi = float(ratios.min()), float(ratios.max())
    lam, Lam = F.ellipticity.lam, F.ellipticity.Lam
    return EllipticityReport(lo >= lam - tol and hi <= d * Lam + tol, lo, hi)
