"""Cubes, uniform grids and the discrete calculus used by every estimate.

Conventions
-----------
* ``Cube(center, r)`` is the open cube ``center + (-r, r)^d``; node selection
  treats it as closed with tolerance ``h/2``.
* Grids have an odd number ``m`` of points per axis so the cube center is a
  node.  Node coordinates are built from integer offsets so that the grid is
  exactly point-symmetric about its center in floating point.
* Arrays use ``'ij'`` indexing: ``values[i0, i1, ...]`` lives at
  ``(axes[0][i0], axes[1][i1], ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hessflat.errors import ResolutionError, StencilError


@dataclass(frozen=True)
class Cube:
    center: tuple
    halfwidth: float

    def __post_init__(self):
        c = tuple(float(x) for x in np.atleast_1d(self.center))
        if len(c) < 1:
            raise ValueError("cube needs dimension >= 1")
        if not self.halfwidth > 0:
            raise ValueError(f"halfwidth must be positive, got {self.halfwidth}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "halfwidth", float(self.halfwidth))

    @classmethod
    def unit(cls, d: int) -> "Cube":
        return cls((0.0,) * d, 1.0)

    @property
    def dim(self) -> int:
        return len(self.center)

    def scaled(self, factor: float) -> "Cube":
        """Concentric cube with halfwidth multiplied by ``factor``."""
        return Cube(self.center, self.halfwidth * factor)

    def contains(self, X, tol=0.0):
        X = np.asarray(X, dtype=float)
        dist = np.abs(X - np.asarray(self.center))
        return np.all(dist <= self.halfwidth + tol, axis=-1)


@dataclass(frozen=True)
class UniformGrid:
    cube: Cube
    m: int

    def __post_init__(self):
        if self.m < 5 or self.m % 2 == 0:
            raise ValueError(f"points per axis must be odd and >= 5, got {self.m}")

    @property
    def dim(self) -> int:
        return self.cube.dim

    @property
    def spacing(self) -> float:
        return 2.0 * self.cube.halfwidth / (self.m - 1)

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.dim

    @property
    def size(self) -> int:
        return self.m**self.dim

    @property
    def center_index(self) -> tuple:
        return ((self.m - 1) // 2,) * self.dim

    @property
    def axes(self) -> list:
        # integer offsets keep x(i) == -x(m-1-i) exactly about the center
        offs = np.arange(self.m) * 2 - (self.m - 1)
        r = self.cube.halfwidth
        return [c + offs * r / (self.m - 1) for c in self.cube.center]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``grid.shape + (d,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def point(self, node) -> np.ndarray:
        axes = self.axes
        return np.array([axes[i][j] for i, j in enumerate(node)])

    def node_of(self, X) -> tuple:
        """Index of the node at point ``X``; raises if ``X`` is off-grid."""
        X = np.asarray(X, dtype=float)
        h = self.spacing
        rel = (X - np.asarray(self.cube.center) + self.cube.halfwidth) / h
        idx = np.rint(rel).astype(int)
        if np.any(np.abs(rel - idx) > 1e-6) or np.any(idx < 0) or np.any(idx >= self.m):
            raise ResolutionError(f"point {tuple(X)} is not a node of the grid")
        return tuple(int(i) for i in idx)

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[ax] = 0
            mask[tuple(sl)] = True
            sl[ax] = self.m - 1
            mask[tuple(sl)] = True
        return mask

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def sub_mask(self, sub: Cube) -> np.ndarray:
        """Nodes inside the closed cube ``sub`` (tolerance ``h/2``)."""
        if sub.dim != self.dim:
            raise ValueError("dimension mismatch between grid and subcube")
        return sub.contains(self.coords(), tol=0.5 * self.spacing)

    def subgrid(self, sub: Cube) -> tuple["UniformGrid", tuple]:
        """Grid whose nodes are exactly this grid's nodes in ``sub``.

        Requires ``sub`` centered on a node with halfwidth a whole number of
        spacings.  Returns the subgrid and the slice tuple into this grid.
        """
        h = self.spacing
        n_half = sub.halfwidth / h
        k = int(round(n_half))
        if abs(n_half - k) > 1e-6 * max(1.0, n_half):
            raise ResolutionError(
                f"subcube halfwidth {sub.halfwidth} is not a multiple of spacing {h}"
            )
        if 2 * k + 1 < 5:
            raise ResolutionError(f"subcube of halfwidth {sub.halfwidth} holds fewer than 5 nodes per axis")
        c = self.node_of(sub.center)
        if any(ci - k < 0 or ci + k >= self.m for ci in c):
            raise ResolutionError("subcube leaves the grid")
        slices = tuple(slice(ci - k, ci + k + 1) for ci in c)
        exact_center = tuple(self.point(c))
        return UniformGrid(Cube(exact_center, k * h), 2 * k + 1), slices


@dataclass(frozen=True)
class GridFunction:
    grid: UniformGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.size == self.grid.size:
            vals = vals.reshape(self.grid.shape)
        if vals.shape != self.grid.shape:
            raise ValueError(f"expected {self.grid.shape} values, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(vals))[0])
            raise ValueError(f"non-finite value at node {bad}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __call__(self, node):
        return float(self.values[tuple(node)])

    @property
    def center_value(self) -> float:
        return float(self.values[self.grid.center_index])

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _values_of(other, self.grid))

    def __sub__(self, other):
        return self.with_values(self.values - _values_of(other, self.grid))

    def __mul__(self, scalar):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self.with_values(self.values / float(scalar))

    def __neg__(self):
        return self.with_values(-self.values)

    def restrict(self, sub: Cube) -> "GridFunction":
        g, sl = self.grid.subgrid(sub)
        return GridFunction(g, self.values[sl])


@dataclass(frozen=True)
class AffineFunction:
    """``X -> a + b . X`` in global coordinates."""

    a: float
    b: np.ndarray

    def __post_init__(self):
        b = np.array(self.b, dtype=float).reshape(-1)
        if not (np.isfinite(self.a) and np.all(np.isfinite(b))):
            raise ValueError("affine coefficients must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", b)

    @classmethod
    def zero(cls, d: int) -> "AffineFunction":
        return cls(0.0, np.zeros(d))

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return self.a + X @ self.b

    def __add__(self, other: "AffineFunction") -> "AffineFunction":
        return AffineFunction(self.a + other.a, self.b + other.b)

    def __sub__(self, other: "AffineFunction") -> "AffineFunction":
        return AffineFunction(self.a - other.a, self.b - other.b)


def _values_of(other, grid):
    if isinstance(other, GridFunction):
        if other.grid != grid:
            raise ValueError("grid functions live on different grids")
        return other.values
    if isinstance(other, AffineFunction):
        return other(grid.coords())
    return float(other)


def sym(M) -> np.ndarray:
    """Symmetric part of a (stack of) square matrices."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def spectral_norm(M) -> np.ndarray:
    """Largest |eigenvalue| of symmetric matrices (last two axes)."""
    ev = np.linalg.eigvalsh(sym(M))
    return np.max(np.abs(ev), axis=-1)


def sample(field, cube: Cube, m: int) -> GridFunction:
    """Evaluate ``field`` (callable on ``(..., d)`` arrays) at every node."""
    grid = UniformGrid(cube, m)
    X = grid.coords()
    vals = np.broadcast_to(np.asarray(field(X), dtype=float), grid.shape)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"field is not finite at node {node}, X = {tuple(grid.point(node))}")
    return GridFunction(grid, vals)


def _check_interior(grid, node):
    node = tuple(int(i) for i in node)
    if len(node) != grid.dim:
        raise ValueError("node has wrong dimension")
    if any(i < 1 or i > grid.m - 2 for i in node):
        raise StencilError(f"node {node} is on the boundary; centered stencil out of range")
    return node


def _shift(node, ax, step):
    n = list(node)
    n[ax] += step
    return tuple(n)


def gradient_at(u: GridFunction, node=None) -> np.ndarray:
    """Centered first differences at an interior node (default: center)."""
    g = u.grid
    node = _check_interior(g, g.center_index if node is None else node)
    v, h = u.values, g.spacing
    return np.array(
        [(v[_shift(node, i, 1)] - v[_shift(node, i, -1)]) / (2 * h) for i in range(g.dim)]
    )


def hessian_at(u: GridFunction, node=None) -> np.ndarray:
    """Centered second and cross differences; exactly symmetric output."""
    g = u.grid
    node = _check_interior(g, g.center_index if node is None else node)
    v, h = u.values, g.spacing
    d = g.dim
    H = np.zeros((d, d))
    for i in range(d):
        H[i, i] = (v[_shift(node, i, 1)] + v[_shift(node, i, -1)] - 2 * v[node]) / h**2
        for j in range(i + 1, d):
            pp = v[_shift(_shift(node, i, 1), j, 1)]
            pm = v[_shift(_shift(node, i, 1), j, -1)]
            mp = v[_shift(_shift(node, i, -1), j, 1)]
            mm = v[_shift(_shift(node, i, -1), j, -1)]
            H[i, j] = H[j, i] = ((pp - pm) - (mp - mm)) / (4 * h**2)
    return H


def _select(u: GridFunction, sub: Cube) -> tuple[np.ndarray, np.ndarray]:
    mask = u.grid.sub_mask(sub)
    count = int(mask.sum())
    if count < 3**u.grid.dim:
        raise ResolutionError(
            f"subcube of halfwidth {sub.halfwidth:g} holds {count} nodes, need >= {3 ** u.grid.dim}"
        )
    return mask, u.values[mask]


def sup_norm(u: GridFunction, sub: Cube | None = None) -> float:
    """Max of |u| over nodes in the closed subcube (whole grid if omitted)."""
    vals = u.values if sub is None else _select(u, sub)[1]
    return float(np.max(np.abs(vals)))


def ln_average(g: GridFunction, sub: Cube, n: int) -> float:
    """``(mean over nodes in sub of |g|^n)^(1/n)``."""
    if n < 1:
        raise ValueError("exponent n must be >= 1")
    _, vals = _select(g, sub)
    a = np.abs(vals)
    scale = a.max()
    if scale == 0.0:
        return 0.0
    # factor out the max so high powers neither overflow nor underflow
    return float(scale * np.mean((a / scale) ** n) ** (1.0 / n))


def best_affine_fit(u: GridFunction, sub: Cube) -> AffineFunction:
    """Least-squares affine fit to the node values inside ``sub``."""
    mask, vals = _select(u, sub)
    X = u.grid.coords()[mask]
    c = np.asarray(sub.center)
    Y = (X - c) / sub.halfwidth
    design = np.hstack([np.ones((len(Y), 1)), Y])
    coef, _, rank, _ = np.linalg.lstsq(design, vals, rcond=None)
    if rank < design.shape[1]:
        raise np.linalg.LinAlgError(f"affine design over subcube has rank {rank} < {design.shape[1]}")
    b = coef[1:] / sub.halfwidth
    return AffineFunction(coef[0] - b @ c, b)


def hessian_field(u: GridFunction) -> np.ndarray:
    """``hessian_at`` at every interior node at once.

    Returns shape ``grid.shape + (d, d)``; boundary entries are zero.
    """
    g = u.grid
    d, h, v = g.dim, g.spacing, u.values
    out = np.zeros(g.shape + (d, d))
    inner = (slice(1, -1),) * d

    def shifted(steps):
        return v[tuple(slice(1 + s, g.m - 1 + s) for s in steps)]

    for i in range(d):
        e = [0] * d
        e[i] = 1
        plus, minus = shifted(e), shifted([-x for x in e])
        out[inner + (i, i)] = (plus + minus - 2 * v[inner]) / h**2
        for j in range(i + 1, d):
            def corner(si, sj):
                s = [0] * d
                s[i], s[j] = si, sj
                return shifted(s)

            val = ((corner(1, 1) - corner(1, -1)) - (corner(-1, 1) - corner(-1, -1))) / (4 * h**2)
            out[inner + (i, j)] = val
            out[inner + (j, i)] = val
    return out
