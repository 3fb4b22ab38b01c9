"""Refinement study for the dead-core problem ``max{phi'' - phi^mu, -phi} = 0``.

With ``mu = 1/2`` the profile ``(|x| - a)_+^4 / 144`` is an exact solution;
the script prints max-norm errors and successive error ratios.
"""

import argparse

import numpy as np

from hessflat.grid import Cube, UniformGrid
from hessflat.operators import Linear, identity_field
from hessflat.scenarios import quartic_profile
from hessflat.solver import solve_pseudo_fb


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--ms", type=int, nargs="+", default=[33, 65, 129, 257, 513])
    args = p.parse_args()

    L = Linear(identity_field(1))
    prev = None
    print(f"{'m':>5} {'iters':>5} {'error':>12} {'ratio':>7}")
    for m in args.ms:
        grid = UniformGrid(Cube.unit(1), m)
        g = lambda X: quartic_profile(np.abs(X[..., 0]), args.a)
        rep = solve_pseudo_fb(L, 0.5, g, grid)
        err = float(np.max(np.abs(rep.solution.values - g(grid.coords()))))
        ratio = f"{prev / err:7.3f}" if prev else " " * 7
        print(f"{m:5d} {rep.iterations:5d} {err:12.4e} {ratio}")
        prev = err


if __name__ == "__main__":
    main()
