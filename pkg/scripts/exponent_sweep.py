"""Measured exponent at the degenerate center as the coefficient roughness varies.

For each ``eps_bar`` and amplitude ``c`` the odd-cubic scenario is solved and
the measure-mode exponent is printed next to the coefficient exponent.
"""

import argparse

from hessflat.experiment import run_experiment
from hessflat.scenarios import example_spec


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--m", type=int, default=257)
    p.add_argument("--eps-bar", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.5])
    p.add_argument("--c", type=float, nargs="+", default=[0.25, 0.5])
    p.add_argument("--out", default=None, help="persist each run under this directory")
    args = p.parse_args()

    print(f"{'eps_bar':>8} {'c':>6} {'alpha_hat':>10} {'[F] exp':>8}")
    for eps in args.eps_bar:
        for c in args.c:
            spec = example_spec(name=f"sweep_e{eps:g}_c{c:g}", m=args.m, c=c, eps_bar=eps)
            res = run_experiment(spec, out=args.out, stages=("hypotheses", "measure"))
            alpha = res.point()["alpha_hat"]
            fexp = res.hypotheses["oscillation"]["fitted_exponent"]
            print(f"{eps:8.3g} {c:6.3g} {alpha:10.4f} {fexp:8.4f}")


if __name__ == "__main__":
    main()
