"""American put: reflected tree vs the binomial oracle and LSMC as the grid is refined.

Writes a plot-ready CSV (steps, tree, oracle, lsmc, lsmc_se, penalized) and
prints the same table.

    python3 scripts/american_put_convergence.py --out out/american_put_convergence.csv
"""
import argparse
import csv
import math
from pathlib import Path

from reflgame import oracles, rbsde
from reflgame.catalog import build_spec
from reflgame.sde_core import ControlPath, TimeGrid, simulate_forward


def row(steps: int, paths: int, seed: int, lam: float):
    spec = build_spec("american-put")
    grid = TimeGrid.uniform(0.0, 1.0, steps)
    x0 = math.log(100.0)
    lat = rbsde.LatticeModel.binomial(grid, x0, 0.05 - 0.5 * 0.2 ** 2, 0.2)
    problem = rbsde.spec_problem(spec, 1, grid)
    tree = rbsde.solve_tree(problem, lat).Y0
    ref = oracles.american_put_binomial(100.0, 100.0, 0.05, 0.2, 1.0, steps, lat.dx)
    zero = ControlPath.constant(0, steps)
    bundle = simulate_forward(spec, grid, x0, zero, zero, paths, seed)
    lsmc = rbsde.solve_lsmc(bundle, problem, degree=3)
    pen = rbsde.solve_penalized(lat, problem, lam).Y0
    return steps, tree, ref, lsmc.Y0, lsmc.std_error, pen


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[50, 100, 200, 500, 1000])
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--lam", type=float, default=1000.0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    rows = [row(n, args.paths, args.seed, args.lam) for n in args.steps]
    print(f"{'N':>6} {'tree':>10} {'oracle':>10} {'|diff|':>9} {'lsmc':>8} {'se':>7} {'penalized':>10}")
    for n, tree, ref, ls, se, pen in rows:
        print(f"{n:6d} {tree:10.6f} {ref:10.6f} {abs(tree - ref):9.2e} {ls:8.4f} {se:7.4f} {pen:10.6f}")
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["steps", "tree", "oracle", "lsmc", "lsmc_se", "penalized"])
            w.writerows(rows)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
