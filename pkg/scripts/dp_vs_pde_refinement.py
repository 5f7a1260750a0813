"""Lattice DP value vs the explicit Isaacs obstacle scheme on the zero-sum |x| game.

For each lattice depth N the PDE grid uses half the lattice spacing and the
largest CFL-stable time step.  Prints |W_dp - W_pde| at (0, 0).

    python3 scripts/dp_vs_pde_refinement.py --steps 25 100 400
"""
import argparse
import math

from reflgame import game_values, pde_obstacle, rbsde
from reflgame.catalog import build_spec
from reflgame.sde_core import TimeGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[25, 50, 100, 200, 400])
    ap.add_argument("--j", type=int, default=1)
    ap.add_argument("--mode", choices=["minus", "plus"], default="minus")
    args = ap.parse_args()
    spec = build_spec("zero-sum-absolute-terminal")
    print(f"{'N':>5} {'dx':>8} {'W_dp':>10} {'W_pde':>10} {'|gap|':>9}")
    for n in args.steps:
        grid = TimeGrid.uniform(0.0, 1.0, n)
        lat = rbsde.LatticeModel.for_spec(spec, grid, 0.0, span=1.0)
        dp = game_values.compute_value_dp(spec, args.j, args.mode, lat).root_value
        sg = pde_obstacle.SpaceGrid.with_spacing(-8.0, 8.0, lat.dx / 2)
        smax, bmax = pde_obstacle.coefficient_sup(spec, grid, sg)
        n_t = int(math.ceil(1.0 / pde_obstacle.cfl_limit(smax, bmax, sg.dx)))
        vg = pde_obstacle.solve_obstacle_isaacs(spec, args.j, args.mode, TimeGrid.uniform(0.0, 1.0, n_t), sg)
        pde = float(vg.value_at(0, 0.0))
        print(f"{n:5d} {lat.dx:8.4f} {dp:10.6f} {pde:10.6f} {abs(dp - pde):9.2e}")


if __name__ == "__main__":
    main()
