"""Isaacs gap H+ - H- across the catalog, plus the closed form 2|p| of the u.v game.

    python3 scripts/isaacs_scan_demo.py --samples 5000
"""
import argparse

import numpy as np

from reflgame import pde_obstacle
from reflgame.catalog import build_spec, catalog_list


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'spec':<30} {'max gap':>9} {'min gap':>9}  Isaacs")
    for entry in catalog_list():
        spec = build_spec(entry["name"])
        scan = pde_obstacle.isaacs_scan(spec, pde_obstacle.sample_points(spec, args.samples, args.seed))
        print(f"{entry['name']:<30} {scan.max_gap:9.3g} {scan.min_gap:9.3g}  "
              f"{'holds' if scan.satisfied else 'fails'}")
    uv = build_spec("multiplicative-coupled")
    print("\nu.v game, gap against p (closed form 2|p|):")
    for p in np.linspace(-2.0, 2.0, 9):
        h = pde_obstacle.hamiltonian(uv, 1, 0.0, [0.0], 0.0, [p], [[0.0]])
        print(f"  p = {p:5.2f}: H- = {h.minus:6.3f}, H+ = {h.plus:6.3f}, gap = {h.gap:5.3f}")


if __name__ == "__main__":
    main()
