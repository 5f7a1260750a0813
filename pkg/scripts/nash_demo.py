"""Build, verify and attack an eps-Nash candidate on a catalog game.

    python3 scripts/nash_demo.py --spec zero-sum-absolute-terminal --steps 40 --eps 0.01
"""
import argparse

import numpy as np

from reflgame import nash, rbsde
from reflgame.catalog import build_spec
from reflgame.sde_core import TimeGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--spec", default="decoupled-quadratic-costs")
    ap.add_argument("--steps", type=int, default=40)
    ap.add_argument("--stride", type=int, default=2)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--deviations", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="write certificate JSON/CSV with this prefix")
    args = ap.parse_args()
    spec = build_spec(args.spec)
    lat = rbsde.LatticeModel.for_spec(spec, TimeGrid.uniform(0.0, 1.0, args.steps), 0.0, span=1.0)
    values = nash.value_tables(spec, lat)
    cand = nash.construct_candidate(spec, lat, args.stride, args.eps, values)
    cert = nash.verify_conditions(spec, cand, args.eps, values)
    profiles = nash.build_punishment(spec, cand)
    cert.deviations = nash.deviation_table(spec, profiles, args.deviations, args.seed)
    print(f"W = ({values[1].root_value:.6f}, {values[2].root_value:.6f}), "
          f"e = ({cert.payoffs[0]:.6f}, {cert.payoffs[1]:.6f})")
    print(f"min P(Y_j >= W_j - eps) = {cert.min_probability:.4f} over {len(cert.checkpoint_times)} grid times")
    for j in (1, 2):
        gaps = np.array([d["gap"] for d in cert.deviations if d["player"] == j])
        print(f"player {j}: {gaps.size} deviations, max gain {gaps.max():.4g}, mean {gaps.mean():.4g}")
    print("accepted" if cert.accepted else f"rejected, slacks {cert.slacks()}")
    if args.out:
        for p in cert.write(args.out):
            print(f"wrote {p}")


if __name__ == "__main__":
    main()
