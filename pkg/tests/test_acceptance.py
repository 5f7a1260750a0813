"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or ``python3 tests/test_acceptance.py``.
"""
import math

import numpy as np

from conftest import record
from reflgame import game_values, instances, nash, oracles, pde_obstacle, rbsde
from reflgame.catalog import build_spec
from reflgame.sde_core import ControlPath, TimeGrid, simulate_forward

SKOROKHOD: list = []  # max node |(Y - S) dK| of every lattice solve in this suite


def _tree(problem, lattice):
    sol = rbsde.solve_tree(problem, lattice)
    if sol.dK:
        SKOROKHOD.append(float(sol.skorokhod_residual().max()))
    return sol


def _american_put_setup(steps=500):
    spec = build_spec("american-put")
    grid = TimeGrid.uniform(0.0, 1.0, steps)
    x0 = math.log(100.0)
    lat = rbsde.LatticeModel.binomial(grid, x0, 0.05 - 0.5 * 0.2 ** 2, 0.2)
    return spec, grid, x0, lat, rbsde.spec_problem(spec, 1, grid)


def test_criterion_01_american_put_oracle():
    spec, grid, x0, lat, problem = _american_put_setup()
    tree = _tree(problem, lat)
    ref = oracles.american_put_binomial(100.0, 100.0, 0.05, 0.2, 1.0, 500, lat.dx)
    bundle = simulate_forward(spec, grid, x0, ControlPath.constant(0, 500), ControlPath.constant(0, 500),
                              10_000, seed=7)
    lsmc = rbsde.solve_lsmc(bundle, problem, degree=3)
    d_oracle = abs(tree.Y0 - ref)
    d_lsmc = abs(lsmc.Y0 - tree.Y0)
    tol = 3 * lsmc.std_error + 0.05
    ok = d_oracle <= 1e-4 and d_lsmc <= tol
    record(1, ok, f"tree {tree.Y0:.6f} vs binomial {ref:.6f} (|d| {d_oracle:.2e} <= 1e-4); "
                  f"LSMC {lsmc.Y0:.4f} SE {lsmc.std_error:.4f} (|d| {d_lsmc:.4f} <= {tol:.4f})")
    assert ok


def test_criterion_02_comparison():
    rng = np.random.default_rng(2)
    grid = TimeGrid.uniform(0.0, 1.0, 50)
    y_viol = k_viol = k_checked = binding = 0
    for k in range(200):
        base = instances.random_polynomial_spec(rng)
        a, b = instances.ordered_pair(base, rng, equal_obstacle=(k % 2 == 0))
        u, v = (ControlPath.constant(int(i), 50) for i in rng.integers(3, size=2))
        lat = rbsde.LatticeModel.for_spec(base, grid, 0.0, span=2.0)
        sa = _tree(rbsde.spec_problem(a, 1, grid, u, v), lat)
        sb = _tree(rbsde.spec_problem(b, 1, grid, u, v), lat)
        rep = rbsde.compare_solutions(sa, sb)
        y_viol += rep.y_violations
        k_viol += rep.k_violations
        k_checked += rep.k_checked
        binding += any(np.any(d > 0) for d in sa.dK)
    ok = y_viol == 0 and k_viol == 0 and k_checked == 100
    record(2, ok, f"200 ordered pairs: {y_viol} Y violations, {k_viol} dK violations "
                  f"({k_checked} equal-obstacle pairs, obstacle binding in {binding})")
    assert ok


def test_criterion_03_skorokhod():
    # lattice solves of its own plus whatever the other criteria ran before it
    spec, grid, x0, lat, problem = _american_put_setup(200)
    _tree(problem, lat)
    _tree(rbsde.spec_problem(build_spec("constant-drift"), 1, TimeGrid.uniform(0, 1, 100)),
          rbsde.LatticeModel.for_spec(build_spec("constant-drift"), TimeGrid.uniform(0, 1, 100), 0.0))
    worst = max(SKOROKHOD)
    ok = worst <= 1e-12
    record(3, ok, f"max node |(Y - S) dK| = {worst:.3g} over {len(SKOROKHOD)} lattice solves")
    assert ok


def test_criterion_04_penalization():
    spec, grid, x0, lat, problem = _american_put_setup()
    tree = _tree(problem, lat)
    sols = [rbsde.solve_penalized(lat, problem, lam) for lam in (10.0, 100.0, 1000.0)]
    drop = max(float((lo - hi).max()) for s, t in zip(sols, sols[1:]) for lo, hi in zip(s.Y, t.Y))
    gap = abs(sols[-1].Y0 - tree.Y0)
    ok = drop <= 0.0 and gap <= 0.02
    record(4, ok, f"Y^lam nondecreasing at every node (max drop {drop:.2g}); "
                  f"|Y^1000_0 - Y^tree_0| = {gap:.4f} <= 0.02")
    assert ok


def _dp_vs_pde(steps):
    spec = build_spec("zero-sum-absolute-terminal")
    grid = TimeGrid.uniform(0.0, 1.0, steps)
    lat = rbsde.LatticeModel.for_spec(spec, grid, 0.0, span=1.0)
    dp = game_values.compute_value_dp(spec, 1, "minus", lat)
    sg = pde_obstacle.SpaceGrid.with_spacing(-8.0, 8.0, lat.dx / 2)
    smax, bmax = pde_obstacle.coefficient_sup(spec, grid, sg)
    n_t = int(math.ceil(1.0 / pde_obstacle.cfl_limit(smax, bmax, sg.dx)))
    vg = pde_obstacle.solve_obstacle_isaacs(spec, 1, "minus", TimeGrid.uniform(0.0, 1.0, n_t), sg)
    return abs(dp.root_value - float(vg.value_at(0, 0.0))), grid.mesh, lat.dx


def test_criterion_05_probabilistic_representation():
    rows = [_dp_vs_pde(n) for n in (25, 100, 400)]
    within = all(g <= 5 * (math.sqrt(dt) + dx) for g, dt, dx in rows)
    decreasing = all(b[0] < a[0] for a, b in zip(rows, rows[1:]))
    ok = within and decreasing
    record(5, ok, "|W_dp - W_pde| at N = 25/100/400: "
                  + " / ".join(f"{g:.2e} (tol {5 * (math.sqrt(dt) + dx):.2f})" for g, dt, dx in rows)
                  + f", decreasing {decreasing}")
    assert ok


def test_criterion_06_dpp():
    rng = np.random.default_rng(6)
    names = ["additive-control", "multiplicative-coupled", "decoupled-quadratic-costs",
             "zero-sum-absolute-terminal", "constant-drift"]
    grid = TimeGrid.uniform(0.0, 1.0, 40)
    worst, count = 0.0, 0
    for name in names:
        spec = build_spec(name)
        lat = rbsde.LatticeModel.for_spec(spec, grid, 0.0, span=1.5)
        for r in range(4):
            k = int(rng.integers(1, 40))
            j, mode = (1, "minus") if r % 2 == 0 else (2, "plus")
            worst = max(worst, game_values.test_dpp(spec, j, mode, lat, k))
            count += 1
    ok = count == 20 and worst <= 1e-12
    record(6, ok, f"{count} random splits over {len(names)} specs: max residual {worst:.3g}")
    assert ok


def test_criterion_07_isaacs():
    specs = {n: build_spec(n) for n in ("additive-control", "multiplicative-coupled",
                                         "decoupled-quadratic-costs", "zero-sum-absolute-terminal")}
    min_gap = min(pde_obstacle.isaacs_scan(s, pde_obstacle.sample_points(s, 10_000, seed=7)).min_gap
                  for s in specs.values())
    dec = pde_obstacle.isaacs_scan(specs["decoupled-quadratic-costs"],
                                   pde_obstacle.sample_points(specs["decoupled-quadratic-costs"], 10_000, seed=8))
    uv = specs["multiplicative-coupled"]
    rng = np.random.default_rng(9)
    uv_err = 0.0
    for p in rng.normal(scale=3.0, size=100):
        h = pde_obstacle.hamiltonian(uv, 1, 0.3, [rng.uniform(-2, 2)], rng.normal(), [p], [[rng.normal()]])
        uv_err = max(uv_err, abs(h.gap - 2 * abs(p)))
    grid = TimeGrid.uniform(0.0, 1.0, 50)
    co_ok, co_txt = True, []
    for name in ("decoupled-quadratic-costs", "additive-control", "zero-sum-absolute-terminal"):
        lat = rbsde.LatticeModel.for_spec(specs[name], grid, 0.0, span=1.0)
        co = game_values.coincidence_test(specs[name], lat)
        tol = 5 * (grid.mesh + lat.dx)
        co_ok &= co.max_gap <= tol
        co_txt.append(f"{co.max_gap:.2g}")
    ok = min_gap >= 0.0 and dec.max_gap <= 1e-9 and uv_err <= 1e-12 and co_ok
    record(7, ok, f"min H+ - H- {min_gap:.3g} over 4 x 20000 samples; decoupled gap {dec.max_gap:.2g}; "
                  f"uv gap - 2|p| err {uv_err:.2g}; coincidence gaps {', '.join(co_txt)}")
    assert ok


def test_criterion_08_scheme_comparison():
    rng = np.random.default_rng(8)
    sg = pde_obstacle.SpaceGrid.with_spacing(-3.0, 3.0, 0.15)
    viol = nodes = 0
    for k in range(50):
        base = instances.random_polynomial_spec(rng)
        a, b = instances.ordered_pair(base, rng, equal_obstacle=(k % 2 == 0))
        coarse = TimeGrid.uniform(0.0, 1.0, 10)
        smax, bmax = pde_obstacle.coefficient_sup(base, coarse, sg)
        tg = TimeGrid.uniform(0.0, 1.0, int(math.ceil(1.0 / pde_obstacle.cfl_limit(smax, bmax, sg.dx))))
        rep = pde_obstacle.scheme_comparison_test(a, b, 1, "minus" if k % 3 else "plus", tg, sg)
        viol += rep.violations
        nodes += rep.nodes
    ok = viol == 0
    record(8, ok, f"50 ordered spec pairs: {viol} node violations over {nodes} nodes")
    assert ok


def test_criterion_09_regularity():
    spec = build_spec("zero-sum-absolute-terminal")
    reps = []
    for steps in (100, 400):
        lat = rbsde.LatticeModel.for_spec(spec, TimeGrid.uniform(0.0, 1.0, steps), 0.0, span=1.0)
        reps.append(game_values.regularity_probe(game_values.compute_value_dp(spec, 1, "minus", lat)))
    bound = 1.1 * math.exp(spec.lipschitz * 1.0) * 1.0
    drift = abs(reps[1].holder_t - reps[0].holder_t) / reps[0].holder_t
    ok = max(r.lipschitz_x for r in reps) <= bound and drift < 0.25
    record(9, ok, f"Lipschitz-in-x {reps[0].lipschitz_x:.4f}/{reps[1].lipschitz_x:.4f} <= {bound:.3f}; "
                  f"Holder-in-t {reps[0].holder_t:.4f} -> {reps[1].holder_t:.4f} (drift {drift:.1%} < 25%)")
    assert ok


def _decoupled_lattice():
    spec = build_spec("decoupled-quadratic-costs")
    return spec, rbsde.LatticeModel.for_spec(spec, TimeGrid.uniform(0.0, 1.0, 50), 0.0, span=1.0)


def test_criterion_10_nash_characterization():
    spec, lat = _decoupled_lattice()
    eps = 0.05
    values = nash.value_tables(spec, lat)
    cand = nash.construct_candidate(spec, lat, 2, eps, values)
    cert = nash.verify_conditions(spec, cand, eps, values)
    cert.deviations = nash.deviation_table(spec, nash.build_punishment(spec, cand), 100, seed=10)
    per_player = {j: sum(1 for d in cert.deviations if d["player"] == j) for j in (1, 2)}
    bad = nash.CandidatePair.constant(spec, lat, 2, 2, 1, eps)  # u = 1, v = 0: player 1 pays for nothing
    bad_cert = nash.verify_conditions(spec, bad, eps, values)
    ok = (cert.accepted and max(abs(e) for e in cert.payoffs) <= 0.02 and cert.min_probability >= 0.99
          and len(cert.checkpoint_times) == lat.depth + 1 and cert.max_deviation_gap <= eps
          and min(per_player.values()) >= 103 and not bad_cert.accepted)
    record(10, ok, f"e = ({cert.payoffs[0]:.4f}, {cert.payoffs[1]:.4f}); min P = {cert.min_probability:.3f} "
                   f"over {len(cert.checkpoint_times)} grid times; {len(cert.deviations)} deviations, "
                   f"max gain {cert.max_deviation_gap:.3g} <= {eps}; suboptimal candidate accepted: {bad_cert.accepted}")
    assert ok


def test_criterion_11_punishment():
    spec = build_spec("zero-sum-absolute-terminal")
    lat = rbsde.LatticeModel.for_spec(spec, TimeGrid.uniform(0.0, 1.0, 100), 0.0, span=1.0)
    env = nash.punishment_envelope(spec, lat, 2, 0.01, 0.01, random_count=100, seed=11)
    j1 = [r for r in env.rows if r["player"] == 1]
    below = all(r["J_dev"] <= r["J_nom"] + env.max_gap + 1e-12 for r in j1)
    cand = nash.construct_candidate(spec, lat, 2, 0.01)
    prof = nash.build_punishment(spec, cand)
    delays, hits = set(), 0
    for at in (10, 40, 70):
        for control in range(len(spec.U)):
            paths = nash.simulate_profiles(spec, cand, prof, 400, seed=at + control,
                                           deviation=(1, nash.Deviation.switch(at, control)))
            mm, det = paths.first_mismatch[1], paths.detection[2]
            sel = mm == at
            hits += int(sel.sum())
            delays |= set((det[sel] - mm[sel]).tolist())
    ok = bool(env.max_gap <= 0.1 and below and delays == {2} and hits > 0 and abs(env.tau - 0.02) < 1e-12)
    record(11, ok, f"envelope {env.max_gap:.4f} <= 0.1 at (eps0, eps1, tau) = (0.01, 0.01, {env.tau:g}); "
                   f"{len(j1)} player-1 deviations within it; detection delay {sorted(delays)} step(s) "
                   f"= one interval on {hits} deviating paths")
    assert ok


def test_criterion_12_existence_scan():
    spec, lat = _decoupled_lattice()
    scan = nash.existence_scan(spec, lat, 2, ladder=(0.2, 0.1, 0.05))
    ok = all(scan.accepted) and scan.final_distance <= 0.01
    record(12, ok, f"payoffs {[tuple(round(x, 6) for x in e) for e in scan.payoffs]}; accepted {scan.accepted}; "
                   f"final distance {scan.final_distance:.3g} <= 0.01")
    assert ok


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
