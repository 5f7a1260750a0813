"""Config-driven experiment runner: ``reflgame run <subcommand> config.json``.

Every run writes its tables (CSV/JSON) into the output directory together with
``summary.txt`` and ``report.json``.  Exit status: 0 when every invariant suite
the subcommand invoked passed, 1 on an invariant failure or a module error, 2 on
a usage, config or spec error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import catalog, game_values, nash, oracles, pde_obstacle, rbsde, sde_core
from .config import ConfigError, ExperimentConfig, load_config

SUBCOMMANDS = ("simulate", "solve-rbsde", "solve-pde", "value", "dpp-test", "isaacs-scan",
               "nash-build", "nash-verify", "nash-scan", "proptest")

# module operation -> subcommands that reach it (checked by a meta-test)
OPERATION_COVERAGE = {
    "sde_core.validate_spec": ["simulate", "proptest"],
    "sde_core.simulate_forward": ["simulate", "solve-rbsde"],
    "sde_core.moment_report": ["simulate"],
    "sde_core.save_bundle": ["simulate"],
    "rbsde.solve_tree": ["solve-rbsde", "proptest"],
    "rbsde.solve_lsmc": ["solve-rbsde"],
    "rbsde.solve_penalized": ["solve-rbsde", "proptest"],
    "rbsde.backward_semigroup": ["proptest"],
    "rbsde.compare_solutions": ["proptest"],
    "pde_obstacle.hamiltonian": ["isaacs-scan"],
    "pde_obstacle.solve_obstacle_isaacs": ["solve-pde"],
    "pde_obstacle.residual_check": ["solve-pde", "value"],
    "pde_obstacle.isaacs_scan": ["isaacs-scan"],
    "pde_obstacle.scheme_comparison_test": ["proptest"],
    "game_values.compute_value_dp": ["value", "dpp-test"],
    "game_values.test_dpp": ["dpp-test"],
    "game_values.test_dpp_lsmc": ["dpp-test"],
    "game_values.regularity_probe": ["value"],
    "game_values.coincidence_test": ["isaacs-scan"],
    "nash.construct_candidate": ["nash-build", "nash-verify"],
    "nash.verify_conditions": ["nash-verify"],
    "nash.build_punishment": ["nash-verify"],
    "nash.deviation_gap": ["nash-verify"],
    "nash.existence_scan": ["nash-scan"],
    "nash.punishment_envelope": ["nash-scan"],
    "catalog.catalog_list": ["catalog"],
}


@dataclass
class RunReport:
    subcommand: str
    config: Optional[str]
    output: str
    files: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)  # name -> {"passed": bool, "detail": str}
    lines: list = field(default_factory=list)
    wall_clock: float = 0.0
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(c["passed"] for c in self.checks.values())

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        self.checks[name] = {"passed": bool(passed), "detail": detail}
        self.say(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))
        return bool(passed)

    def say(self, line: str) -> None:
        self.lines.append(line)

    def out(self, name: str) -> Path:
        path = Path(self.output) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def add(self, *paths) -> None:
        for p in paths:
            if isinstance(p, (list, tuple)):
                self.add(*p)
            else:
                self.files.append(str(p))

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand, "config": self.config, "output": self.output,
            "manifest": self.files, "checks": self.checks, "passed": self.passed,
            "wall_clock_s": self.wall_clock, "error": self.error,
        }

    def write(self) -> None:
        summary = self.out("summary.txt")
        status = "PASS" if self.passed else "FAIL"
        summary.write_text("\n".join([f"reflgame run {self.subcommand}: {status}", *self.lines, ""]))
        report = self.out("report.json")
        manifest = [str(summary), str(report)]
        self.files = [f for f in self.files if f not in manifest] + manifest
        report.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float))


def _write_csv(path: Path, header: list, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float))
    return path


def _controls(cfg: ExperimentConfig, steps: int):
    return (sde_core.ControlPath.constant(cfg.controls.u, steps),
            sde_core.ControlPath.constant(cfg.controls.v, steps))


def build_lattice(cfg: ExperimentConfig, spec: sde_core.GameSpec, grid: sde_core.TimeGrid):
    lc = cfg.lattice
    if lc.kind == "binomial":
        ui, vi = cfg.controls.u, cfg.controls.v
        b = float(spec.drift(grid.t0, cfg.x0, ui, vi)[0, 0])
        s = float(spec.vol(grid.t0, cfg.x0, ui, vi)[0, 0, 0])
        return rbsde.LatticeModel.binomial(grid, cfg.x0, b, s, lc.half_width or 0)
    return rbsde.LatticeModel.for_spec(spec, grid, cfg.x0, lc.span, lc.dx, lc.half_width)


def _space_time(cfg: ExperimentConfig, spec):
    sg = pde_obstacle.SpaceGrid.with_spacing(cfg.space.x_min, cfg.space.x_max, cfg.space.dx)
    coarse = cfg.time_grid()
    steps = cfg.space.steps
    if steps is None:
        smax, bmax = pde_obstacle.coefficient_sup(spec, coarse, sg)
        limit = pde_obstacle.cfl_limit(smax, bmax, sg.dx)
        steps = int(math.ceil((cfg.time.T - cfg.time.t0) / limit * (1 + 1e-9)))
    return sg, sde_core.TimeGrid.uniform(cfg.time.t0, cfg.time.T, steps)


# -- subcommands ---------------------------------------------------------------
def cmd_simulate(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec = cfg.build_spec()
    val = sde_core.validate_spec(spec, T=cfg.time.T, seed=cfg.seed)
    rep.check("validate_spec", val.passed, "; ".join(val.failures) or "bounds and Lipschitz constants hold")
    grid = cfg.time_grid()
    u, v = _controls(cfg, grid.steps)
    bundle = sde_core.simulate_forward(spec, grid, cfg.x0, u, v, cfg.solver.paths, cfg.seed)
    rep.add(sde_core.save_bundle(bundle, rep.out("paths")))
    mom = sde_core.moment_report(bundle, 2)
    rep.add(_write_csv(rep.out("moments.csv"), ["time_index", "t", "E|X|^2"],
                       ((i, t, m) for i, (t, m) in enumerate(zip(grid.points, mom.moments)))))
    rep.say(f"paths {bundle.num_paths}, steps {grid.steps}; sup_t E|X_t|^2 = {mom.sup_of_mean:.6g}, "
            f"E sup_t |X_t|^2 = {mom.mean_of_sup:.6g}")
    rep.check("initial state", bool(np.all(bundle.states[:, 0] == bundle.x0)))
    z = (bundle.increments / np.sqrt(grid.dt)[None, :, None]).ravel()
    k = z.size
    mean_ok = abs(z.mean()) <= 5.0 / math.sqrt(k)
    var_ok = abs(z.var() - 1.0) <= 5.0 * math.sqrt(2.0 / k)
    rep.check("Brownian increments", mean_ok and var_ok,
              f"standardized mean {z.mean():.3g}, variance {z.var():.5f} over {k} draws")


def cmd_solve_rbsde(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec = cfg.build_spec()
    grid = cfg.time_grid()
    u, v = _controls(cfg, grid.steps)
    j = cfg.game.j
    problem = rbsde.spec_problem(spec, j, grid, u, v)
    methods = cfg.solver.methods
    rows, tree = [], None
    lattice = None
    if "tree" in methods or "penalized" in methods:
        lattice = build_lattice(cfg, spec, grid)
    if "tree" in methods:
        tree = rbsde.solve_tree(problem, lattice)
        rows.append(("tree", tree.Y0, 0.0))
        sk = float(tree.skorokhod_residual().max()) if tree.dK else 0.0
        rep.check("Skorokhod complementarity (tree)", sk <= 1e-12, f"max node |(Y-S) dK| = {sk:.3g}")
        rep.check("Y >= S (tree)", tree.min_obstacle_slack() >= -1e-12,
                  f"min slack {tree.min_obstacle_slack():.3g}")
        nodes = sum(y.size for y in tree.Y)
        if nodes <= 400_000:
            rep.add(rbsde.solution_csv(tree, rep.out("tree_solution.csv")))
        else:
            rep.say(f"tree solution has {nodes} node values; per-node CSV skipped")
    if "lsmc" in methods:
        bundle = sde_core.simulate_forward(spec, grid, cfg.x0, u, v, cfg.solver.paths, cfg.seed)
        lp = rbsde.spec_problem(spec, j, grid, bundle.u_idx, bundle.v_idx)
        lsmc = rbsde.solve_lsmc(bundle, lp, cfg.solver.degree)
        rows.append(("lsmc", lsmc.Y0, lsmc.std_error))
        if tree is not None:
            gap = abs(lsmc.Y0 - tree.Y0)
            tol = 3.0 * lsmc.std_error + 0.05
            rep.check("LSMC vs tree", gap <= tol, f"|{lsmc.Y0:.6f} - {tree.Y0:.6f}| = {gap:.4g} (tol {tol:.4g})")
        rep.add(_write_csv(rep.out("lsmc_residuals.csv"), ["time_index", "regression_rms"],
                           enumerate(lsmc.residuals)))
    if "penalized" in methods:
        sols = []
        for lam in sorted(cfg.solver.penalties):
            sol = rbsde.solve_penalized(lattice, problem, lam)
            sols.append(sol)
            rows.append((f"penalized:{lam:g}", sol.Y0, 0.0))
        worst = 0.0
        for lo, hi in zip(sols, sols[1:]):
            worst = max(worst, max(float((a - b).max()) for a, b in zip(lo.Y, hi.Y)))
        rep.check("penalization monotone in lambda", worst <= 1e-12,
                  f"max node Y^lam - Y^lam' over lam < lam' = {worst:.3g}")
        if tree is not None and sols and spec.name == "american-put":
            gap = abs(sols[-1].Y0 - tree.Y0)
            rep.check("penalized vs tree", gap <= 0.02, f"|Y^{max(cfg.solver.penalties):g}_0 - Y^tree_0| = {gap:.4g}")
    if spec.name == "american-put" and tree is not None:
        p = spec.params
        if cfg.lattice.kind == "binomial":
            ref = oracles.american_put_binomial(math.exp(cfg.x0), p["strike"], p["rate"], p["vol"],
                                                grid.T - grid.t0, grid.steps, lattice.dx)
            gap = abs(tree.Y0 - ref)
            rows.append(("binomial-oracle", ref, 0.0))
            rep.say(f"oracle: binomial {ref:.6f} vs tree {tree.Y0:.6f}, |diff| = {gap:.3g} (tol 1e-4)")
            rep.check("binomial oracle", gap <= 1e-4, f"|diff| = {gap:.3g}")
        else:
            rep.say("oracle comparison needs lattice.kind = 'binomial'; skipped")
    rep.add(_write_csv(rep.out("y0.csv"), ["method", "Y0", "std_error"], rows))
    for name, y0, se in rows:
        rep.say(f"{name:>18}: Y0 = {y0:.6f}" + (f" (SE {se:.4f})" if se else ""))


def cmd_solve_pde(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec = cfg.build_spec()
    sg, tg = _space_time(cfg, spec)
    j, mode = cfg.game.j, cfg.game.mode
    vg = pde_obstacle.solve_obstacle_isaacs(spec, j, mode, tg, sg)
    rep.add(vg.to_csv(rep.out(f"W{j}_{mode}_pde.csv")))
    res = pde_obstacle.residual_check(vg, spec)
    rep.check("scheme residual", res <= 1e-10, f"max |min(W - h, dW/dt - H)| = {res:.3g}")
    slack = min(float((vg.values[i] - spec.obstacle(j, t, vg.xs)).min()) for i, t in enumerate(vg.times))
    rep.check("W >= h", slack >= -1e-12, f"min slack {slack:.3g}")
    rep.check("terminal condition", bool(np.array_equal(vg.values[-1], spec.terminal(j, vg.xs))))
    rep.say(f"grid {tg.steps} x {sg.num} (dt {tg.mesh:.3g}, dx {sg.dx:.3g}); "
            f"W_{j}^{mode}(t0, x0 = {cfg.x0:g}) = {float(vg.value_at(0, cfg.x0)):.6f}")


def cmd_value(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec = cfg.build_spec()
    grid = cfg.time_grid()
    lat = build_lattice(cfg, spec, grid)
    j, mode = cfg.game.j, cfg.game.mode
    dp = game_values.compute_value_dp(spec, j, mode, lat)
    vg = dp.grid
    rep.add(vg.to_csv(rep.out(f"W{j}_{mode}_dp.csv")), dp.saddle_csv(rep.out("saddle.csv")))
    slack = min(float((dp.at(i) - spec.obstacle(j, grid.points[i], lat.states(i))).min())
                for i in range(lat.depth + 1))
    rep.check("W >= h", slack >= -1e-12, f"min slack {slack:.3g}")
    rep.check("terminal condition", bool(np.array_equal(dp.at(lat.depth), spec.terminal(j, lat.states(lat.depth)))))
    reg = game_values.regularity_probe(dp, trusted_only=False)
    res = pde_obstacle.residual_check(vg, spec, trusted_only=False)
    info = {"root_value": dp.root_value, "lipschitz_x": reg.lipschitz_x, "holder_t": reg.holder_t,
            "pde_residual_of_dp_values": res, "dx": lat.dx, "dt": grid.mesh}
    rep.add(_write_json(rep.out("value.json"), info))
    rep.say(f"W_{j}^{mode}(t0, x0 = {cfg.x0:g}) = {dp.root_value:.6f} on a lattice with dx {lat.dx:.4g}")
    rep.say(f"empirical Lipschitz in x {reg.lipschitz_x:.4f}, Holder-in-t ratio {reg.holder_t:.4f}")
    rep.say(f"Isaacs-scheme residual of the DP values (consistency, not an invariant): {res:.3g}")


def cmd_dpp_test(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec = cfg.build_spec()
    grid = cfg.time_grid()
    lat = build_lattice(cfg, spec, grid)
    j, mode = cfg.game.j, cfg.game.mode
    if cfg.game.splits is not None:
        splits = [int(k) for k in cfg.game.splits]
    else:
        rng = np.random.default_rng(cfg.seed)
        splits = sorted(int(k) for k in rng.integers(1, grid.steps, size=cfg.game.num_splits))
    rows = [(k, game_values.test_dpp(spec, j, mode, lat, k)) for k in splits]
    rep.add(_write_csv(rep.out("dpp.csv"), ["split", "residual"], rows))
    worst = max(r for _, r in rows)
    rep.check("DPP split composition", worst <= 1e-12, f"max residual {worst:.3g} over {len(rows)} split(s)")
    rep.say(f"W_{j}^{mode}(t0, x0) = {game_values.compute_value_dp(spec, j, mode, lat).root_value:.6f}")
    if cfg.game.lsmc:
        k = splits[len(splits) // 2]
        lr = game_values.test_dpp_lsmc(spec, j, mode, grid, cfg.x0, k, cfg.solver.paths,
                                       seed=cfg.seed, degree=cfg.solver.degree)
        rep.add(_write_json(rep.out("dpp_lsmc.json"), {
            "split": k, "one_pass": lr.one_pass, "two_stage": lr.two_stage,
            "discrepancy": lr.discrepancy, "combined_se": lr.combined_se}))
        rep.check("DPP split composition (regression)", lr.passed,
                  f"|one-pass - two-stage| = {lr.discrepancy:.4g} vs 3 SE = {3 * lr.combined_se:.4g}")


def _fmt_vec(v) -> str:
    v = np.asarray(v, dtype=float).ravel()
    return f"{v[0]:g}" if v.size == 1 else "(" + ", ".join(f"{a:g}" for a in v) + ")"


def cmd_isaacs_scan(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec = cfg.build_spec()
    n = spec.n
    pts = pde_obstacle.sample_points(spec, cfg.isaacs.samples, cfg.seed, cfg.time.T)
    scan = pde_obstacle.isaacs_scan(spec, pts)
    rep.check("minimax inequality H+ >= H-", scan.min_gap >= -1e-12,
              f"min gap {scan.min_gap:.3g} over {scan.samples} samples")
    rows, worst = [], None
    for pt in cfg.isaacs.points:
        x = np.reshape(pt.get("x", 0.0), n)
        p = np.reshape(pt.get("p", 1.0), n)
        A = np.reshape(pt.get("A", 0.0), (n, n)) * np.ones((n, n))
        for j in (1, 2):
            h = pde_obstacle.hamiltonian(spec, j, float(pt.get("t", 0.0)), x, float(pt.get("y", 0.0)), p, A)
            rows.append((j, pt.get("t", 0.0), _fmt_vec(x), pt.get("y", 0.0), _fmt_vec(p), h.minus, h.plus, h.gap))
            if worst is None or h.gap > worst[0]:
                worst = (h.gap, p)
    if rows:
        rep.add(_write_csv(rep.out("hamiltonians.csv"), ["j", "t", "x", "y", "p", "H_minus", "H_plus", "gap"], rows))
    if worst is None:
        worst = (scan.worst_point["gap"], scan.worst_point["p"])
    holds = scan.satisfied and worst[0] <= 1e-9
    rep.say(f"gap {worst[0]:.1f} at p={_fmt_vec(worst[1])}, Isaacs {'HOLDS' if holds else 'FAILS'}")
    rep.add(_write_json(rep.out("isaacs.json"), {
        "max_gap": scan.max_gap, "mean_gap": scan.mean_gap, "min_gap": scan.min_gap,
        "worst_point": scan.worst_point, "satisfied": scan.satisfied, "samples": scan.samples,
        "by_player": {str(k): g for k, g in scan.by_player.items()}}))
    if not cfg.isaacs.coincidence:
        return
    grid = cfg.time_grid()
    lat = build_lattice(cfg, spec, grid)
    try:
        co = game_values.coincidence_test(spec, lat, seed=cfg.seed)
    except game_values.IsaacsFailure as exc:
        rep.say(f"coincidence test refused: {exc}")
        return
    tol = 5.0 * (grid.mesh + lat.dx)
    rep.check("lower = upper value", co.max_gap <= tol, f"max node gap {co.max_gap:.3g} (tol {tol:.3g})")


def _nash_setup(cfg: ExperimentConfig):
    spec = cfg.build_spec()
    lat = build_lattice(cfg, spec, cfg.time_grid())
    nc = cfg.nash
    cells = nc.cell_nodes
    if cells is None:
        C = spec.lipschitz * math.exp(spec.lipschitz * lat.grid.T)
        cells = nash.cell_nodes_for(nc.eps, lat, C)
    return spec, lat, cells


def _candidate(cfg, spec, lat, cells, values, rep: RunReport):
    nc = cfg.nash
    if nc.constant_candidate is not None:
        a, c = (int(k) for k in nc.constant_candidate)
        rep.say(f"constant candidate (u, v) = ({spec.U.points[a].tolist()}, {spec.V.points[c].tolist()})")
        return nash.CandidatePair.constant(spec, lat, nc.stride, a, c, nc.eps, cells)
    try:
        return nash.construct_candidate(spec, lat, nc.stride, nc.eps, values, nc.chattering, cells)
    except nash.CandidateConstructionError as exc:
        rep.check("candidate construction", False, str(exc))
        return None


def cmd_nash_build(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec, lat, cells = _nash_setup(cfg)
    values = nash.value_tables(spec, lat)
    cand = _candidate(cfg, spec, lat, cells, values, rep)
    if cand is None:
        return
    rep.add(_write_json(rep.out("candidate.json"), cand.to_dict()))
    if cand.margins:
        rows = [(m, k, float(cand.partition.points[m]), mg[0], mg[1])
                for m, tab in enumerate(cand.margins) for k, mg in enumerate(tab)]
        rep.add(_write_csv(rep.out("margins.csv"), ["interval", "cell", "t", "margin_1", "margin_2"], rows))
        worst = min(min(r[3], r[4]) for r in rows)
        rep.check("candidate construction", worst >= -cfg.nash.eps,
                  f"min margin {worst:.3g} over {len(rows)} cells (eps {cfg.nash.eps:g})")
    rep.say(f"{cand.num_intervals} intervals, {cells} node(s) per cell, chattering {cand.chattering}")


def cmd_nash_verify(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec, lat, cells = _nash_setup(cfg)
    values = nash.value_tables(spec, lat)
    cand = _candidate(cfg, spec, lat, cells, values, rep)
    if cand is None:
        return
    eps = cfg.nash.eps
    cert = nash.verify_conditions(spec, cand, eps, values)
    profiles = nash.build_punishment(spec, cand)
    cert.deviations = nash.deviation_table(spec, profiles, cfg.nash.deviations, cfg.seed)
    rep.add(cert.write(rep.out("certificate")))
    rep.say(f"payoffs e = ({cert.payoffs[0]:.6f}, {cert.payoffs[1]:.6f}); "
            f"value gaps W - e = ({cert.value_gaps[1]:.3g}, {cert.value_gaps[2]:.3g})")
    rep.say(f"min P(Y_j >= W_j - eps) over {len(cert.checkpoint_times)} checkpoints: {cert.min_probability:.4f}")
    rep.say(f"{len(cert.deviations)} deviations, max gain {cert.max_deviation_gap:.4g}")
    rep.check("Nash certificate", cert.accepted,
              ", ".join(f"{k} slack {v:.3g}" for k, v in cert.slacks().items()) + f" (eps {eps:g})")


def cmd_nash_scan(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec, lat, _ = _nash_setup(cfg)
    nc = cfg.nash
    scan = nash.existence_scan(spec, lat, nc.stride, nc.ladder, nc.chattering, seed=cfg.seed)
    rows = [(eps, e[0], e[1], int(ok), scan.distances[k - 1] if k else "")
            for k, (eps, e, ok) in enumerate(zip(scan.ladder, scan.payoffs, scan.accepted))]
    rep.add(_write_csv(rep.out("existence.csv"), ["eps", "e1", "e2", "accepted", "distance_to_previous"], rows))
    for r in rows:
        rep.say(f"eps {r[0]:g}: e = ({r[1]:.6f}, {r[2]:.6f}), accepted {bool(r[3])}")
    rep.check("certificates accepted along the ladder", all(scan.accepted))
    tol = min(nc.ladder) / 5.0
    rep.check("payoffs Cauchy", scan.final_distance <= tol,
              f"final distance {scan.final_distance:.3g} (tol {tol:.3g})")
    if nc.envelope:
        env = nash.punishment_envelope(spec, lat, nc.stride, nc.eps0, nc.eps1, nc.deviations, cfg.seed)
        rep.add(_write_csv(rep.out("envelope.csv"), ["player", "kind", "label", "J_deviate", "J_nominal", "gap"],
                           ((r["player"], r["kind"], r["label"], r["J_dev"], r["J_nom"], r["gap"]) for r in env.rows)))
        rep.check("punishment envelope", env.max_gap <= nc.envelope_tol,
                  f"max gain {env.max_gap:.4g} at (eps0, eps1, tau) = ({env.eps0:g}, {env.eps1:g}, {env.tau:g})")


def _ordered_pair(spec, rng):
    """(A, B) with f_A <= f, Phi <= Phi_B and equal obstacles (Phi_B >= h stays true)."""
    return (sde_core.shift_spec(spec, f=-float(rng.uniform(0, 0.5))),
            sde_core.shift_spec(spec, phi=float(rng.uniform(0, 0.5))))


def cmd_proptest(cfg: ExperimentConfig, rep: RunReport) -> None:
    spec = cfg.build_spec()
    rng = np.random.default_rng(cfg.seed)
    val = sde_core.validate_spec(spec, T=cfg.time.T, seed=cfg.seed)
    rep.check("validate_spec", val.passed, "; ".join(val.failures))
    grid = cfg.time_grid()
    lat = build_lattice(cfg, spec, grid)
    u, v = _controls(cfg, grid.steps)
    j = cfg.game.j
    rows = []
    y_viol = k_viol = 0
    sk = 0.0
    for k in range(cfg.proptest.pairs):
        a, b = _ordered_pair(spec, rng)
        sa = rbsde.solve_tree(rbsde.spec_problem(a, j, grid, u, v), lat)
        sb = rbsde.solve_tree(rbsde.spec_problem(b, j, grid, u, v), lat)
        cmp = rbsde.compare_solutions(sa, sb)
        y_viol += cmp.y_violations
        k_viol += cmp.k_violations
        for s in (sa, sb):
            if s.dK:
                sk = max(sk, float(s.skorokhod_residual().max()))
        rows.append((k, cmp.y_violations, cmp.k_violations, cmp.max_y_excess))
    rep.add(_write_csv(rep.out("comparison_pairs.csv"), ["pair", "y_violations", "k_violations", "max_y_excess"], rows))
    rep.check("RBSDE comparison (Y)", y_viol == 0, f"{y_viol} violations over {len(rows)} pairs")
    rep.check("RBSDE comparison (K)", k_viol == 0, f"{k_viol} violations")
    rep.check("Skorokhod complementarity", sk <= 1e-12, f"max node |(Y-S) dK| = {sk:.3g}")
    problem = rbsde.spec_problem(spec, j, grid, u, v)
    pens = [rbsde.solve_penalized(lat, problem, lam) for lam in (10.0, 100.0, 1000.0)]
    worst = max(max(float((a - b).max()) for a, b in zip(lo.Y, hi.Y)) for lo, hi in zip(pens, pens[1:]))
    rep.check("penalization monotone", worst <= 1e-12, f"max decrease {worst:.3g}")
    s1, s2, s3 = 0, grid.steps // 2, grid.steps
    eta = spec.terminal(j, lat.states(s3))
    whole = rbsde.backward_semigroup(spec, j, s1, s3, eta, u, v, lattice=lat)
    mid = rbsde.backward_semigroup(spec, j, s2, s3, eta, u, v, lattice=lat)
    flow = rbsde.backward_semigroup(spec, j, s1, s2, mid, u, v, lattice=lat)
    gap = float(np.abs(whole - flow).max())
    rep.check("semigroup flow property", gap <= 1e-12, f"max |G_13 - G_12 G_23| = {gap:.3g}")
    pts = pde_obstacle.sample_points(spec, 1000, cfg.seed, cfg.time.T)
    scan = pde_obstacle.isaacs_scan(spec, pts)
    rep.check("minimax inequality", scan.min_gap >= -1e-12, f"min gap {scan.min_gap:.3g}")
    if spec.n == 1:
        sg, tg = _space_time(cfg, spec)
        pairs = max(1, cfg.proptest.pairs // 4)
        node_viol = 0
        for _ in range(pairs):
            a, b = _ordered_pair(spec, rng)
            node_viol += pde_obstacle.scheme_comparison_test(a, b, j, cfg.game.mode, tg, sg).violations
        rep.check("scheme comparison", node_viol == 0, f"{node_viol} node violations over {pairs} pairs")


COMMANDS: dict = {
    "simulate": cmd_simulate, "solve-rbsde": cmd_solve_rbsde, "solve-pde": cmd_solve_pde,
    "value": cmd_value, "dpp-test": cmd_dpp_test, "isaacs-scan": cmd_isaacs_scan,
    "nash-build": cmd_nash_build, "nash-verify": cmd_nash_verify, "nash-scan": cmd_nash_scan,
    "proptest": cmd_proptest,
}

# user-facing error classes (exit 2) vs module failures (exit 1)
USAGE_ERRORS = (ConfigError, sde_core.SpecError)


def run(subcommand: str, config, output: Optional[str] = None) -> RunReport:
    """Run a subcommand on a config path (or an already parsed ExperimentConfig).

    Config and spec errors propagate; module errors are recorded on the report.
    """
    if subcommand not in COMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    rep = RunReport(subcommand, cfg.source, output or cfg.output)
    t0 = time.perf_counter()
    try:
        COMMANDS[subcommand](cfg, rep)
    except USAGE_ERRORS:
        raise
    except Exception as exc:  # module error: keep context, fail the run
        rep.error = f"{type(exc).__name__} in {subcommand}: {exc}"
        rep.say(f"[ERROR] {rep.error}")
    rep.wall_clock = time.perf_counter() - t0
    rep.say(f"wall clock {rep.wall_clock:.2f} s")
    rep.write()
    return rep


def _catalog(args) -> int:
    entries = catalog.catalog_list()
    if args.json:
        print(json.dumps(entries, indent=2, default=str))
        return 0
    for e in entries:
        params = ", ".join(f"{k}={v!r}" for k, v in e["defaults"].items())
        print(f"{e['name']}: {e['summary']}\n    parameters: {params or '(none)'}")
    return 0


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(prog="reflgame", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment subcommand on a JSON config")
    p_run.add_argument("subcommand", choices=SUBCOMMANDS)
    p_run.add_argument("config", help="path to the JSON config")
    p_run.add_argument("--out", default=None, help="output directory (overrides the config's 'output')")
    p_cat = sub.add_parser("catalog", help="list the built-in coefficient families")
    p_cat.add_argument("--json", action="store_true", help="print as JSON")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "catalog":
        return _catalog(args)
    try:
        rep = run(args.subcommand, args.config, args.out)
    except USAGE_ERRORS as exc:
        print(f"reflgame: error: {exc}", file=sys.stderr)
        return 2
    print("\n".join(rep.lines))
    print(f"outputs in {rep.output}; {'PASS' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
