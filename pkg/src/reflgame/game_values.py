"""Game values by dynamic programming over the one-step reflected backward operator.

At every lattice node the one-step value of each control pair is

    Yhat_{a,c} = E_{a,c}[W_{i+1}] + f_j(t_i, x, Yhat_{a,c}, Z_{a,c}) dt

and the node value is max(h_j, sup-inf or inf-sup of Yhat over the control grids).
With singleton control sets this is exactly the reflected tree recursion of
:mod:`reflgame.rbsde`.
"""
from __future__ import annotations

import csv
import math
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rbsde
from .pde_obstacle import ValueGrid, default_maximizer, isaacs_scan, minimax, sample_points
from .sde_core import GameSpec, PathBundle, SpecError, TimeGrid, simulate_forward, ControlPath


class IsaacsFailure(SpecError):
    pass


_TRANSITIONS: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def transition(spec: GameSpec, lattice: rbsde.LatticeModel, i: int, a: int, c: int):
    """Branch probabilities and increments of level i under (a, c), cached per spec and lattice."""
    per_spec = _TRANSITIONS.setdefault(spec, weakref.WeakKeyDictionary())
    table = per_spec.setdefault(lattice, {})
    key = (i, int(a), int(c))
    if key not in table:
        t = lattice.grid.points[i]
        x = lattice.states(i)[:, None]
        table[key] = lattice.transition(i, spec.drift(t, x, a, c), spec.vol(t, x, a, c))
    return table[key]


def pair_step(spec: GameSpec, j: int, lattice: rbsde.LatticeModel, i: int, y_next: np.ndarray,
              a: int, c: int, nodes: Optional[np.ndarray] = None) -> np.ndarray:
    """Unreflected one-step value Yhat at level ``i`` under the constant pair (a, c).

    ``y_next`` holds level i+1 values.  ``nodes`` restricts the output to some
    level-i node positions (their three successors must be present in y_next).
    """
    grid = lattice.grid
    t = grid.points[i]
    dt = grid.points[i + 1] - t
    x = lattice.states(i)[:, None]
    probs, dB = transition(spec, lattice, i, a, c)
    E = lattice.expectation(y_next, probs)
    Z = lattice.martingale_z(y_next, probs, dB, dt)
    if nodes is not None:
        x, E, Z = x[nodes], E[nodes], Z[nodes]
    return rbsde.implicit_step(E, dt, lambda y: spec.driver(j, t, x, y, Z, a, c))


@dataclass(eq=False)
class DpValue:
    """Per-level node values and the saddle selection record of a DP solve."""

    lattice: rbsde.LatticeModel
    j: int
    mode: str
    maximizer: str
    start: int
    levels: list  # W at levels start..stop (full level arrays)
    u_choice: list  # per level start..stop-1
    v_choice: list
    spec_hash: str = ""

    @property
    def stop(self) -> int:
        return self.start + len(self.levels) - 1

    def at(self, level: int) -> np.ndarray:
        return self.levels[level - self.start]

    @property
    def root_value(self) -> float:
        return float(self.levels[0][self.lattice.root(self.start)])

    @property
    def grid(self) -> ValueGrid:
        """Values on the level-0 node set (offsets -M..M), which every level contains."""
        lat = self.lattice
        rows = [self.at(i)[lat.common_slice(i)] for i in range(self.start, self.stop + 1)]
        return ValueGrid(lat.grid.points[self.start : self.stop + 1].copy(), lat.states(0),
                         np.array(rows), self.j, self.mode, "dp", self.spec_hash, self.maximizer, 0.0)

    def saddle_rows(self):
        lat = self.lattice
        for i in range(self.start, self.stop):
            xs = lat.states(i)
            for node, (a, c) in enumerate(zip(self.u_choice[i - self.start], self.v_choice[i - self.start])):
                yield node, i, float(lat.grid.points[i]), float(xs[node]), int(a), int(c)

    def saddle_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "time_index", "t", "x", "u_index", "v_index"])
            for row in self.saddle_rows():
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4], row[5]])
        return path


def compute_value_dp(spec: GameSpec, j: int, mode: str, lattice: rbsde.LatticeModel,
                     maximizer: Optional[str] = None, start: int = 0, stop: Optional[int] = None,
                     terminal_values=None) -> DpValue:
    """Backward DP of the lower (minus) or upper (plus) value of player j on a lattice."""
    if spec.n != 1:
        raise SpecError("lattice DP is one-dimensional")
    mx = maximizer or default_maximizer(j)
    stop = lattice.depth if stop is None else stop
    if not 0 <= start <= stop <= lattice.depth:
        raise ValueError(f"need 0 <= start <= stop <= {lattice.depth}")
    if stop > start:
        lattice.grid.subgrid(start, stop).check_contraction(spec.contraction_constant)
    grid = lattice.grid
    if terminal_values is None:
        w = spec.terminal(j, lattice.states(stop))
    else:
        w = np.asarray(terminal_values, dtype=float)
        if w.shape != (lattice.size(stop),):
            raise ValueError(f"terminal values must cover the {lattice.size(stop)} nodes of level {stop}")
    levels, us, vs = [w], [], []
    for i in range(stop - 1, start - 1, -1):
        table = np.empty((len(spec.U), len(spec.V), lattice.size(i)))
        for a, c in spec.control_pairs:
            table[a, c] = pair_step(spec, j, lattice, i, w, a, c)
        val, ia, ic = minimax(table, mode, mx)
        w = np.maximum(spec.obstacle(j, grid.points[i], lattice.states(i)), val)
        levels.append(w)
        us.append(ia)
        vs.append(ic)
    return DpValue(lattice, j, mode, mx, start, levels[::-1], us[::-1], vs[::-1], spec.fingerprint())


def test_dpp(spec: GameSpec, j: int, mode: str, lattice: rbsde.LatticeModel, k: int) -> float:
    """Max level-0 discrepancy between one DP pass and the split-at-k composition."""
    if not 0 <= k <= lattice.depth:
        raise ValueError("split index must lie in [0, depth]")
    full = compute_value_dp(spec, j, mode, lattice)
    inner = compute_value_dp(spec, j, mode, lattice, start=k)
    outer = compute_value_dp(spec, j, mode, lattice, stop=k, terminal_values=inner.at(k))
    return float(np.max(np.abs(full.at(0) - outer.at(0))))


test_dpp.__test__ = False


# -- regression variant ---------------------------------------------------------
def controls_move_dynamics(spec: GameSpec, samples: int = 200, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    lo, hi = spec.domain
    x = rng.uniform(lo, hi, size=(samples, spec.n))
    t = float(rng.uniform())
    b0, s0 = spec.drift(t, x, 0, 0), spec.vol(t, x, 0, 0)
    return any(
        not (np.allclose(spec.drift(t, x, a, c), b0) and np.allclose(spec.vol(t, x, a, c), s0))
        for a, c in spec.control_pairs
    )


@dataclass(eq=False)
class LsmcValue:
    values: np.ndarray  # W at the start step, per path
    decision: object  # callable x -> W_start(x)
    std_error: float

    @property
    def mean(self) -> float:
        return float(self.values.mean())


def compute_value_lsmc(spec: GameSpec, j: int, mode: str, bundle: PathBundle, degree: int = 3,
                       maximizer: Optional[str] = None, start: int = 0, stop: Optional[int] = None,
                       terminal_values=None) -> LsmcValue:
    """Regression version of :func:`compute_value_dp` for control-free dynamics.

    Controls may enter the driver only (the bundle's paths must be valid under
    every pair).  Targets are pathwise, as in :func:`rbsde.solve_lsmc`, following
    the pair selected at each path.
    """
    if controls_move_dynamics(spec):
        raise SpecError("the regression DP needs dynamics that do not depend on the controls")
    mx = maximizer or default_maximizer(j)
    grid = bundle.grid
    stop = grid.steps if stop is None else stop
    grid.subgrid(start, stop).check_contraction(spec.contraction_constant)
    X = bundle.states
    P = bundle.num_paths
    target = spec.terminal(j, X[:, stop]) if terminal_values is None else np.array(terminal_values, dtype=float)
    pairs = spec.control_pairs
    for i in range(stop - 1, start - 1, -1):
        t = grid.points[i]
        dt = grid.points[i + 1] - t
        x = X[:, i]
        S = spec.obstacle(j, t, x)
        proj = rbsde.project(x, np.column_stack([target, target[:, None] * bundle.increments[:, i]]),
                             degree, S, i)

        def decide(xq, Sq, proj=proj, t=t, dt=dt):
            fitted = proj.predict(xq, Sq)
            E, Z = fitted[:, 0], fitted[:, 1:] / dt
            table = np.empty((len(spec.U), len(spec.V), xq.shape[0]))
            for a, c in pairs:
                table[a, c] = rbsde.implicit_step(E, dt, lambda y: spec.driver(j, t, xq, y, Z, a, c))
            val, ia, ic = minimax(table, mode, mx)
            return val, ia, ic, Z

        val, ia, ic, Z = decide(x, S)
        w = np.maximum(S, val)
        if i == start:
            resid = target - proj.predict(x, S)[:, 0]
            se = float(np.std(target) if proj.basis.size == 1 else np.sqrt(np.mean(resid ** 2))) / math.sqrt(P)
            fn = lambda xq, decide=decide, t=t: np.maximum(
                spec.obstacle(j, t, xq), decide(xq, spec.obstacle(j, t, xq))[0])
            return LsmcValue(w, fn, se)
        f_sel = np.empty(P)
        for a, c in pairs:
            rows = (ia == a) & (ic == c)
            if rows.any():
                f_sel[rows] = spec.driver(j, t, x[rows], val[rows], Z[rows], a, c)
        target = np.where(val < S, S, target + dt * f_sel)
    raise ValueError("empty backward range (start == stop)")


@dataclass
class LsmcDppReport:
    one_pass: list
    two_stage: list
    discrepancy: float
    combined_se: float

    @property
    def passed(self) -> bool:
        return self.discrepancy <= 3.0 * self.combined_se


def test_dpp_lsmc(spec: GameSpec, j: int, mode: str, grid: TimeGrid, x0, k: int,
                  num_paths: int = 10_000, repeats: int = 5, seed: int = 0, degree: int = 3) -> LsmcDppReport:
    """One-pass vs split-at-k regression values, on independent path sets.

    The inner stage's value at t_k is turned into a function of the state and
    evaluated on fresh outer paths.  Standard errors come from ``repeats``
    independent seeds.
    """
    if not 0 < k < grid.steps:
        raise ValueError("split index must lie strictly inside the grid")
    zero_u = ControlPath.constant(0, grid.steps)
    zero_v = ControlPath.constant(0, grid.steps)
    one, two = [], []
    for r in range(repeats):
        paths = [simulate_forward(spec, grid, x0, zero_u, zero_v, num_paths, seed + 3 * r + q) for q in range(3)]
        one.append(compute_value_lsmc(spec, j, mode, paths[0], degree).mean)
        inner = compute_value_lsmc(spec, j, mode, paths[1], degree, start=k)
        eta = inner.decision(paths[2].states[:, k])
        two.append(compute_value_lsmc(spec, j, mode, paths[2], degree, stop=k, terminal_values=eta).mean)
    disc = abs(float(np.mean(one)) - float(np.mean(two)))
    se = math.sqrt((np.var(one, ddof=1) + np.var(two, ddof=1)) / repeats)
    return LsmcDppReport(one, two, disc, se)


test_dpp_lsmc.__test__ = False


# -- regularity and coincidence ---------------------------------------------------
@dataclass
class RegularityReport:
    lipschitz_x: float
    holder_t: float
    levels: int


def regularity_probe(value, trusted_only: bool = True) -> RegularityReport:
    """Empirical max |dW|/|dx| over neighbouring nodes and |dW|/((1+|x|)|dt|^(1/2)) over time pairs."""
    vg = value.grid if isinstance(value, DpValue) else value
    W = vg.values
    if W.shape[0] < 3:
        raise ValueError("need at least 3 time levels")
    mask = np.ones_like(W, dtype=bool)
    if trusted_only and vg.sigma_max > 0:
        mask = np.array([vg.trusted(i) for i in range(W.shape[0])])
    slopes = np.abs(np.diff(W, axis=1)) / np.diff(vg.xs)
    pair_ok = mask[:, 1:] & mask[:, :-1]
    lip = float(slopes[pair_ok].max()) if pair_ok.any() else 0.0
    weight = 1.0 + np.abs(vg.xs)
    hol = 0.0
    for i in range(W.shape[0] - 1):
        dt = np.sqrt(vg.times[i + 1 :] - vg.times[i])[:, None]
        ratio = np.abs(W[i + 1 :] - W[i]) / (weight * dt)
        ok = mask[i + 1 :] & mask[i]
        if ok.any():
            hol = max(hol, float(ratio[ok].max()))
    return RegularityReport(lip, hol, W.shape[0])


@dataclass
class CoincidenceReport:
    gaps: dict  # j -> max node |W_j - U_j|
    isaacs_gap: float

    @property
    def max_gap(self) -> float:
        return max(self.gaps.values())


def coincidence_test(spec: GameSpec, lattice: rbsde.LatticeModel, players=(1, 2),
                     scan_samples: int = 2000, seed: int = 0, tol: float = 1e-9) -> CoincidenceReport:
    """Max node gap between lower and upper DP values; refuses specs failing the Isaacs scan."""
    scan = isaacs_scan(spec, sample_points(spec, scan_samples, seed, lattice.grid.T), players, tol)
    if not scan.satisfied:
        raise IsaacsFailure(
            f"Isaacs condition fails (gap {scan.max_gap:.3g} at {scan.worst_point}); "
            "the lower/upper value gap would carry no meaning"
        )
    gaps = {}
    for j in players:
        lo = compute_value_dp(spec, j, "minus", lattice)
        hi = compute_value_dp(spec, j, "plus", lattice)
        gaps[j] = float(max(np.abs(a - b).max() for a, b in zip(lo.levels, hi.levels)))
    return CoincidenceReport(gaps, scan.max_gap)
