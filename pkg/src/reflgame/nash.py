"""Candidate epsilon-Nash control pairs, their verification, and punishment profiles.

Everything is exact on a recombining lattice.  A partition takes every
``stride``-th lattice level; at each partition level the nodes are grouped into
cells, and each cell is assigned a control sequence for the coming interval
(``chattering`` constant pieces).  Player 1 maximizes J_1, player 2 maximizes J_2.

Punishment: the punishing player copies the nominal control until the first
partition time strictly after the opponent's first control mismatch, then plays
its minimizing control from the upper value of the opponent's payoff
(``v`` record of inf_v sup_u J_1, resp. ``u`` record of inf_u sup_v J_2).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import rbsde
from .game_values import DpValue, compute_value_dp, pair_step, transition
from .pde_obstacle import isaacs_scan, sample_points
from .sde_core import GameSpec, SpecError


class CandidateConstructionError(RuntimeError):
    def __init__(self, failures: list, eps: float):
        self.failures = failures  # (interval, cell, best margin)
        worst = min(f[2] for f in failures)
        super().__init__(
            f"{len(failures)} cell(s) have no control sequence within eps = {eps} "
            f"of both values (worst best-margin {worst:.4g}); first: {failures[:5]}"
        )


# -- candidate pairs ---------------------------------------------------------------
@dataclass(eq=False)
class CandidatePair:
    """State-feedback control sequences, one per (partition interval, cell)."""

    spec: GameSpec
    lattice: rbsde.LatticeModel
    stride: int
    chattering: int
    cell_nodes: int
    eps: float
    choice: list  # per interval: sequence index per cell
    margins: list = field(default_factory=list)  # per interval: (cells, 2) margins G_j - W_j at representatives

    def __post_init__(self):
        if self.lattice.depth % self.stride:
            raise ValueError(f"depth {self.lattice.depth} not divisible by stride {self.stride}")
        if self.stride % self.chattering:
            raise ValueError("stride must be a multiple of the chattering depth")

    @property
    def num_intervals(self) -> int:
        return self.lattice.depth // self.stride

    @property
    def partition(self):
        return self.lattice.grid.coarsen(self.stride)

    @property
    def num_pairs(self) -> int:
        return len(self.spec.U) * len(self.spec.V)

    @property
    def cell_diameter(self) -> float:
        return (self.cell_nodes - 1) * self.lattice.dx

    def level(self, m: int) -> int:
        return m * self.stride

    def num_cells(self, m: int) -> int:
        return -(-self.lattice.size(self.level(m)) // self.cell_nodes)

    def cell_of(self, m: int, nodes) -> np.ndarray:
        return np.asarray(nodes) // self.cell_nodes

    def representatives(self, m: int) -> np.ndarray:
        size = self.lattice.size(self.level(m))
        starts = np.arange(self.num_cells(m)) * self.cell_nodes
        ends = np.minimum(starts + self.cell_nodes, size)
        return (starts + ends - 1) // 2

    def pair_of(self, q, sub) -> tuple:
        """Control pair (a, c) of sequence ``q`` in chattering piece ``sub``."""
        digit = (np.asarray(q) // self.num_pairs ** (self.chattering - 1 - np.asarray(sub))) % self.num_pairs
        return digit // len(self.spec.V), digit % len(self.spec.V)

    def pair_at(self, q, i: int) -> tuple:
        m = i // self.stride
        sub = (i - self.level(m)) // (self.stride // self.chattering)
        return self.pair_of(q, sub)

    def sequences_at(self, m: int, nodes) -> np.ndarray:
        return self.choice[m][self.cell_of(m, nodes)]

    @classmethod
    def constant(cls, spec: GameSpec, lattice: rbsde.LatticeModel, stride: int, a: int, c: int,
                 eps: float = 0.0, cell_nodes: int = 1) -> "CandidatePair":
        q = a * len(spec.V) + c
        cand = cls(spec, lattice, stride, 1, cell_nodes, eps, [])
        cand.choice = [np.full(cand.num_cells(m), q) for m in range(cand.num_intervals)]
        return cand

    def to_dict(self) -> dict:
        return {
            "stride": self.stride, "chattering": self.chattering, "cell_nodes": self.cell_nodes,
            "cell_diameter": self.cell_diameter, "eps": self.eps,
            "partition": self.partition.points.tolist(),
            "sequences": [
                [[list(map(int, self.pair_of(q, s))) for s in range(self.chattering)] for q in ch]
                for ch in self.choice
            ],
        }


def _interval_values(spec: GameSpec, j: int, cand: CandidatePair, m: int, q: int,
                     terminal: np.ndarray, keep: bool = False):
    """Reflected values of player j over interval m under sequence q (all nodes)."""
    lat = cand.lattice
    lo, hi = cand.level(m), cand.level(m + 1)
    y = terminal
    out = [y]
    for i in range(hi - 1, lo - 1, -1):
        a, c = cand.pair_at(q, i)
        y = np.maximum(spec.obstacle(j, lat.grid.points[i], lat.states(i)),
                       pair_step(spec, j, lat, i, y, int(a), int(c)))
        if keep:
            out.append(y)
    return out[::-1] if keep else y


def value_tables(spec: GameSpec, lattice: rbsde.LatticeModel) -> dict:
    """W_1 = sup_u inf_v J_1 and W_2 = sup_v inf_u J_2 on the lattice."""
    return {1: compute_value_dp(spec, 1, "minus", lattice, "u"),
            2: compute_value_dp(spec, 2, "minus", lattice, "v")}


def check_isaacs(spec: GameSpec, T: float, samples: int = 2000, seed: int = 0, tol: float = 1e-9):
    scan = isaacs_scan(spec, sample_points(spec, samples, seed, T), (1, 2), tol)
    if not scan.satisfied:
        raise SpecError(f"Isaacs condition fails (gap {scan.max_gap:.3g}); candidates need it")
    return scan


def construct_candidate(spec: GameSpec, lattice: rbsde.LatticeModel, stride: int, eps: float,
                        values: Optional[dict] = None, chattering: int = 1, cell_nodes: int = 1,
                        check: bool = True) -> CandidatePair:
    """Per cell, the control sequence maximizing min_j (G_j[W_j(next)] - W_j) at its representative."""
    if check:
        check_isaacs(spec, lattice.grid.T)
    values = values or value_tables(spec, lattice)
    cand = CandidatePair(spec, lattice, stride, chattering, cell_nodes, eps, [])
    nseq = cand.num_pairs ** chattering
    failures = []
    choice, margins = [None] * cand.num_intervals, [None] * cand.num_intervals
    for m in range(cand.num_intervals):
        lo, hi = cand.level(m), cand.level(m + 1)
        reps = cand.representatives(m)
        best = np.full(reps.size, -np.inf)
        arg = np.zeros(reps.size, dtype=int)
        per_j = np.zeros((reps.size, 2))
        for q in range(nseq):
            mj = np.stack([
                (_interval_values(spec, j, cand, m, q, values[j].at(hi)) - values[j].at(lo))[reps]
                for j in (1, 2)
            ], axis=1)
            score = mj.min(axis=1)
            better = score > best
            best[better], arg[better], per_j[better] = score[better], q, mj[better]
        choice[m], margins[m] = arg, per_j
        for cell in np.flatnonzero(best < -eps):
            failures.append((m, int(cell), float(best[cell])))
    cand.choice, cand.margins = choice, margins
    if failures:
        raise CandidateConstructionError(failures, eps)
    return cand


# -- exact verification --------------------------------------------------------------
@dataclass(eq=False)
class CandidateRun:
    """Y_j under the candidate at every level, split by active sequence; forward masses."""

    Y: dict  # j -> list over levels of {q: array over nodes}
    mass: list  # list over levels of {q: array over nodes}

    def payoff(self, j: int, root: int) -> float:
        (arr,) = self.Y[j][0].values()
        return float(arr[root])


def run_candidate(spec: GameSpec, cand: CandidatePair) -> CandidateRun:
    lat = cand.lattice
    N = lat.depth
    Y = {1: [None] * (N + 1), 2: [None] * (N + 1)}
    for j in (1, 2):
        entering = spec.terminal(j, lat.states(N))
        Y[j][N] = {-1: entering}
        for m in range(cand.num_intervals - 1, -1, -1):
            lo = cand.level(m)
            nodes = np.arange(lat.size(lo))
            seqs = cand.sequences_at(m, nodes)
            per_q = {int(q): _interval_values(spec, j, cand, m, int(q), entering, keep=True)
                     for q in np.unique(seqs)}
            for k in range(1, cand.stride):
                Y[j][lo + k] = {q: v[k] for q, v in per_q.items()}
            entering = np.empty(nodes.size)
            for q, v in per_q.items():
                entering[seqs == q] = v[0][seqs == q]
            Y[j][lo] = {int(q): entering for q in np.unique(seqs)} if lo else {-1: entering}
    # forward masses
    mass = [None] * (N + 1)
    cur = np.zeros(lat.size(0))
    cur[lat.root(0)] = 1.0
    state = None
    for i in range(N):
        if i % cand.stride == 0:
            m = i // cand.stride
            seqs = cand.sequences_at(m, np.arange(lat.size(i)))
            state = {int(q): np.where(seqs == q, cur, 0.0) for q in np.unique(seqs)}
        mass[i] = state
        t = lat.grid.points[i]
        x = lat.states(i)[:, None]
        nxt = {}
        for q, w in state.items():
            a, c = cand.pair_at(q, i)
            probs, _ = transition(spec, lat, i, int(a), int(c))
            out = np.zeros(lat.size(i + 1))
            for branch in range(3):
                out[branch : branch + w.size] += w * probs[:, branch]
            nxt[q] = out
        state = nxt
        cur = sum(nxt.values())
    mass[N] = {-1: cur}
    return CandidateRun(Y, mass)


@dataclass
class NashCertificate:
    payoffs: tuple  # (e_1, e_2)
    eps: float
    checkpoint_times: list
    probabilities: dict  # j -> list per checkpoint of P(Y_j >= W_j - eps)
    payoff_gaps: dict  # j -> |E[J_j] - e_j|
    value_gaps: dict  # j -> W_j(t0, x0) - e_j
    deviations: list = field(default_factory=list)  # dicts: player, kind, label, J_dev, J_nom, gap
    candidate: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    @property
    def min_probability(self) -> float:
        return min(min(p) for p in self.probabilities.values())

    @property
    def max_deviation_gap(self) -> float:
        return max((d["gap"] for d in self.deviations), default=-np.inf)

    def slacks(self) -> dict:
        """Quantities that must all be <= eps for acceptance."""
        out = {"probability": 1.0 - self.min_probability,
               "payoff": max(self.payoff_gaps.values())}
        if self.deviations:
            out["deviation"] = self.max_deviation_gap
        return out

    def accepted_at(self, eps: float) -> bool:
        return all(v <= eps + 1e-12 for v in self.slacks().values())

    @property
    def accepted(self) -> bool:
        return self.accepted_at(self.eps)

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted, "eps": self.eps, "payoffs": list(self.payoffs),
            "checkpoint_times": self.checkpoint_times,
            "probabilities": {str(j): p for j, p in self.probabilities.items()},
            "payoff_gaps": {str(j): g for j, g in self.payoff_gaps.items()},
            "value_gaps": {str(j): g for j, g in self.value_gaps.items()},
            "slacks": self.slacks(), "deviations": self.deviations,
            "candidate": self.candidate, "extra": self.extra,
        }

    def write(self, prefix) -> list:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        js = prefix.with_suffix(".json")
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float))
        cs = prefix.with_name(prefix.name + "_deviations.csv")
        with cs.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["player", "kind", "label", "J_deviate", "J_nominal", "gap"])
            for d in self.deviations:
                w.writerow([d["player"], d["kind"], d["label"], repr(d["J_dev"]), repr(d["J_nom"]), repr(d["gap"])])
        return [js, cs]


def verify_conditions(spec: GameSpec, cand: CandidatePair, eps: float, values: Optional[dict] = None,
                      checkpoints: Optional[list] = None) -> NashCertificate:
    """Exact lattice check of P(Y_j >= W_j - eps) per checkpoint and of the payoff means."""
    lat = cand.lattice
    values = values or value_tables(spec, lat)
    for j in (1, 2):
        if values[j].lattice is not lat and values[j].lattice.grid.steps != lat.depth:
            raise ValueError("value tables and candidate live on different lattices")
    run = run_candidate(spec, cand)
    levels = list(range(lat.depth + 1)) if checkpoints is None else list(checkpoints)
    probs = {1: [], 2: []}
    for j in (1, 2):
        for i in levels:
            W = values[j].at(i)
            masses = run.mass[i]
            total = 0.0
            for q, w in masses.items():
                y = run.Y[j][i].get(q, run.Y[j][i].get(-1))
                if y is None:
                    (y,) = run.Y[j][i].values()
                total += float(w[y >= W - eps].sum())
            probs[j].append(min(1.0, total))
    e = (run.payoff(1, lat.root(0)), run.payoff(2, lat.root(0)))
    cert = NashCertificate(
        payoffs=e, eps=eps, checkpoint_times=[float(lat.grid.points[i]) for i in levels],
        probabilities=probs,
        # the lattice expectation is exact, so E[J_j] coincides with e_j
        payoff_gaps={1: 0.0, 2: 0.0},
        value_gaps={j: values[j].root_value - e[j - 1] for j in (1, 2)},
        candidate=cand.to_dict(),
    )
    return cert


# -- punishment ------------------------------------------------------------------------
@dataclass(eq=False)
class PunishmentProfile:
    """Strategy of player ``punisher`` against deviations of the other player."""

    punisher: int
    candidate: CandidatePair
    table: list  # per level: punishing control index per node
    value: DpValue

    @property
    def deviator(self) -> int:
        return 3 - self.punisher

    def detection_level(self, first_mismatch_step: int) -> int:
        """First partition level at or after first_mismatch_step + 1."""
        s = self.candidate.stride
        return -(-(first_mismatch_step + 1) // s) * s


def build_punishment(spec: GameSpec, cand: CandidatePair, upper: Optional[dict] = None) -> dict:
    """Both players' profiles, keyed by the punishing player."""
    lat = cand.lattice
    upper = upper or {1: compute_value_dp(spec, 1, "plus", lat, "u"),
                      2: compute_value_dp(spec, 2, "plus", lat, "v")}
    return {
        2: PunishmentProfile(2, cand, upper[1].v_choice, upper[1]),
        1: PunishmentProfile(1, cand, upper[2].u_choice, upper[2]),
    }


# -- deviations --------------------------------------------------------------------------
@dataclass(frozen=True)
class Deviation:
    """Control rule of a deviating player: 'nominal', 'open-loop', 'switch' or 'feedback'."""

    kind: str
    label: str
    sequence: Optional[tuple] = None  # open-loop indices per step
    rule: Optional[Callable] = None  # feedback: rule(step, x) -> indices
    at: int = 0  # switch: first step of the fixed control
    control: int = 0

    @classmethod
    def nominal(cls) -> "Deviation":
        return cls("nominal", "nominal")

    @classmethod
    def open_loop(cls, seq, label: str = "") -> "Deviation":
        seq = tuple(int(s) for s in seq)
        return cls("open-loop", label or "seq:" + "".join(map(str, seq)), seq)

    @classmethod
    def feedback(cls, rule: Callable, label: str) -> "Deviation":
        return cls("feedback", label, rule=rule)

    @classmethod
    def switch(cls, at: int, control: int, label: str = "") -> "Deviation":
        """Follow the nominal control before step ``at``, then play ``control``."""
        return cls("switch", label or f"switch:{at}:{control}", at=int(at), control=int(control))

    def controls(self, i: int, x: np.ndarray, nominal: Optional[int]) -> np.ndarray:
        if self.kind == "switch":
            keep = i < self.at and nominal is not None
            return np.full(x.size, nominal if keep else self.control, dtype=int)
        if self.kind == "nominal":
            return np.full(x.size, 0 if nominal is None else nominal, dtype=int)
        if self.kind == "open-loop":
            return np.full(x.size, self.sequence[i], dtype=int)
        return np.broadcast_to(np.asarray(self.rule(i, x), dtype=int), x.shape)


def constant_deviations(size: int, steps: int) -> list:
    return [Deviation.open_loop([k] * steps, f"const:{k}") for k in range(size)]


def random_deviations(size: int, steps: int, count: int = 100, seed: int = 0, max_switches: int = 3) -> list:
    """Piecewise-constant open-loop deviations with 1..max_switches switch times."""
    rng = np.random.default_rng(seed)
    out = []
    for r in range(count):
        k = int(rng.integers(1, max_switches + 1))
        cuts = np.sort(rng.choice(np.arange(1, steps), size=min(k, steps - 1), replace=False))
        vals = rng.integers(size, size=cuts.size + 1)
        seq = np.repeat(vals, np.diff(np.concatenate([[0], cuts, [steps]])))
        out.append(Deviation.open_loop(seq, f"random:{r}"))
    return out


def _pair(deviator: int, d, other):
    return (d, other) if deviator == 1 else (other, d)


def deviation_value(spec: GameSpec, profile: PunishmentProfile, deviation: Optional[Deviation] = None,
                    best_response: bool = False) -> float:
    """J_j of the deviating player j against ``profile``, exactly on the lattice.

    The backward recursion runs over (node, sequence, mismatch flag) inside each
    partition interval; a raised flag turns into punishment at the next
    partition level.  With ``best_response`` the deviator optimizes its control
    at every (node, flag), giving the best feedback deviation.
    """
    cand = profile.candidate
    lat = cand.lattice
    N = lat.depth
    j = profile.deviator
    D = len(spec.U) if j == 1 else len(spec.V)
    grid = lat.grid

    def options(i, nominal):
        x = lat.states(i)
        if best_response:
            return [(d, np.ones(x.size, dtype=bool)) for d in range(D)]
        ctl = deviation.controls(i, x, nominal)
        return [(d, ctl == d) for d in range(D) if np.any(ctl == d)]

    def step(i, y_next_for, d, other, rows):
        a, c = _pair(j, d, other)
        idx = np.flatnonzero(rows)
        val = pair_step(spec, j, lat, i, y_next_for, int(a), int(c), nodes=idx)
        return idx, np.maximum(spec.obstacle(j, grid.points[i], lat.states(i)[idx]), val)

    # punishment phase, all levels
    y_pun = [None] * (N + 1)
    y_pun[N] = spec.terminal(j, lat.states(N))
    for i in range(N - 1, -1, -1):
        out = np.full(lat.size(i), -np.inf)
        pun = np.asarray(profile.table[i])
        for d, rows in options(i, None):
            for p in np.unique(pun[rows]):
                idx, val = step(i, y_pun[i + 1], d, int(p), rows & (pun == p))
                out[idx] = np.maximum(out[idx], val)
        y_pun[i] = out
    # tracking phase
    entering = y_pun[N]
    for m in range(cand.num_intervals - 1, -1, -1):
        lo, hi = cand.level(m), cand.level(m + 1)
        nodes = np.arange(lat.size(lo))
        seqs = cand.sequences_at(m, nodes)
        new_entering = np.empty(nodes.size)
        for q in np.unique(seqs):
            y0, y1 = entering, y_pun[hi]
            for i in range(hi - 1, lo - 1, -1):
                a_q, c_q = (int(z) for z in cand.pair_at(int(q), i))
                nom, other = (a_q, c_q) if j == 1 else (c_q, a_q)
                n0 = np.full(lat.size(i), -np.inf)
                n1 = np.full(lat.size(i), -np.inf)
                for d, rows in options(i, nom):
                    idx, v0 = step(i, y1 if d != nom else y0, d, other, rows)
                    n0[idx] = np.maximum(n0[idx], v0)
                    idx, v1 = step(i, y1, d, other, rows)
                    n1[idx] = np.maximum(n1[idx], v1)
                y0, y1 = n0, n1
            new_entering[seqs == q] = y0[seqs == q]
        entering = new_entering
    return float(entering[lat.root(0)])


def deviation_gap(spec: GameSpec, profile: PunishmentProfile, deviation: Deviation,
                  nominal_value: Optional[float] = None) -> dict:
    """J_j(deviation against profile) - J_j(nominal pair) for the deviating player j."""
    nom = deviation_value(spec, profile, Deviation.nominal()) if nominal_value is None else nominal_value
    dev = nom if deviation.kind == "nominal" else deviation_value(spec, profile, deviation)
    return {"player": profile.deviator, "kind": deviation.kind, "label": deviation.label,
            "J_dev": dev, "J_nom": nom, "gap": dev - nom}


def deviation_table(spec: GameSpec, profiles: dict, random_count: int = 100, seed: int = 0,
                    best_response: bool = True) -> list:
    """Constants + random piecewise-constant deviations (+ best response) for both players."""
    rows = []
    for punisher, prof in sorted(profiles.items()):
        j = prof.deviator
        size = len(spec.U) if j == 1 else len(spec.V)
        N = prof.candidate.lattice.depth
        nom = deviation_value(spec, prof, Deviation.nominal())
        devs = constant_deviations(size, N) + random_deviations(size, N, random_count, seed + j)
        rows.extend(deviation_gap(spec, prof, d, nom) for d in devs)
        if best_response:
            br = deviation_value(spec, prof, best_response=True)
            rows.append({"player": j, "kind": "best-response", "label": "best-response",
                         "J_dev": br, "J_nom": nom, "gap": br - nom})
    return rows


# -- path simulation on the lattice ---------------------------------------------------------
@dataclass
class ProfilePaths:
    nodes: np.ndarray  # (P, N+1) node index per level
    u: np.ndarray  # (P, N) played
    v: np.ndarray
    nominal_u: np.ndarray  # (P, N) candidate's control along the realized path
    nominal_v: np.ndarray
    first_mismatch: dict  # player -> (P,) step of first mismatch (N if none)
    detection: dict  # punisher -> (P,) detection level (N+stride if none)


def simulate_profiles(spec: GameSpec, cand: CandidatePair, profiles: dict, num_paths: int, seed: int = 0,
                      deviation: Optional[tuple] = None) -> ProfilePaths:
    """Random lattice paths with both players running their profiles.

    ``deviation = (player, Deviation)`` replaces that player's profile by the
    deviation rule; the other player keeps its punishment profile.
    """
    lat = cand.lattice
    N = lat.depth
    rng = np.random.default_rng(seed)
    P = num_paths
    nodes = np.empty((P, N + 1), dtype=int)
    nodes[:, 0] = lat.root(0)
    out = {k: np.empty((P, N), dtype=int) for k in ("u", "v", "nu", "nv")}
    mismatch = {1: np.full(P, N), 2: np.full(P, N)}
    never = N + cand.stride
    detect = {1: np.full(P, never), 2: np.full(P, never)}
    dev_player, dev_rule = deviation if deviation else (None, None)
    for i in range(N):
        m = i // cand.stride
        if i % cand.stride == 0:
            q = cand.sequences_at(m, nodes[:, i])
        a_nom, c_nom = (np.asarray(z, dtype=int) for z in cand.pair_at(q, i))
        k = nodes[:, i]
        x = lat.states(i)[k]
        played = {}
        for j, nom in ((1, a_nom), (2, c_nom)):
            if j == dev_player:
                ctl = np.empty(P, dtype=int)
                for val in np.unique(nom):
                    sel = nom == val
                    ctl[sel] = dev_rule.controls(i, x[sel], int(val))
                played[j] = ctl
            else:
                detected = i >= detect[j]
                table = np.asarray(profiles[j].table[i])[k] if j in profiles else nom
                played[j] = np.where(detected, table, nom)
        for j, nom in ((1, a_nom), (2, c_nom)):
            fresh = (played[j] != nom) & (mismatch[j] == N)
            mismatch[j][fresh] = i
            opp = 3 - j
            if opp in profiles:
                lvl = -(-(i + 1) // cand.stride) * cand.stride
                detect[opp] = np.where(fresh & (detect[opp] == never), lvl, detect[opp])
        out["u"][:, i], out["v"][:, i] = played[1], played[2]
        out["nu"][:, i], out["nv"][:, i] = a_nom, c_nom
        branch = np.empty(P, dtype=int)
        t = lat.grid.points[i]
        xs = lat.states(i)[:, None]
        draw = rng.uniform(size=P)
        for a, c in spec.control_pairs:
            sel = (played[1] == a) & (played[2] == c)
            if not sel.any():
                continue
            probs, _ = transition(spec, lat, i, a, c)
            cum = np.cumsum(probs[k[sel]], axis=1)
            branch[sel] = (draw[sel][:, None] > cum[:, :2]).sum(axis=1)
        nodes[:, i + 1] = k + branch
    return ProfilePaths(nodes, out["u"], out["v"], out["nu"], out["nv"], mismatch, detect)


# -- experiments ------------------------------------------------------------------------------
def cell_nodes_for(eps: float, lattice: rbsde.LatticeModel, constant: float) -> int:
    """Largest cell (in nodes) whose diameter stays below eps / (2 C)."""
    bound = eps / (2.0 * constant)
    return max(1, int(math.floor(bound / lattice.dx - 1e-12)) + 1)


@dataclass
class ExistenceReport:
    ladder: list
    payoffs: list
    accepted: list
    distances: list  # between consecutive payoff pairs

    @property
    def final_distance(self) -> float:
        return self.distances[-1] if self.distances else 0.0


def existence_scan(spec: GameSpec, lattice: rbsde.LatticeModel, stride: int,
                   ladder=(0.2, 0.1, 0.05), chattering: int = 1, constant: Optional[float] = None,
                   deviations: int = 0, seed: int = 0) -> ExistenceReport:
    """Candidate + verification for each eps of the ladder; Cauchy behaviour of the payoffs."""
    check_isaacs(spec, lattice.grid.T)
    values = value_tables(spec, lattice)
    C = constant if constant is not None else spec.lipschitz * math.exp(spec.lipschitz * lattice.grid.T)
    pays, acc = [], []
    for eps in ladder:
        cand = construct_candidate(spec, lattice, stride, eps, values, chattering,
                                   cell_nodes_for(eps, lattice, C), check=False)
        cert = verify_conditions(spec, cand, eps, values)
        if deviations:
            cert.deviations = deviation_table(spec, build_punishment(spec, cand), deviations, seed, False)
        pays.append(cert.payoffs)
        acc.append(cert.accepted)
    dist = [float(np.hypot(pays[k + 1][0] - pays[k][0], pays[k + 1][1] - pays[k][1]))
            for k in range(len(pays) - 1)]
    return ExistenceReport(list(ladder), pays, acc, dist)


@dataclass
class EnvelopeReport:
    eps0: float
    eps1: float
    tau: float
    max_gap: float
    nominal: dict
    rows: list


def punishment_envelope(spec: GameSpec, lattice: rbsde.LatticeModel, stride: int, eps0: float,
                        eps1: float, random_count: int = 100, seed: int = 0) -> EnvelopeReport:
    """Largest deviation gain against the punishment profiles, for the knobs (eps0, eps1, tau).

    eps1 bounds the punishing controls' suboptimality; the per-node saddle record
    attains the upper value exactly, so the realized eps1 is zero.
    """
    cand = construct_candidate(spec, lattice, stride, eps0)
    profiles = build_punishment(spec, cand)
    rows = deviation_table(spec, profiles, random_count, seed, best_response=True)
    tau = float(lattice.grid.points[stride] - lattice.grid.points[0])
    return EnvelopeReport(eps0, eps1, tau, max(r["gap"] for r in rows),
                          {r["player"]: r["J_nom"] for r in rows}, rows)
