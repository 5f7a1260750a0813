"""Obstacle Isaacs equations in one space dimension: Hamiltonians and an explicit monotone scheme.

For player j, sup-inf ("minus") and inf-sup ("plus") Hamiltonians are taken over
the finite control grids:

    H_j(t, x, y, p, A; u, v) = 1/2 tr(sigma sigma^T A) + p.b + f_j(t, x, y, p^T sigma, u, v)

The maximizing player defaults to u for j = 1 and v for j = 2, so W_1 = sup_u inf_v
and W_2 = sup_v inf_u; pass ``maximizer`` to override.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .sde_core import GameSpec, SpecError, TimeGrid

MODES = ("minus", "plus")


class CFLError(SpecError):
    pass


def default_maximizer(j: int) -> str:
    return "u" if j == 1 else "v"


def minimax(values: np.ndarray, mode: str, maximizer: str = "u"):
    """Reduce a ``(|U|, |V|, m)`` table to sup-inf (minus) or inf-sup (plus).

    Returns ``(value, iu, iv)``.  The outer optimizer is chosen first, ties going
    to the lowest index, and the inner one is its best response.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if maximizer not in ("u", "v"):
        raise ValueError("maximizer must be 'u' or 'v'")
    Y = values if maximizer == "u" else values.transpose(1, 0, 2)
    cols = np.arange(Y.shape[2])
    if mode == "minus":
        a = np.argmax(Y.min(axis=1), axis=0)
        b = np.argmin(Y[a, :, cols], axis=1)
    else:
        b = np.argmin(Y.max(axis=0), axis=0)
        a = np.argmax(Y[:, b, cols], axis=0)
    val = Y[a, b, cols]
    return (val, a, b) if maximizer == "u" else (val, b, a)


def hamiltonian_table(spec: GameSpec, j: int, t, x, y, p, A) -> np.ndarray:
    """H_j at every control pair: shape ``(|U|, |V|, m)``.

    ``x`` and ``p`` are ``(m, n)``, ``y`` is ``(m,)`` and ``A`` is ``(m, n, n)``.
    """
    x = spec._x(x)
    m = x.shape[0]
    y = np.broadcast_to(np.asarray(y, dtype=float), (m,))
    p = np.asarray(p, dtype=float).reshape(m, spec.n)
    A = np.asarray(A, dtype=float).reshape(m, spec.n, spec.n)
    out = np.empty((len(spec.U), len(spec.V), m))
    for a, c in spec.control_pairs:
        b = spec.drift(t, x, a, c)
        s = spec.vol(t, x, a, c)
        z = np.einsum("mn,mnd->md", p, s)
        diffusion = 0.5 * np.einsum("mnd,mkd,mnk->m", s, s, A)
        out[a, c] = diffusion + (p * b).sum(axis=1) + spec.driver(j, t, x, y, z, a, c)
    return out


@dataclass
class HamiltonianReport:
    minus: float
    plus: float
    gap: float
    arg_minus: tuple  # (u index, v index)
    arg_plus: tuple


def hamiltonian(spec: GameSpec, j: int, t: float, x, y: float, p, A,
                maximizer: Optional[str] = None) -> HamiltonianReport:
    """Sup-inf and inf-sup Hamiltonians at a single point, by exhaustive enumeration."""
    mx = maximizer or default_maximizer(j)
    x = np.asarray(x, dtype=float).reshape(1, spec.n)
    tab = hamiltonian_table(spec, j, t, x, [y], np.reshape(p, (1, spec.n)),
                            np.reshape(A, (1, spec.n, spec.n)))
    lo, ua, va = minimax(tab, "minus", mx)
    hi, ub, vb = minimax(tab, "plus", mx)
    return HamiltonianReport(
        float(lo[0]), float(hi[0]), float(hi[0] - lo[0]),
        (int(ua[0]), int(va[0])), (int(ub[0]), int(vb[0])),
    )


# -- grids -------------------------------------------------------------------
@dataclass(frozen=True)
class SpaceGrid:
    x_min: float
    x_max: float
    num: int
    boundary: str = "zero-curvature"

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("need x_max > x_min")
        if self.num < 5:
            raise ValueError("a space grid needs at least 3 interior nodes")

    @classmethod
    def with_spacing(cls, x_min: float, x_max: float, dx: float) -> "SpaceGrid":
        return cls(x_min, x_max, int(round((x_max - x_min) / dx)) + 1)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.num - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.num)


@dataclass(eq=False)
class ValueGrid:
    """W_j or U_j on a time-space grid: ``values[i, k]`` at (times[i], xs[k])."""

    times: np.ndarray
    xs: np.ndarray
    values: np.ndarray
    j: int
    mode: str
    provenance: str  # "pde" | "dp"
    spec_hash: str = ""
    maximizer: str = "u"
    sigma_max: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(np.max(np.diff(self.times)))

    @property
    def dx(self) -> float:
        return float(self.xs[1] - self.xs[0])

    def value_at(self, i: int, x) -> np.ndarray:
        return np.interp(x, self.xs, self.values[i])

    def trusted(self, i: int) -> np.ndarray:
        """Nodes farther than 2 sqrt(T - t_i) sigma_max from the space boundary."""
        reach = 2.0 * np.sqrt(self.times[-1] - self.times[i]) * self.sigma_max
        return (self.xs - self.xs[0] >= reach - 1e-12) & (self.xs[-1] - self.xs >= reach - 1e-12)

    def header(self) -> dict:
        return {
            "j": self.j, "mode": self.mode, "provenance": self.provenance,
            "maximizer": self.maximizer, "spec_hash": self.spec_hash,
            "sigma_max": self.sigma_max, "times": self.times.tolist(), "xs": self.xs.tolist(),
            **({"meta": self.meta} if self.meta else {}),
        }

    def to_csv(self, path) -> list:
        """CSV matrix (rows: time, columns: space) plus a ``.json`` header."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        head = "t," + ",".join(f"{x:.12g}" for x in self.xs)
        rows = [f"{t:.12g}," + ",".join(repr(float(w)) for w in row)
                for t, row in zip(self.times, self.values)]
        path.write_text(head + "\n" + "\n".join(rows) + "\n")
        hdr = path.with_suffix(".json")
        hdr.write_text(json.dumps(self.header(), indent=2, sort_keys=True))
        return [path, hdr]

    @classmethod
    def from_csv(cls, path) -> "ValueGrid":
        path = Path(path)
        hdr = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(
            np.asarray(hdr["times"]), np.asarray(hdr["xs"]), data[:, 1:], hdr["j"], hdr["mode"],
            hdr["provenance"], hdr["spec_hash"], hdr["maximizer"], hdr["sigma_max"], hdr.get("meta", {}),
        )


# -- explicit scheme -----------------------------------------------------------
def coefficient_sup(spec: GameSpec, tgrid: TimeGrid, sgrid: SpaceGrid):
    """(max sigma, max |b|): declared bounds when present, else sampled on the grids."""
    s_dec, b_dec = spec.bounds.get("sigma"), spec.bounds.get("b")
    if s_dec is not None and b_dec is not None:
        return float(s_dec), float(b_dec)
    xs = sgrid.nodes
    smax = bmax = 0.0
    for t in tgrid.points[:: max(1, tgrid.steps // 20)]:
        for a, c in spec.control_pairs:
            smax = max(smax, float(np.sqrt((spec.vol(t, xs, a, c) ** 2).sum(axis=(1, 2))).max()))
            bmax = max(bmax, float(np.abs(spec.drift(t, xs, a, c)).max()))
    return (smax if s_dec is None else float(s_dec)), (bmax if b_dec is None else float(b_dec))


def cfl_limit(sigma_max: float, b_max: float, dx: float) -> float:
    denom = sigma_max ** 2 + dx * b_max
    return np.inf if denom == 0 else dx * dx / denom


def _stencil(W: np.ndarray, dx: float):
    """Central second difference and one-sided first differences; zero curvature at the ends."""
    D2 = np.zeros_like(W)
    D2[1:-1] = (W[2:] - 2.0 * W[1:-1] + W[:-2]) / dx ** 2
    Dp = np.zeros_like(W)
    Dm = np.zeros_like(W)
    Dp[:-1] = (W[1:] - W[:-1]) / dx
    Dm[1:] = (W[1:] - W[:-1]) / dx
    Dc = np.empty_like(W)
    Dc[1:-1] = (W[2:] - W[:-2]) / (2.0 * dx)
    Dc[0], Dc[-1] = Dp[0], Dm[-1]
    return D2, Dp, Dm, Dc


def scheme_table(spec: GameSpec, j: int, t: float, xs: np.ndarray, W: np.ndarray, dx: float) -> np.ndarray:
    """Discrete H_j(W) per control pair, shape ``(|U|, |V|, m)``.

    Drift is upwinded; at the two end nodes the drift pointing out of the grid is
    dropped, so every node depends on its neighbours with nonnegative weights.
    """
    D2, Dp, Dm, Dc = _stencil(W, dx)
    x = xs[:, None]
    out = np.empty((len(spec.U), len(spec.V), xs.size))
    for a, c in spec.control_pairs:
        b = spec.drift(t, x, a, c)[:, 0]
        s = spec.vol(t, x, a, c)[:, 0, :]
        bp, bm = np.maximum(b, 0.0), np.maximum(-b, 0.0)
        bp[-1] = 0.0
        bm[0] = 0.0
        z = Dc[:, None] * s
        out[a, c] = (0.5 * (s ** 2).sum(axis=1) * D2 + bp * Dp - bm * Dm
                     + spec.driver(j, t, x, W, z, a, c))
    return out


def solve_obstacle_isaacs(spec: GameSpec, j: int, mode: str, tgrid: TimeGrid, sgrid: SpaceGrid,
                          maximizer: Optional[str] = None) -> ValueGrid:
    """Backward sweep W_i = max(h_j(t_i), W_{i+1} + dt H^{mode}(W_{i+1})), W_N = Phi_j."""
    if spec.n != 1:
        raise SpecError("the finite-difference solver is one-dimensional")
    mx = maximizer or default_maximizer(j)
    smax, bmax = coefficient_sup(spec, tgrid, sgrid)
    limit = cfl_limit(smax, bmax, sgrid.dx)
    if tgrid.mesh > limit * (1 + 1e-12):
        raise CFLError(f"CFL violated: dt = {tgrid.mesh:.4g} > dx^2/(sigma^2 + dx |b|) = {limit:.4g}")
    xs = sgrid.nodes
    N = tgrid.steps
    values = np.empty((N + 1, xs.size))
    values[N] = spec.terminal(j, xs)
    for i in range(N - 1, -1, -1):
        t = tgrid.points[i]
        dt = tgrid.points[i + 1] - t
        W = values[i + 1]
        H, _, _ = minimax(scheme_table(spec, j, t, xs, W, sgrid.dx), mode, mx)
        values[i] = np.maximum(spec.obstacle(j, t, xs), W + dt * H)
        if not np.isfinite(values[i]).all():
            raise FloatingPointError(f"non-finite value at time index {i}")
    return ValueGrid(tgrid.points.copy(), xs, values, j, mode, "pde", spec.fingerprint(), mx, smax,
                     {"cfl_limit": limit})


def residual_check(vg: ValueGrid, spec: GameSpec, j: Optional[int] = None,
                   mode: Optional[str] = None, trusted_only: bool = False) -> float:
    """Max over interior nodes of |min(W_i - h, (W_i - W_{i+1})/dt - H(W_{i+1}))|."""
    j = vg.j if j is None else j
    mode = vg.mode if mode is None else mode
    worst = 0.0
    dx = vg.dx
    for i in range(vg.times.size - 1):
        t = vg.times[i]
        dt = vg.times[i + 1] - t
        H, _, _ = minimax(scheme_table(spec, j, t, vg.xs, vg.values[i + 1], dx), mode, vg.maximizer)
        r = np.minimum(vg.values[i] - spec.obstacle(j, t, vg.xs),
                       (vg.values[i] - vg.values[i + 1]) / dt - H)
        mask = np.zeros(vg.xs.size, dtype=bool)
        mask[1:-1] = True
        if trusted_only:
            mask &= vg.trusted(i)
        if mask.any():
            worst = max(worst, float(np.abs(r[mask]).max()))
    return worst


# -- Isaacs condition ----------------------------------------------------------
@dataclass
class IsaacsReport:
    max_gap: float
    mean_gap: float
    min_gap: float  # negative would contradict the minimax inequality
    worst_point: dict
    satisfied: bool
    samples: int
    by_player: dict = field(default_factory=dict)


def sample_points(spec: GameSpec, count: int, seed: int = 0, T: float = 1.0, scale: float = 2.0,
                  time_levels: int = 17) -> dict:
    """Random (t, x, y, p, A); times are drawn from ``time_levels`` equally spaced values."""
    rng = np.random.default_rng(seed)
    lo, hi = spec.domain
    n = spec.n
    A = rng.normal(scale=scale, size=(count, n, n))
    return {
        "t": rng.choice(np.linspace(0.0, T, time_levels), size=count),
        "x": rng.uniform(lo, hi, size=(count, n)),
        "y": rng.normal(scale=scale, size=count),
        "p": rng.normal(scale=scale, size=(count, n)),
        "A": 0.5 * (A + A.transpose(0, 2, 1)),
    }


def isaacs_scan(spec: GameSpec, points: dict, players=(1, 2), tol: float = 1e-9) -> IsaacsReport:
    """Gap H^+ - H^- over a point cloud, for each player with its default maximizer."""
    gaps_all, worst, by_player = [], None, {}
    t = np.asarray(points["t"], dtype=float)
    for j in players:
        mx = default_maximizer(j)
        # time may vary per row: evaluate at each distinct time
        gap = np.empty(t.size)
        for tv in np.unique(t):
            rows = np.flatnonzero(t == tv)
            tab = hamiltonian_table(spec, j, float(tv), points["x"][rows], points["y"][rows],
                                    points["p"][rows], points["A"][rows])
            gap[rows] = minimax(tab, "plus", mx)[0] - minimax(tab, "minus", mx)[0]
        by_player[j] = float(gap.max())
        k = int(np.argmax(gap))
        if worst is None or gap[k] > worst["gap"]:
            worst = {"j": j, "gap": float(gap[k]), "t": float(t[k]),
                     "x": np.asarray(points["x"][k]).tolist(), "y": float(points["y"][k]),
                     "p": np.asarray(points["p"][k]).tolist()}
        gaps_all.append(gap)
    g = np.concatenate(gaps_all)
    return IsaacsReport(float(g.max()), float(g.mean()), float(g.min()), worst,
                        bool(g.max() <= tol), int(g.size), by_player)


# -- comparison ----------------------------------------------------------------
class OrderingPreconditionError(SpecError):
    pass


@dataclass
class SchemeComparisonReport:
    violations: int
    max_excess: float  # max of W_A - W_B
    max_increase: float  # max of W_B - W_A
    nodes: int
    value_a: ValueGrid = None
    value_b: ValueGrid = None


def check_ordered_data(spec_a: GameSpec, spec_b: GameSpec, j: int, tgrid: TimeGrid,
                       sgrid: SpaceGrid, y_range: float = 5.0, z_range: float = 5.0, tol: float = 0.0):
    """Phi_A <= Phi_B, h_A <= h_B, f_A <= f_B and shared dynamics on the grid nodes.

    The driver ordering is checked on a (y, z) lattice of the given ranges.
    """
    xs = sgrid.nodes
    if np.any(spec_a.terminal(j, xs) > spec_b.terminal(j, xs) + tol):
        raise OrderingPreconditionError("Phi_A > Phi_B somewhere on the grid")
    ys = np.linspace(-y_range, y_range, 5)
    zs = np.linspace(-z_range, z_range, 5)
    for t in tgrid.points[:: max(1, tgrid.steps // 5)]:
        if np.any(spec_a.obstacle(j, t, xs) > spec_b.obstacle(j, t, xs) + tol):
            raise OrderingPreconditionError(f"h_A > h_B at t = {t:.4g}")
        for a, c in spec_a.control_pairs:
            if not (np.allclose(spec_a.drift(t, xs, a, c), spec_b.drift(t, xs, a, c))
                    and np.allclose(spec_a.vol(t, xs, a, c), spec_b.vol(t, xs, a, c))):
                raise OrderingPreconditionError("the two specs have different dynamics")
            for y in ys:
                for z in zs:
                    fa = spec_a.driver(j, t, xs, y, z, a, c)
                    fb = spec_b.driver(j, t, xs, y, z, a, c)
                    if np.any(fa > fb + tol):
                        raise OrderingPreconditionError(f"f_A > f_B at t = {t:.4g}, y = {y}, z = {z}")


def scheme_comparison_test(spec_a: GameSpec, spec_b: GameSpec, j: int, mode: str, tgrid: TimeGrid,
                           sgrid: SpaceGrid, tol: float = 1e-12, check: bool = True) -> SchemeComparisonReport:
    if len(spec_a.U) != len(spec_b.U) or len(spec_a.V) != len(spec_b.V):
        raise OrderingPreconditionError("the two specs have different control grids")
    if check:
        check_ordered_data(spec_a, spec_b, j, tgrid, sgrid)
    wa = solve_obstacle_isaacs(spec_a, j, mode, tgrid, sgrid)
    wb = solve_obstacle_isaacs(spec_b, j, mode, tgrid, sgrid)
    diff = wa.values - wb.values
    return SchemeComparisonReport(int(np.count_nonzero(diff > tol)), float(diff.max()),
                                  float((-diff).max()), int(diff.size), wa, wb)
