"""Controlled forward SDE: specs, grids, Euler-Maruyama paths and moment checks.

Shape conventions used by every coefficient evaluator of a :class:`GameSpec`:

* ``t`` is a float (or an array broadcastable against the rows),
* ``x`` has shape ``(m, n)``, ``y`` shape ``(m,)``, ``z`` shape ``(m, d)``,
* ``u`` and ``v`` have shape ``(m, p_u)`` / ``(m, p_v)`` -- one control point per row.

``b`` returns ``(m, n)``, ``sigma`` returns ``(m, n, d)``, ``f_j`` returns ``(m,)``,
``Phi_j(x)`` and ``h_j(t, x)`` return ``(m,)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

# Paths are generated in fixed-size blocks so that a path's increments depend
# only on (seed, path index), never on how many paths were requested.
RNG_BLOCK = 256


class SpecError(ValueError):
    """A GameSpec violates its declared assumptions."""


class ObstacleViolation(SpecError):
    """Terminal value below the terminal obstacle: Phi_j(x) < h_j(T, x)."""


class SimulationError(RuntimeError):
    def __init__(self, path: int, step: int, message: str = "non-finite state"):
        super().__init__(f"{message} on path {path} at step {step}")
        self.path = path
        self.step = step


@dataclass(frozen=True, eq=False)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("time grid must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, t0: float, T: float, steps: int) -> "TimeGrid":
        return cls(np.linspace(t0, T, steps + 1))

    @property
    def t0(self) -> float:
        return float(self.points[0])

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def steps(self) -> int:
        return self.points.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def mesh(self) -> float:
        return float(self.dt.max())

    def check_contraction(self, lipschitz: float) -> None:
        """Implicit y-steps need L * dt < 1 to be contractions."""
        if lipschitz * self.mesh >= 1.0:
            raise SpecError(
                f"L*dt = {lipschitz * self.mesh:.3g} >= 1; refine the time grid"
            )

    def subgrid(self, start: int, stop: int) -> "TimeGrid":
        return TimeGrid(self.points[start : stop + 1])

    def coarsen(self, stride: int) -> "TimeGrid":
        if self.steps % stride:
            raise ValueError(f"{self.steps} steps not divisible by stride {stride}")
        return TimeGrid(self.points[::stride])

    def to_dict(self) -> dict:
        return {"points": self.points.tolist()}


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Finite grid standing in for a compact control space."""

    label: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError(f"control set {self.label} must be a nonempty list of points")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError(f"control set {self.label} has duplicate points")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_values(cls, label: str, values) -> "ControlSet":
        return cls(label, np.asarray(values, dtype=float))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def take(self, idx, rows: int) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        if idx.ndim == 0:
            return np.broadcast_to(self.points[idx], (rows, self.dim))
        return self.points[idx]


def _fit(out, shape) -> np.ndarray:
    """Broadcast an evaluator result to ``shape``; leading-axis results are padded."""
    out = np.asarray(out, dtype=float)
    if 0 < out.ndim < len(shape) and out.shape == tuple(shape[: out.ndim]):
        out = out.reshape(out.shape + (1,) * (len(shape) - out.ndim))
    return np.broadcast_to(out, shape)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Coefficients of the controlled SDE and of both players' reflected BSDEs.

    ``bounds`` holds declared sup-bounds (keys ``b``, ``sigma``, ``f``, ``Phi``,
    ``h``) over ``domain``; a missing key means "not declared".  ``lipschitz`` is
    the common Lipschitz constant of b, sigma, f_j, Phi_j, h_j; ``y_lipschitz``
    optionally sharpens it for the drivers' y-argument (the constant the implicit
    backward steps need).
    """

    n: int
    d: int
    b: Callable
    sigma: Callable
    f: tuple
    Phi: tuple
    h: tuple
    U: ControlSet
    V: ControlSet
    lipschitz: float = 1.0
    bounds: dict = field(default_factory=dict)
    domain: tuple = (-3.0, 3.0)
    name: str = "custom"
    params: dict = field(default_factory=dict)
    y_lipschitz: Optional[float] = None

    def __post_init__(self):
        if len(self.f) != 2 or len(self.Phi) != 2 or len(self.h) != 2:
            raise ValueError("f, Phi and h must each hold one evaluator per player")

    # -- shape-normalizing wrappers ---------------------------------------
    def _x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1, 1)
        elif x.ndim == 1:
            x = x[:, None] if self.n == 1 else x[None, :]
        return x

    def drift(self, t, x, ui, vi) -> np.ndarray:
        x = self._x(x)
        m = x.shape[0]
        return _fit(self.b(t, x, self.U.take(ui, m), self.V.take(vi, m)), (m, self.n))

    def vol(self, t, x, ui, vi) -> np.ndarray:
        x = self._x(x)
        m = x.shape[0]
        return _fit(self.sigma(t, x, self.U.take(ui, m), self.V.take(vi, m)), (m, self.n, self.d))

    def driver(self, j: int, t, x, y, z, ui, vi) -> np.ndarray:
        x = self._x(x)
        m = x.shape[0]
        y = _fit(y, (m,))
        z = _fit(z, (m, self.d))
        return _fit(self.f[j - 1](t, x, y, z, self.U.take(ui, m), self.V.take(vi, m)), (m,))

    def terminal(self, j: int, x) -> np.ndarray:
        x = self._x(x)
        return _fit(self.Phi[j - 1](x), (x.shape[0],))

    def obstacle(self, j: int, t, x) -> np.ndarray:
        x = self._x(x)
        return _fit(self.h[j - 1](t, x), (x.shape[0],))

    @property
    def contraction_constant(self) -> float:
        return self.lipschitz if self.y_lipschitz is None else self.y_lipschitz

    @property
    def control_pairs(self) -> list:
        return [(a, c) for a in range(len(self.U)) for c in range(len(self.V))]

    def fingerprint(self) -> str:
        import hashlib

        blob = json.dumps({"name": self.name, "params": self.params}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def shift_spec(spec: GameSpec, phi: float = 0.0, f: float = 0.0, h: float = 0.0, players=(1, 2),
               name: Optional[str] = None) -> GameSpec:
    """Same dynamics with Phi_j + phi, f_j + f and h_j + h for the listed players."""
    def add(fn, c, j):
        return fn if (c == 0.0 or j not in players) else (lambda *args, fn=fn: fn(*args) + c)

    return GameSpec(
        n=spec.n, d=spec.d, b=spec.b, sigma=spec.sigma,
        f=tuple(add(spec.f[j - 1], f, j) for j in (1, 2)),
        Phi=tuple(add(spec.Phi[j - 1], phi, j) for j in (1, 2)),
        h=tuple(add(spec.h[j - 1], h, j) for j in (1, 2)),
        U=spec.U, V=spec.V, lipschitz=spec.lipschitz, bounds=dict(spec.bounds), domain=spec.domain,
        name=name or f"{spec.name}+shift", params={**spec.params, "shift": [phi, f, h, list(players)]},
        y_lipschitz=spec.y_lipschitz,
    )


@dataclass(frozen=True, eq=False)
class ControlPath:
    """Piecewise-constant control, as indices into a ControlSet.

    ``indices`` has shape ``(steps,)`` (deterministic) or ``(paths, steps)``.
    """

    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))
        if self.indices.ndim not in (1, 2):
            raise ValueError("control path must be 1-D or 2-D")

    @classmethod
    def constant(cls, index: int, steps: int) -> "ControlPath":
        return cls(np.full(steps, index, dtype=int))

    @property
    def steps(self) -> int:
        return self.indices.shape[-1]

    def check(self, cset: ControlSet, steps: int, paths: Optional[int] = None) -> None:
        if self.steps != steps:
            raise ValueError(f"control path has {self.steps} intervals, grid has {steps}")
        if self.indices.min() < 0 or self.indices.max() >= len(cset):
            raise ValueError(f"control path leaves control set {cset.label}")
        if self.indices.ndim == 2 and paths is not None and self.indices.shape[0] != paths:
            raise ValueError("per-path control path does not match path count")

    def at(self, step: int, paths: int) -> np.ndarray:
        if self.indices.ndim == 1:
            return np.full(paths, self.indices[step], dtype=int)
        return self.indices[:, step]


@dataclass(eq=False)
class PathBundle:
    grid: TimeGrid
    x0: np.ndarray
    increments: np.ndarray  # (paths, steps, d)
    states: np.ndarray  # (paths, steps + 1, n)
    seed: int
    u_idx: np.ndarray  # (paths, steps)
    v_idx: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.states.shape[0]


def brownian_increments(grid: TimeGrid, d: int, num_paths: int, seed: int) -> np.ndarray:
    """Increments of a d-dimensional Brownian motion, keyed by (seed, path)."""
    steps = grid.steps
    out = np.empty((num_paths, steps, d))
    for block in range(math.ceil(num_paths / RNG_BLOCK)):
        rng = np.random.default_rng([seed, block])
        draws = rng.standard_normal((RNG_BLOCK, steps, d))
        lo = block * RNG_BLOCK
        hi = min(lo + RNG_BLOCK, num_paths)
        out[lo:hi] = draws[: hi - lo]
    out *= np.sqrt(grid.dt)[None, :, None]
    return out


def simulate_feedback(spec: GameSpec, grid: TimeGrid, x0, policy: Callable,
                      num_paths: int, seed: int) -> PathBundle:
    """Euler-Maruyama with controls chosen by ``policy(step, t, X) -> (ui, vi)``."""
    if num_paths < 1:
        raise ValueError("num_paths must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(spec.n)
    dB = brownian_increments(grid, spec.d, num_paths, seed)
    X = np.empty((num_paths, grid.steps + 1, spec.n))
    X[:, 0] = x0
    u_idx = np.empty((num_paths, grid.steps), dtype=int)
    v_idx = np.empty((num_paths, grid.steps), dtype=int)
    for i in range(grid.steps):
        t = grid.points[i]
        ui, vi = policy(i, t, X[:, i])
        u_idx[:, i] = ui
        v_idx[:, i] = vi
        dt = grid.points[i + 1] - t
        drift = spec.drift(t, X[:, i], u_idx[:, i], v_idx[:, i])
        vol = spec.vol(t, X[:, i], u_idx[:, i], v_idx[:, i])
        X[:, i + 1] = X[:, i] + drift * dt + np.einsum("pnd,pd->pn", vol, dB[:, i])
        bad = ~np.isfinite(X[:, i + 1]).all(axis=1)
        if bad.any():
            raise SimulationError(int(np.argmax(bad)), i)
    return PathBundle(grid, x0, dB, X, seed, u_idx, v_idx)


def simulate_forward(spec: GameSpec, grid: TimeGrid, x0, u: ControlPath, v: ControlPath,
                     num_paths: int, seed: int) -> PathBundle:
    """Euler-Maruyama paths of the controlled SDE under open-loop controls."""
    u.check(spec.U, grid.steps, num_paths)
    v.check(spec.V, grid.steps, num_paths)
    return simulate_feedback(
        spec, grid, x0, lambda i, t, X: (u.at(i, X.shape[0]), v.at(i, X.shape[0])),
        num_paths, seed,
    )


@dataclass
class MomentReport:
    p: int
    moments: np.ndarray  # E|X_s|^p per grid point
    sup_of_mean: float  # sup_s E|X_s|^p
    mean_of_sup: float  # E sup_s |X_s|^p
    gap_mean_of_sup: Optional[float] = None  # E sup_s |X_s - X'_s|^p
    max_gap: Optional[float] = None  # max over paths of sup_s |X_s - X'_s|


def moment_report(bundle: PathBundle, p: int = 2,
                  paired: Optional[PathBundle] = None) -> MomentReport:
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    norms = np.linalg.norm(bundle.states, axis=2) ** p
    rep = MomentReport(
        p=p,
        moments=norms.mean(axis=0),
        sup_of_mean=float(norms.mean(axis=0).max()),
        mean_of_sup=float(norms.max(axis=1).mean()),
    )
    if paired is not None:
        if paired.states.shape != bundle.states.shape:
            raise ValueError("paired bundle has a different shape")
        gap = np.linalg.norm(bundle.states - paired.states, axis=2).max(axis=1)
        rep.gap_mean_of_sup = float((gap ** p).mean())
        rep.max_gap = float(gap.max())
    return rep


@dataclass
class ValidationReport:
    passed: bool
    terminal_obstacle_slack: list  # min over samples of Phi_j - h_j(T, .)
    bound_violations: dict
    lipschitz_estimates: dict
    failures: list


def _sample_box(spec: GameSpec, rng, m: int) -> np.ndarray:
    lo, hi = spec.domain
    return rng.uniform(lo, hi, size=(m, spec.n))


def validate_spec(spec: GameSpec, sample_count: int = 2000, seed: int = 0,
                  T: float = 1.0, tol: float = 1e-9, step: float = 1e-4) -> ValidationReport:
    """Check (Phi >= h(T)), declared sup-bounds and Lipschitz constants on samples.

    Lipschitz estimates are max finite-difference slopes |g(x + s e) - g(x)| / s
    along random unit directions e; a difference quotient never exceeds the true
    constant, so exceeding the declared one is a genuine violation.
    """
    rng = np.random.default_rng(seed)
    m = sample_count
    x = _sample_box(spec, rng, m)
    t = rng.uniform(0.0, T, size=m)
    ui = rng.integers(len(spec.U), size=m)
    vi = rng.integers(len(spec.V), size=m)
    y = rng.normal(size=m)
    z = rng.normal(size=(m, spec.d))
    e = rng.normal(size=(m, spec.n))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    xs = x + step * e
    failures = []

    slack = []
    for j in (1, 2):
        gap = spec.terminal(j, x) - spec.obstacle(j, T, x)
        slack.append(float(gap.min()))
        if gap.min() < -tol:
            k = int(np.argmin(gap))
            raise ObstacleViolation(
                f"Phi_{j}(x) < h_{j}(T, x) at x = {x[k].tolist()} (gap {gap[k]:.3g})"
            )

    values = {
        "b": np.linalg.norm(spec.drift(t, x, ui, vi), axis=1),
        "sigma": np.linalg.norm(spec.vol(t, x, ui, vi), axis=(1, 2)),
    }
    for j in (1, 2):
        values[f"f{j}"] = np.abs(spec.driver(j, t, x, 0.0, np.zeros((m, spec.d)), ui, vi))
        values[f"Phi{j}"] = np.abs(spec.terminal(j, x))
        values[f"h{j}"] = np.abs(spec.obstacle(j, t, x))
    bound_violations = {}
    for key, vals in values.items():
        declared = spec.bounds.get(key.rstrip("12"))
        if declared is None:
            continue
        excess = float(vals.max() - declared)
        bound_violations[key] = max(excess, 0.0)
        if excess > tol:
            failures.append(f"sup-bound of {key} exceeded by {excess:.3g}")

    def slope(a, b_, scale=step):
        diff = np.asarray(a) - np.asarray(b_)
        if diff.ndim > 1:
            diff = np.linalg.norm(diff.reshape(diff.shape[0], -1), axis=1)
        return float(np.max(np.abs(diff)) / scale)

    est = {
        "b": slope(spec.drift(t, xs, ui, vi), spec.drift(t, x, ui, vi)),
        "sigma": slope(spec.vol(t, xs, ui, vi), spec.vol(t, x, ui, vi)),
    }
    ez = rng.normal(size=(m, spec.d))
    ez /= np.linalg.norm(ez, axis=1, keepdims=True)
    for j in (1, 2):
        est[f"f{j}_x"] = slope(spec.driver(j, t, xs, y, z, ui, vi), spec.driver(j, t, x, y, z, ui, vi))
        est[f"f{j}_y"] = slope(spec.driver(j, t, x, y + step, z, ui, vi),
                               spec.driver(j, t, x, y, z, ui, vi))
        est[f"f{j}_z"] = slope(spec.driver(j, t, x, y, z + step * ez, ui, vi),
                               spec.driver(j, t, x, y, z, ui, vi))
        est[f"Phi{j}"] = slope(spec.terminal(j, xs), spec.terminal(j, x))
        est[f"h{j}"] = slope(spec.obstacle(j, t, xs), spec.obstacle(j, t, x))
    for key, val in est.items():
        if val > spec.lipschitz + tol:
            failures.append(f"Lipschitz estimate of {key} is {val:.4g} > declared {spec.lipschitz}")
        elif key.endswith("_y") and spec.y_lipschitz is not None and val > spec.y_lipschitz + tol:
            failures.append(f"y-Lipschitz estimate of {key} is {val:.4g} > declared {spec.y_lipschitz}")
    return ValidationReport(not failures, slack, bound_violations, est, failures)


# -- serialization ---------------------------------------------------------
BUNDLE_LAYOUT = (
    "little-endian float64, path-major: for each path, the (steps+1) x n states "
    "row by row, then the steps x d Brownian increments; int32 control indices "
    "follow in a separate .ctl file as paths x steps for u then for v"
)


def save_bundle(bundle: PathBundle, prefix) -> list:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    P, S1, n = bundle.states.shape
    d = bundle.increments.shape[2]
    header = {
        "layout": BUNDLE_LAYOUT,
        "paths": P,
        "steps": S1 - 1,
        "n": n,
        "d": d,
        "x0": bundle.x0.tolist(),
        "seed": bundle.seed,
        "grid": bundle.grid.to_dict(),
    }
    body = np.concatenate(
        [bundle.states.reshape(P, -1), bundle.increments.reshape(P, -1)], axis=1
    ).astype("<f8")
    files = [prefix.with_suffix(".json"), prefix.with_suffix(".bin"), prefix.with_suffix(".ctl")]
    files[0].write_text(json.dumps(header, indent=2, sort_keys=True))
    files[1].write_bytes(body.tobytes())
    files[2].write_bytes(np.concatenate([bundle.u_idx, bundle.v_idx]).astype("<i4").tobytes())
    return files


def load_bundle(prefix) -> PathBundle:
    prefix = Path(prefix)
    header = json.loads(prefix.with_suffix(".json").read_text())
    P, steps, n, d = header["paths"], header["steps"], header["n"], header["d"]
    body = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f8").reshape(P, -1)
    states = body[:, : (steps + 1) * n].reshape(P, steps + 1, n).copy()
    incs = body[:, (steps + 1) * n :].reshape(P, steps, d).copy()
    ctl = np.frombuffer(prefix.with_suffix(".ctl").read_bytes(), dtype="<i4").reshape(2 * P, steps)
    return PathBundle(
        TimeGrid(np.asarray(header["grid"]["points"])),
        np.asarray(header["x0"], dtype=float),
        incs, states, header["seed"],
        ctl[:P].astype(int), ctl[P:].astype(int),
    )
