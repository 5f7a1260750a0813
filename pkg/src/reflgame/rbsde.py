"""Reflected BSDE solvers: exact lattice recursion, least-squares Monte Carlo, penalization.

All three share one discrete scheme on a time grid t_0 < ... < t_N::

    Z_i     = E[Y_{i+1} dB_i | F_i] / dt_i
    Yhat_i  = E[Y_{i+1} | F_i] + f(t_i, X_i, Yhat_i, Z_i) dt_i      (implicit in y)
    Y_i     = max(Yhat_i, S_i),    dK_i = Y_i - Yhat_i

and differ only in how the conditional expectations are obtained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable, Optional

import numpy as np

from .sde_core import ControlPath, GameSpec, PathBundle, SpecError, TimeGrid

FIXED_POINT_ITERS = 20
FIXED_POINT_TOL = 1e-12


class ConvergenceError(RuntimeError):
    pass


class RegressionError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


class LatticeError(ValueError):
    pass


class PreconditionError(ValueError):
    def __init__(self, message: str, offending=()):
        super().__init__(message)
        self.offending = list(offending)


# -- lattice -----------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class LatticeModel:
    """Recombining trinomial lattice in one space dimension.

    Level ``i`` holds the states ``x_center + k*dx`` for ``|k| <= half_width + i``;
    node ``a`` of level ``i`` moves to nodes ``a, a+1, a+2`` of level ``i+1``
    (down, middle, up).  Transition probabilities are produced per level from the
    local drift and volatility so that they reproduce the Euler step's mean and
    second moment.  Where the drift is too strong for the mesh (sigma^2 < |b| dx)
    the second moment is raised to ``|b| dt dx`` -- the upwind numerical diffusion
    that keeps the probabilities nonnegative.
    """

    grid: TimeGrid
    x_center: float
    dx: float
    half_width: int = 0

    def __post_init__(self):
        if self.dx <= 0:
            raise LatticeError("lattice spacing must be positive")
        if self.half_width < 0:
            raise LatticeError("half_width must be >= 0")

    @property
    def depth(self) -> int:
        return self.grid.steps

    def size(self, level: int) -> int:
        return 2 * (self.half_width + level) + 1

    def offsets(self, level: int) -> np.ndarray:
        w = self.half_width + level
        return np.arange(-w, w + 1)

    def states(self, level: int) -> np.ndarray:
        return self.x_center + self.dx * self.offsets(level)

    def root(self, level: int = 0) -> int:
        """Index of the x_center node on ``level``."""
        return self.half_width + level

    def index_of(self, level: int, x) -> np.ndarray:
        k = np.rint((np.asarray(x, dtype=float) - self.x_center) / self.dx).astype(int)
        w = self.half_width + level
        return np.clip(k, -w, w) + w

    def common_slice(self, level: int) -> slice:
        """Positions on ``level`` of the level-0 nodes (offsets -M..M)."""
        return slice(level, level + 2 * self.half_width + 1)

    def transition(self, level: int, drift, vol):
        """Branch probabilities ``(m, 3)`` and Brownian increments ``(m, 3, d)``.

        ``drift`` has shape ``(m,)`` (or ``(m, 1)``), ``vol`` shape ``(m, 1, d)``
        or ``(m,)``.
        """
        m = self.size(level)
        dt = float(self.grid.points[level + 1] - self.grid.points[level])
        drift = np.asarray(drift, dtype=float).reshape(m)
        vol = np.asarray(vol, dtype=float).reshape(m, -1)
        s2 = (vol ** 2).sum(axis=1)
        m1 = drift * dt
        m2 = np.maximum(s2 * dt + m1 ** 2, np.abs(m1) * self.dx)
        q = m2 / self.dx ** 2
        if q.max() > 1.0 + 1e-12:
            need = math.sqrt(float(m2.max()))
            raise LatticeError(
                f"level {level}: dx = {self.dx:.4g} too small for the dynamics, need dx >= {need:.4g}"
            )
        r = m1 / self.dx
        probs = np.empty((m, 3))
        probs[:, 0] = 0.5 * (q - r)
        probs[:, 1] = 1.0 - q
        probs[:, 2] = 0.5 * (q + r)
        probs = np.clip(probs, 0.0, 1.0)
        branch = np.array([-self.dx, 0.0, self.dx])
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(s2 > 0, 1.0 / s2, 0.0)
        dB = ((branch[None, :] - m1[:, None]) * scale[:, None])[:, :, None] * vol[:, None, :]
        return probs, dB

    def expectation(self, y_next: np.ndarray, probs: np.ndarray) -> np.ndarray:
        return probs[:, 0] * y_next[:-2] + probs[:, 1] * y_next[1:-1] + probs[:, 2] * y_next[2:]

    def martingale_z(self, y_next: np.ndarray, probs: np.ndarray, dB: np.ndarray, dt: float):
        stacked = np.stack([y_next[:-2], y_next[1:-1], y_next[2:]], axis=1)
        return np.einsum("mk,mk,mkd->md", probs, stacked, dB) / dt

    @classmethod
    def binomial(cls, grid: TimeGrid, x_center: float, drift: float, vol: float,
                 half_width: int = 0) -> "LatticeModel":
        """Spacing sqrt(vol^2 dt + (drift dt)^2): the middle branch gets zero weight."""
        dt = grid.mesh
        return cls(grid, float(x_center), math.sqrt(vol * vol * dt + (drift * dt) ** 2), half_width)

    @classmethod
    def for_spec(cls, spec: GameSpec, grid: TimeGrid, x_center: float = 0.0,
                 span: float = 3.0, dx: Optional[float] = None,
                 half_width: Optional[int] = None) -> "LatticeModel":
        """Lattice whose spacing fits every control pair of ``spec``.

        The default spacing is ``sqrt(3 sigma_max^2 dt)`` (middle branch weight 2/3
        for the strongest noise), widened if needed so that the largest second
        moment still fits.
        """
        if spec.n != 1:
            raise LatticeError("lattices are one-dimensional")
        if dx is None:
            probe = np.linspace(x_center - span - 5.0, x_center + span + 5.0, 201)
            smax, bmax = 0.0, 0.0
            for a, c in spec.control_pairs:
                for t in grid.points[:: max(1, grid.steps // 10)]:
                    smax = max(smax, float(np.sqrt((spec.vol(t, probe, a, c) ** 2).sum(axis=(1, 2))).max()))
                    bmax = max(bmax, float(np.abs(spec.drift(t, probe, a, c)).max()))
            dt = grid.mesh
            dx = max(math.sqrt(3.0 * smax ** 2 * dt), math.sqrt(smax ** 2 * dt + (bmax * dt) ** 2))
            if dx == 0.0:
                dx = span / 10.0
        if half_width is None:
            half_width = int(math.ceil(span / dx))
        return cls(grid, float(x_center), float(dx), int(half_width))


# -- problems and solutions --------------------------------------------------
@dataclass(eq=False)
class RbsdeProblem:
    """Data (f, xi, S) of a one-barrier reflected BSDE on ``grid``.

    Callables receive the step index ``i``, the time and states ``x`` of shape
    ``(m, n)``: ``driver(i, t, x, y, z)``, ``terminal(x)``, ``obstacle(i, t, x)``.
    ``drift``/``vol`` (same signature as the obstacle) are needed on a lattice only.
    """

    grid: TimeGrid
    driver: Callable
    terminal: Callable
    obstacle: Callable
    drift: Optional[Callable] = None
    vol: Optional[Callable] = None
    lipschitz: float = 1.0


def spec_problem(spec: GameSpec, j: int, grid: TimeGrid, u=None, v=None) -> RbsdeProblem:
    """Doubly controlled RBSDE of player ``j`` under fixed controls.

    ``u``/``v`` are ControlPaths (1-D: deterministic, 2-D: one row per path), a
    PathBundle's recorded indices, or None for a singleton control set.
    """

    def index_of(ctrl, cset):
        if ctrl is None:
            if len(cset) != 1:
                raise ValueError(f"control set {cset.label} is not a singleton; pass controls")
            return lambda i, m: np.zeros(m, dtype=int)
        idx = ctrl.indices if isinstance(ctrl, ControlPath) else np.asarray(ctrl, dtype=int)
        if idx.ndim == 1:
            return lambda i, m: np.full(m, idx[i], dtype=int)
        return lambda i, m: idx[:, i]

    ui, vi = index_of(u, spec.U), index_of(v, spec.V)

    def driver(i, t, x, y, z):
        m = x.shape[0]
        return spec.driver(j, t, x, y, z, ui(i, m), vi(i, m))

    return RbsdeProblem(
        grid=grid,
        driver=driver,
        terminal=lambda x: spec.terminal(j, x),
        obstacle=lambda i, t, x: spec.obstacle(j, t, x),
        drift=lambda i, t, x: spec.drift(t, x, ui(i, x.shape[0]), vi(i, x.shape[0])),
        vol=lambda i, t, x: spec.vol(t, x, ui(i, x.shape[0]), vi(i, x.shape[0])),
        lipschitz=spec.contraction_constant,
    )


@dataclass(eq=False)
class RbsdeSolution:
    """Discrete triple (Y, Z, K) -- per lattice node or per path, per grid point.

    ``Y[i]``, ``S[i]`` for i = start..stop (stored from index 0), ``Z[i]`` and
    ``dK[i]`` per interval.  ``dK[i]`` is the push K_{t_{i+1}} - K_{t_i}.
    """

    grid: TimeGrid
    Y: list
    Z: list
    dK: list
    S: list
    kind: str  # "lattice" | "paths"
    root: int = 0
    residuals: list = field(default_factory=list)
    std_error: float = 0.0

    @property
    def Y0(self) -> float:
        y = self.Y[0]
        return float(y[self.root]) if self.kind == "lattice" else float(np.mean(y))

    def skorokhod_products(self) -> list:
        return [(self.Y[i] - self.S[i]) * self.dK[i] for i in range(len(self.dK))]

    def skorokhod_residual(self) -> np.ndarray:
        """Per node (lattice) or per path: sum_i (Y_i - S_i) dK_i."""
        prods = self.skorokhod_products()
        if self.kind == "paths":
            return np.sum(prods, axis=0)
        return np.array([np.abs(p).max() for p in prods]) if prods else np.zeros(0)

    def K(self) -> np.ndarray:
        if self.kind != "paths":
            raise ValueError("cumulative K is path-dependent; only defined for path solutions")
        dk = np.stack(self.dK, axis=1)
        return np.concatenate([np.zeros((dk.shape[0], 1)), np.cumsum(dk, axis=1)], axis=1)

    def min_obstacle_slack(self) -> float:
        return float(min(np.min(y - s) for y, s in zip(self.Y, self.S)))


def implicit_step(expect: np.ndarray, dt: float, g: Callable, obstacle=None,
                  penalty: float = 0.0) -> np.ndarray:
    """Solve ``y = expect + dt*g(y) [+ penalty*dt*(obstacle - y)^+]`` by fixed point.

    The penalty part is solved in closed form inside each iteration, so the
    contraction factor is L*dt for any penalty strength.
    """
    y = np.array(expect, dtype=float)
    lam = penalty * dt
    for _ in range(FIXED_POINT_ITERS):
        c = expect + dt * g(y)
        if lam > 0.0:
            c = np.where(c >= obstacle, c, (c + lam * obstacle) / (1.0 + lam))
        err = np.max(np.abs(c - y)) if c.size else 0.0
        y = c
        if err <= FIXED_POINT_TOL * max(1.0, float(np.max(np.abs(y))) if y.size else 1.0):
            return y
    raise ConvergenceError(
        f"implicit driver step did not converge in {FIXED_POINT_ITERS} iterations "
        f"(last change {err:.3g}); the driver's y-Lipschitz constant times dt is likely >= 1"
    )


def _check_terminal(xi, S_T, where: str):
    bad = np.flatnonzero(xi < S_T - 1e-12)
    if bad.size:
        raise PreconditionError(
            f"terminal value below obstacle at {bad.size} {where}(s) (first: {bad[:5].tolist()})",
            bad.tolist(),
        )


def _lattice_recursion(problem: RbsdeProblem, lattice: LatticeModel, start: int, stop: int,
                       terminal_values, penalty: Optional[float]) -> RbsdeSolution:
    if problem.drift is None or problem.vol is None:
        raise ValueError("a lattice solve needs the problem's drift and vol")
    grid = lattice.grid
    grid.subgrid(start, stop).check_contraction(problem.lipschitz)
    xs = lattice.states(stop)[:, None]
    S_T = problem.obstacle(stop, grid.points[stop], xs)
    y = problem.terminal(xs) if terminal_values is None else np.asarray(terminal_values, dtype=float)
    if y.shape != (lattice.size(stop),):
        raise ValueError(f"terminal values must have one entry per node of level {stop}")
    if penalty is None:
        _check_terminal(y, S_T, "node")
    Ys, Zs, dKs, Ss = [y], [], [], [np.array(S_T)]
    for i in range(stop - 1, start - 1, -1):
        t = grid.points[i]
        dt = grid.points[i + 1] - t
        x = lattice.states(i)[:, None]
        probs, dB = lattice.transition(i, problem.drift(i, t, x), problem.vol(i, t, x))
        E = lattice.expectation(y, probs)
        Z = lattice.martingale_z(y, probs, dB, dt)
        S = problem.obstacle(i, t, x)
        g = lambda yy, i=i, t=t, x=x, Z=Z: problem.driver(i, t, x, yy, Z)
        if penalty is None:
            yhat = implicit_step(E, dt, g)
            y = np.maximum(yhat, S)
            dK = y - yhat
        else:
            y = implicit_step(E, dt, g, obstacle=S, penalty=penalty)
            dK = penalty * dt * np.maximum(S - y, 0.0)
        Ys.append(y)
        Zs.append(Z)
        dKs.append(dK)
        Ss.append(np.array(S))
    return RbsdeSolution(
        grid.subgrid(start, stop), Ys[::-1], Zs[::-1], dKs[::-1], Ss[::-1], "lattice",
        root=lattice.root(start),
    )


def solve_tree(problem: RbsdeProblem, lattice: LatticeModel, start: int = 0,
               stop: Optional[int] = None, terminal_values=None) -> RbsdeSolution:
    """Exact backward induction of the discretely reflected scheme on a lattice."""
    stop = lattice.depth if stop is None else stop
    return _lattice_recursion(problem, lattice, start, stop, terminal_values, None)


# -- least squares Monte Carlo -----------------------------------------------
def _monomials(n: int, degree: int) -> list:
    out = []
    for deg in range(1, degree + 1):
        out.extend(combinations_with_replacement(range(n), deg))
    return out


@dataclass
class PolyBasis:
    """Polynomials (total degree <= degree) in the standardized state, plus the obstacle.

    Standardization constants are frozen at fit time so the basis can be
    evaluated on fresh states.  Constant state coordinates are dropped, so a
    deterministic state gives the constant basis (plain sample mean).
    """

    mu: np.ndarray
    sd: np.ndarray
    live: np.ndarray
    degree: int
    obstacle_scale: Optional[tuple] = None  # (mean, sd) when the obstacle column is used

    @classmethod
    def fit(cls, x, degree: int = 3, obstacle=None) -> "PolyBasis":
        x = _as_rows(x)
        mu, sd = x.mean(axis=0), x.std(axis=0)
        live = sd > 1e-12 * (1.0 + np.abs(mu))
        scale = None
        if obstacle is not None and live.any():
            o = np.asarray(obstacle, dtype=float)
            if o.std() > 1e-12 * (1.0 + abs(o.mean())):
                scale = (float(o.mean()), float(o.std()))
        return cls(mu, sd, live, degree, scale)

    @property
    def size(self) -> int:
        n_live = int(self.live.sum())
        return 1 + (len(_monomials(n_live, self.degree)) if n_live else 0) + (self.obstacle_scale is not None)

    def without_obstacle(self) -> "PolyBasis":
        return PolyBasis(self.mu, self.sd, self.live, self.degree, None)

    def matrix(self, x, obstacle=None) -> np.ndarray:
        x = _as_rows(x)
        cols = [np.ones(x.shape[0])]
        if self.live.any():
            zs = (x[:, self.live] - self.mu[self.live]) / self.sd[self.live]
            for mono in _monomials(zs.shape[1], self.degree):
                cols.append(np.prod(zs[:, list(mono)], axis=1))
        if self.obstacle_scale is not None:
            m, s = self.obstacle_scale
            cols.append((np.asarray(obstacle, dtype=float) - m) / s)
        return np.column_stack(cols)


def _as_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def basis_matrix(x: np.ndarray, degree: int = 3, obstacle: Optional[np.ndarray] = None):
    """Basis matrix at ``x`` (see :class:`PolyBasis`); returns (matrix, has_obstacle_column)."""
    basis = PolyBasis.fit(x, degree, obstacle)
    return basis.matrix(x, obstacle), basis.obstacle_scale is not None


@dataclass
class Projection:
    basis: PolyBasis
    coef: np.ndarray  # (basis size, targets)

    def predict(self, x, obstacle=None) -> np.ndarray:
        return self.basis.matrix(x, obstacle) @ self.coef


def project(x, targets: np.ndarray, degree: int = 3, obstacle=None, step: int = -1) -> Projection:
    """Least-squares projection of each target column on the basis at ``x``.

    A rank-deficient matrix is retried without the obstacle column (it may be
    collinear with the polynomials) and otherwise raises RegressionError.
    """
    basis = PolyBasis.fit(x, degree, obstacle)
    targets = np.asarray(targets, dtype=float)
    while True:
        A = basis.matrix(x, obstacle)
        coef, _, rank, _ = np.linalg.lstsq(A, targets, rcond=None)
        if rank == A.shape[1]:
            return Projection(basis, coef)
        if basis.obstacle_scale is None:
            raise RegressionError(step, f"rank-deficient regression matrix (rank {rank} < {A.shape[1]})")
        basis = basis.without_obstacle()


def _lsmc_recursion(bundle: PathBundle, problem: RbsdeProblem, degree: int, with_obstacle: bool,
                    start: int, stop: int, terminal_values, penalty: Optional[float]) -> RbsdeSolution:
    grid = bundle.grid
    if problem.grid.steps != grid.steps:
        raise ValueError("problem grid and bundle grid differ")
    grid.subgrid(start, stop).check_contraction(problem.lipschitz)
    P = bundle.num_paths
    ncols = 1 + len(_monomials(bundle.states.shape[2], degree)) + int(with_obstacle)
    if P < 10 * ncols:
        raise ValueError(f"{P} paths is fewer than 10 x basis dimension ({ncols})")
    X = bundle.states
    xT = X[:, stop]
    S_T = problem.obstacle(stop, grid.points[stop], xT)
    target = problem.terminal(xT) if terminal_values is None else np.asarray(terminal_values, dtype=float)
    if target.shape != (P,):
        raise ValueError("terminal values must have one entry per path")
    target = np.array(target, dtype=float)
    if penalty is None:
        _check_terminal(target, S_T, "path")
    Ys, Zs, dKs, Ss, res = [target.copy()], [], [], [np.array(S_T)], []
    se = 0.0
    for i in range(stop - 1, start - 1, -1):
        t = grid.points[i]
        dt = grid.points[i + 1] - t
        x = X[:, i]
        S = problem.obstacle(i, t, x)
        dB = bundle.increments[:, i]
        obs = S if with_obstacle else None
        proj = project(x, np.column_stack([target, target[:, None] * dB]), degree, obs, i)
        fitted = proj.predict(x, obs)
        E = fitted[:, 0]
        Z = fitted[:, 1:] / dt
        res.append(float(np.sqrt(np.mean((target - E) ** 2))))
        if i == start:
            se = float(np.std(target) / math.sqrt(P)) if proj.basis.size == 1 else res[-1] / math.sqrt(P)
        g = lambda yy, i=i, t=t, x=x, Z=Z: problem.driver(i, t, x, yy, Z)
        if penalty is None:
            yhat = implicit_step(E, dt, g)
            y = np.maximum(yhat, S)
            dK = y - yhat
            # pathwise continuation values are the next regression targets
            target = np.where(yhat < S, S, target + dt * g(yhat))
        else:
            y = implicit_step(E, dt, g, obstacle=S, penalty=penalty)
            dK = penalty * dt * np.maximum(S - y, 0.0)
            target = target + dt * g(y) + dK
        Ys.append(y)
        Zs.append(Z)
        dKs.append(dK)
        Ss.append(np.array(S))
    return RbsdeSolution(
        grid.subgrid(start, stop), Ys[::-1], Zs[::-1], dKs[::-1], Ss[::-1], "paths",
        residuals=res[::-1], std_error=se,
    )


def solve_lsmc(bundle: PathBundle, problem: RbsdeProblem, degree: int = 3,
               with_obstacle: bool = True, start: int = 0, stop: Optional[int] = None,
               terminal_values=None) -> RbsdeSolution:
    """Regression Monte Carlo version of the reflected scheme.

    Conditional expectations of Y_{i+1} and Y_{i+1} dB_i are least-squares
    projections on the basis at X_{t_i}.  The reported Y_i = max(Yhat_i, S_i) is
    the projected value; the regression targets are the pathwise continuation
    values (obstacle where it binds, else the next target plus the driver
    increment), which keeps the max from compounding regression noise over many
    steps.
    """
    stop = bundle.grid.steps if stop is None else stop
    return _lsmc_recursion(bundle, problem, degree, with_obstacle, start, stop, terminal_values, None)


def solve_penalized(source, problem: RbsdeProblem, lam: float, degree: int = 3,
                    with_obstacle: bool = True) -> RbsdeSolution:
    """Unreflected BSDE with driver ``f + lam*(S - y)^+`` on a lattice or a PathBundle."""
    if lam < 0:
        raise ValueError("penalty strength must be >= 0")
    if isinstance(source, LatticeModel):
        return _lattice_recursion(problem, source, 0, source.depth, None, lam)
    return _lsmc_recursion(source, problem, degree, with_obstacle, 0, source.grid.steps, None, lam)


# -- stochastic backward semigroup -------------------------------------------
def backward_semigroup(spec: GameSpec, j: int, s1: int, s2: int, eta, u=None, v=None,
                       lattice: Optional[LatticeModel] = None,
                       bundle: Optional[PathBundle] = None, degree: int = 3) -> np.ndarray:
    """G_{s1,s2}[eta]: value at grid index s1 of the RBSDE on [s1, s2] with terminal eta.

    With a lattice, ``eta`` has one entry per node of level s2 and the result one
    per node of level s1; with a bundle, one entry per path.
    """
    if (lattice is None) == (bundle is None):
        raise ValueError("pass exactly one of lattice or bundle")
    if not 0 <= s1 <= s2:
        raise ValueError("need 0 <= s1 <= s2")
    eta = np.asarray(eta, dtype=float)
    if lattice is not None:
        grid = lattice.grid
        x = lattice.states(s2)[:, None]
    else:
        grid = bundle.grid
        x = bundle.states[:, s2]
        if u is None and v is None:
            u, v = bundle.u_idx, bundle.v_idx
    floor = spec.obstacle(j, grid.points[s2], x)
    bad = np.flatnonzero(eta < floor - 1e-12)
    if bad.size:
        raise PreconditionError(
            f"eta < h_{j}(s2, X_s2) at {bad.size} node/path(s): {bad[:10].tolist()}", bad.tolist()
        )
    if s1 == s2:
        return eta.copy()
    problem = spec_problem(spec, j, grid, u, v)
    if lattice is not None:
        return solve_tree(problem, lattice, s1, s2, eta).Y[0]
    return solve_lsmc(bundle, problem, degree, start=s1, stop=s2, terminal_values=eta).Y[0]


def cost_functional(spec: GameSpec, j: int, lattice: LatticeModel, u=None, v=None) -> np.ndarray:
    """J_j(t_0, x; u, v) at every level-0 node: G_{t_0,T}[Phi_j(X_T)]."""
    T = lattice.depth
    eta = spec.terminal(j, lattice.states(T))
    return backward_semigroup(spec, j, 0, T, eta, u, v, lattice=lattice)


# -- comparison ----------------------------------------------------------------
@dataclass
class ComparisonReport:
    y_violations: int
    max_y_excess: float  # max of Y^A - Y^B (<= 0 when ordered)
    k_checked: bool
    k_violations: int = 0
    max_k_deficit: float = 0.0  # max of dK^B - dK^A (<= 0 when ordered)

    @property
    def ordered(self) -> bool:
        return self.y_violations == 0 and self.k_violations == 0


def compare_solutions(a: RbsdeSolution, b: RbsdeSolution, tol: float = 1e-12,
                      check_k: Optional[bool] = None) -> ComparisonReport:
    """Pointwise check of Y^A <= Y^B and, for equal obstacles, dK^A >= dK^B."""
    if len(a.Y) != len(b.Y) or any(x.shape != y.shape for x, y in zip(a.Y, b.Y)):
        raise ValueError("solutions live on different lattices/bundles")
    excess = [ya - yb for ya, yb in zip(a.Y, b.Y)]
    rep = ComparisonReport(
        y_violations=int(sum(np.count_nonzero(e > tol) for e in excess)),
        max_y_excess=float(max(e.max() for e in excess)),
        k_checked=False,
    )
    if check_k is None:
        check_k = all(np.array_equal(sa, sb) for sa, sb in zip(a.S, b.S))
    if check_k and a.dK:
        deficit = [kb - ka for ka, kb in zip(a.dK, b.dK)]
        rep.k_checked = True
        rep.k_violations = int(sum(np.count_nonzero(e > tol) for e in deficit))
        rep.max_k_deficit = float(max(e.max() for e in deficit))
    return rep


def solution_csv(sol: RbsdeSolution, path) -> "Path":
    """One row per (node or path, time index): Y, Z components, dK, K, obstacle, residual.

    ``residual`` is the Skorokhod product (Y - S) dK; K is path-dependent and is
    left empty for lattice solutions.
    """
    import csv
    from pathlib import Path

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = sol.Z[0].shape[1] if sol.Z else 1
    K = sol.K() if sol.kind == "paths" else None
    last = len(sol.Y) - 1
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "time_index", "Y"] + [f"Z{k}" for k in range(d)] + ["dK", "K", "obstacle", "residual"])
        for i, (y, s) in enumerate(zip(sol.Y, sol.S)):
            z = sol.Z[i] if i < last else np.zeros((y.size, d))
            dk = sol.dK[i] if i < last else np.zeros(y.size)
            for k in range(y.size):
                w.writerow([k, i, repr(float(y[k]))] + [repr(float(v)) for v in z[k]]
                           + [repr(float(dk[k])), "" if K is None else repr(float(K[k, i])),
                              repr(float(s[k])), repr(float((y[k] - s[k]) * dk[k]))])
    return path
