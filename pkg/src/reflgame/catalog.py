"""Built-in coefficient families, selected by name plus parameters.

Each builder takes keyword parameters (defaults listed in the registry) and
returns a :class:`GameSpec`.  Every family has bounded coefficients on its
declared domain and honest Lipschitz constants, so ``validate_spec`` passes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .sde_core import ControlSet, GameSpec, SpecError

FAR_BELOW = -1e6  # obstacle level that never binds


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    builder: Callable
    defaults: dict
    summary: str

    def schema(self) -> dict:
        return {k: type(v).__name__ for k, v in self.defaults.items()}


CATALOG: dict = {}


def register(name: str, summary: str, **defaults):
    def deco(fn):
        CATALOG[name] = CatalogEntry(name, fn, defaults, summary)
        return fn

    return deco


def build_spec(name: str, **params) -> GameSpec:
    if name not in CATALOG:
        raise SpecError(f"unknown catalog entry {name!r}; known: {sorted(CATALOG)}")
    entry = CATALOG[name]
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise SpecError(f"{name}: unknown parameter(s) {sorted(unknown)}; allowed {sorted(entry.defaults)}")
    merged = {**entry.defaults, **params}
    spec = entry.builder(**merged)
    object.__setattr__(spec, "params", merged)
    object.__setattr__(spec, "name", name)
    return spec


def catalog_list() -> list:
    return [
        {"name": e.name, "summary": e.summary, "parameters": e.schema(), "defaults": e.defaults}
        for e in CATALOG.values()
    ]


def _const(c):
    return lambda *args: np.full(np.shape(args[1] if len(args) > 1 else args[0])[0], float(c))


def _zero_drift(t, x, u, v):
    return np.zeros_like(x)


def _payoff(kind: str, scale: float = 1.0) -> Callable:
    kinds = {
        "abs": lambda x: scale * np.abs(x[:, 0]),
        "cos": lambda x: scale * np.cos(x[:, 0]),
        "linear": lambda x: scale * x[:, 0],
        "call": lambda x: scale * np.maximum(x[:, 0], 0.0),
        "put": lambda x: scale * np.maximum(-x[:, 0], 0.0),
        "zero": lambda x: np.zeros(x.shape[0]),
    }
    if kind not in kinds:
        raise SpecError(f"unknown payoff {kind!r}; known: {sorted(kinds)}")
    return kinds[kind]


@register("constant-drift", "b = mu, sigma const, f_j = -r y, call/put payoffs used as obstacles",
          mu=0.5, sigma=1.0, r=0.1)
def _constant_drift(mu, sigma, r):
    pay = (_payoff("call"), _payoff("put"))
    f = lambda t, x, y, z, u, v: -r * y
    return GameSpec(
        n=1, d=1,
        b=lambda t, x, u, v: np.full_like(x, mu),
        sigma=lambda t, x, u, v: np.full((x.shape[0], 1, 1), sigma),
        f=(f, f), Phi=pay, h=(lambda t, x: pay[0](x), lambda t, x: pay[1](x)),
        U=ControlSet.from_values("U", [0.0]), V=ControlSet.from_values("V", [0.0]),
        lipschitz=max(1.0, abs(r)), bounds={"b": abs(mu), "sigma": abs(sigma)},
    )


@register("additive-control", "b = u + v, sigma const, f = 0, Phi_2 = +/- Phi_1",
          sigma=1.0, U=[-1.0, 0.0, 1.0], V=[-1.0, 0.0, 1.0], payoff="cos", zero_sum=False,
          obstacle=FAR_BELOW)
def _additive(sigma, U, V, payoff, zero_sum, obstacle):
    p1 = _payoff(payoff)
    p2 = _payoff(payoff, -1.0 if zero_sum else 1.0)
    zero = lambda t, x, y, z, u, v: np.zeros(x.shape[0])
    low = min(obstacle, -1.0) if payoff == "cos" else obstacle
    umax = float(np.max(np.abs(U)) + np.max(np.abs(V)))
    return GameSpec(
        n=1, d=1,
        b=lambda t, x, u, v: u + v,
        sigma=lambda t, x, u, v: np.full((x.shape[0], 1, 1), sigma),
        f=(zero, zero), Phi=(p1, p2), h=(_const(low), _const(low)),
        U=ControlSet.from_values("U", U), V=ControlSet.from_values("V", V),
        lipschitz=1.0, bounds={"b": umax, "sigma": abs(sigma)},
    )


@register("multiplicative-coupled", "b = 0, sigma = 1, f_j = kappa u v z: the Isaacs condition fails",
          kappa=1.0, U=[-1.0, 1.0], V=[-1.0, 1.0])
def _multiplicative(kappa, U, V):
    f = lambda t, x, y, z, u, v: kappa * u[:, 0] * v[:, 0] * z[:, 0]
    cos = _payoff("cos")
    return GameSpec(
        n=1, d=1,
        b=_zero_drift,
        sigma=lambda t, x, u, v: np.ones((x.shape[0], 1, 1)),
        f=(f, f), Phi=(cos, cos), h=(_const(-1.0), _const(-1.0)),
        U=ControlSet.from_values("U", U), V=ControlSet.from_values("V", V),
        lipschitz=max(1.0, abs(kappa) * float(np.max(np.abs(U)) * np.max(np.abs(V)))),
        bounds={"b": 0.0, "sigma": 1.0},
    )


@register("decoupled-quadratic-costs", "b = u + v, f_1 = -w u^2, f_2 = -w v^2, Phi = 0, h = -1",
          weight=1.0, sigma=1.0, obstacle=-1.0, U=[-1.0, 0.0, 1.0], V=[-1.0, 0.0, 1.0])
def _decoupled(weight, sigma, obstacle, U, V):
    if obstacle > 0:
        raise SpecError("obstacle must be <= 0 = Phi")
    umax = float(np.max(np.abs(U)) + np.max(np.abs(V)))
    return GameSpec(
        n=1, d=1,
        b=lambda t, x, u, v: u + v,
        sigma=lambda t, x, u, v: np.full((x.shape[0], 1, 1), sigma),
        f=(lambda t, x, y, z, u, v: -weight * u[:, 0] ** 2,
           lambda t, x, y, z, u, v: -weight * v[:, 0] ** 2),
        Phi=(_payoff("zero"), _payoff("zero")), h=(_const(obstacle), _const(obstacle)),
        U=ControlSet.from_values("U", U), V=ControlSet.from_values("V", V),
        lipschitz=1.0, bounds={"b": umax, "sigma": abs(sigma)},
    )


@register("american-put", "log-price x, b = r - sigma^2/2, f = -r y, Phi = h = (K - e^x)^+",
          strike=100.0, vol=0.2, rate=0.05)
def _american_put(strike, vol, rate):
    pay = lambda x: np.maximum(strike - np.exp(x[:, 0]), 0.0)
    f = lambda t, x, y, z, u, v: -rate * y
    lk = math.log(strike)
    return GameSpec(
        n=1, d=1,
        b=lambda t, x, u, v: np.full_like(x, rate - 0.5 * vol ** 2),
        sigma=lambda t, x, u, v: np.full((x.shape[0], 1, 1), vol),
        f=(f, f), Phi=(pay, pay), h=(lambda t, x: pay(x), lambda t, x: pay(x)),
        U=ControlSet.from_values("U", [0.0]), V=ControlSet.from_values("V", [0.0]),
        lipschitz=float(strike), y_lipschitz=float(rate),
        bounds={"Phi": float(strike), "h": float(strike)},
        domain=(lk - 1.5, lk + 1.0),
    )


@register("zero-sum-absolute-terminal", "b = u + v, sigma = 1, f = 0, Phi_1 = |x| = -Phi_2",
          U=[-1.0, 1.0], V=[-1.0, 1.0], obstacle=FAR_BELOW)
def _zero_sum_abs(U, V, obstacle):
    return _additive(1.0, U, V, "abs", True, obstacle)


@register("heat", "b = 0, sigma const, f = 0, singleton controls, Phi = amplitude cos(x)",
          sigma=math.sqrt(2.0), amplitude=1.0, obstacle=FAR_BELOW)
def _heat(sigma, amplitude, obstacle):
    cos = _payoff("cos", amplitude)
    zero = lambda t, x, y, z, u, v: np.zeros(x.shape[0])
    low = min(obstacle, -abs(amplitude))
    return GameSpec(
        n=1, d=1,
        b=_zero_drift,
        sigma=lambda t, x, u, v: np.full((x.shape[0], 1, 1), sigma),
        f=(zero, zero), Phi=(cos, cos), h=(_const(low), _const(low)),
        U=ControlSet.from_values("U", [0.0]), V=ControlSet.from_values("V", [0.0]),
        lipschitz=max(1.0, abs(amplitude)), bounds={"b": 0.0, "sigma": abs(sigma)},
    )


def _poly(coeffs) -> Callable:
    c = np.asarray(coeffs, dtype=float)
    return lambda s: np.polynomial.polynomial.polyval(s, c) if c.size else np.zeros_like(s)


@register("polynomial", "coefficient tables: polynomials in x plus linear control/y/z terms",
          b=[0.0], b_u=1.0, b_v=1.0, sigma=[1.0],
          f1={"y": 0.0, "z": 0.0, "x": [0.0], "u2": 0.0, "v2": 0.0, "uv": 0.0},
          f2={"y": 0.0, "z": 0.0, "x": [0.0], "u2": 0.0, "v2": 0.0, "uv": 0.0},
          Phi1=[0.0], Phi2=[0.0], h1=[FAR_BELOW], h2=[FAR_BELOW],
          U=[-1.0, 0.0, 1.0], V=[-1.0, 0.0, 1.0], lipschitz=1.0, domain=[-3.0, 3.0])
def _polynomial(b, b_u, b_v, sigma, f1, f2, Phi1, Phi2, h1, h2, U, V, lipschitz, domain):
    pb, ps = _poly(b), _poly(sigma)

    def driver(table):
        keys = {"y", "z", "x", "u2", "v2", "uv"}
        if set(table) - keys:
            raise SpecError(f"driver table keys must be among {sorted(keys)}")
        a, c = float(table.get("y", 0.0)), float(table.get("z", 0.0))
        px = _poly(table.get("x", [0.0]))
        cu, cv, cuv = (float(table.get(k, 0.0)) for k in ("u2", "v2", "uv"))
        return lambda t, x, y, z, u, v: (
            a * y + c * z[:, 0] + px(x[:, 0])
            + cu * u[:, 0] ** 2 + cv * v[:, 0] ** 2 + cuv * u[:, 0] * v[:, 0]
        )

    terminals = (_poly(Phi1), _poly(Phi2))
    obstacles = (_poly(h1), _poly(h2))
    return GameSpec(
        n=1, d=1,
        b=lambda t, x, u, v: pb(x) + b_u * u + b_v * v,
        sigma=lambda t, x, u, v: ps(x)[:, :, None],
        f=(driver(f1), driver(f2)),
        Phi=(lambda x: terminals[0](x[:, 0]), lambda x: terminals[1](x[:, 0])),
        h=(lambda t, x: obstacles[0](x[:, 0]), lambda t, x: obstacles[1](x[:, 0])),
        U=ControlSet.from_values("U", U), V=ControlSet.from_values("V", V),
        lipschitz=float(lipschitz), domain=tuple(domain),
    )
