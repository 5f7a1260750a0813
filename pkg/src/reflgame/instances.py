"""Randomized 1-D instances for the comparison properties.

A base spec is drawn from the ``polynomial`` catalog family, then shifted into
an ordered pair (A, B): f_A <= f_B, Phi_A <= Phi_B, h_A <= h_B, same dynamics.
The terminal value is a parabola and the obstacle a line kept under it, so the
obstacle binds on part of the lattice without violating Phi >= h(T).
"""
from __future__ import annotations

import numpy as np

from .catalog import build_spec
from .sde_core import GameSpec, shift_spec


def random_polynomial_spec(rng: np.random.Generator, sigma: float = 1.0) -> GameSpec:
    curv = float(rng.uniform(0.1, 0.5))
    slope = float(rng.uniform(-1.0, 1.0))
    phi0 = float(rng.uniform(-0.5, 0.5))
    # phi - h = curv x^2 - slope x - h0 >= 0 for all x when h0 <= -slope^2 / (4 curv)
    h0 = -slope ** 2 / (4.0 * curv) - float(rng.uniform(0.0, 0.2))
    table = lambda: {
        "y": float(rng.uniform(-0.5, 0.5)), "z": float(rng.uniform(-0.5, 0.5)),
        "x": [float(rng.uniform(-0.3, 0.3)), float(rng.uniform(-0.3, 0.3))],
        "u2": float(rng.uniform(-0.3, 0.3)), "v2": float(rng.uniform(-0.3, 0.3)),
        "uv": float(rng.uniform(-0.3, 0.3)),
    }
    return build_spec(
        "polynomial",
        b=[float(rng.uniform(-0.3, 0.3))], b_u=float(rng.uniform(0.0, 0.5)), b_v=float(rng.uniform(0.0, 0.5)),
        sigma=[sigma], f1=table(), f2=table(),
        Phi1=[phi0, 0.0, curv], Phi2=[phi0, 0.0, curv],
        h1=[phi0 + h0, slope], h2=[phi0 + h0, slope],
        lipschitz=4.0, domain=[-3.0, 3.0],
    )


def ordered_pair(base: GameSpec, rng: np.random.Generator, equal_obstacle: bool = True,
                 scale: float = 0.5) -> tuple:
    """(A, B) with A's driver, terminal and (optionally) obstacle shifted down."""
    dh = 0.0 if equal_obstacle else -float(rng.uniform(0.0, scale))
    a = shift_spec(base, f=-float(rng.uniform(0.0, scale)), h=dh, name=f"{base.name}/A")
    b = shift_spec(base, phi=float(rng.uniform(0.0, scale)), name=f"{base.name}/B")
    return a, b
