"""Reference values computed without the solvers' code paths.

These are deliberately written out by hand (scalar loops, closed forms) so that
agreement with the lattice/LSMC/PDE solvers is evidence, not tautology.
"""
from __future__ import annotations

import math


def american_put_binomial(spot: float, strike: float, rate: float, vol: float, T: float,
                          steps: int, log_step: float | None = None) -> float:
    """American put by binomial backward induction on log-price.

    Up/down moves are +/- ``log_step`` (default ``vol*sqrt(dt)``, with the drift
    folded into the up-probability) and values are discounted by exp(-r dt).
    """
    dt = T / steps
    m1 = (rate - 0.5 * vol * vol) * dt
    dx = math.sqrt(vol * vol * dt + m1 * m1) if log_step is None else log_step
    p = 0.5 * ((vol * vol * dt + m1 * m1) / (dx * dx) + m1 / dx)
    disc = math.exp(-rate * dt)
    x0 = math.log(spot)
    values = [max(strike - math.exp(x0 + (2 * k - steps) * dx), 0.0) for k in range(steps + 1)]
    for i in range(steps - 1, -1, -1):
        nxt = values
        values = []
        for k in range(i + 1):
            cont = disc * (p * nxt[k + 1] + (1.0 - p) * nxt[k])
            exercise = max(strike - math.exp(x0 + (2 * k - i) * dx), 0.0)
            values.append(max(cont, exercise))
    return values[0]


def heat_cosine(t: float, x: float, T: float, sigma: float) -> float:
    """E[cos(x + sigma B_{T-t})] = exp(-sigma^2 (T-t)/2) cos(x)."""
    return math.exp(-0.5 * sigma * sigma * (T - t)) * math.cos(x)


def expected_abs_gaussian(x: float, var: float) -> float:
    """E|x + sqrt(var) N| for a standard normal N."""
    if var <= 0:
        return abs(x)
    s = math.sqrt(var)
    return x * math.erf(x / (s * math.sqrt(2.0))) + s * math.sqrt(2.0 / math.pi) * math.exp(-x * x / (2 * var))
