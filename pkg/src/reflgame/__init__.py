"""Reflected BSDEs, obstacle Isaacs equations and Nash payoffs for stochastic differential games."""

__version__ = "0.1.0"
