"""Tamed Euler-Maruyama schemes for neutral stochastic delay equations."""

__version__ = "0.1.0"
