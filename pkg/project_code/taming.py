# project_code/taming.py
"""
Taming transform for drift coefficients.

    b_h(x, y) = b(x, y) / (1 + h^alpha * |b(x, y)|)

with |.| the Euclidean norm of the whole drift vector (never componentwise),
so the direction of b is kept and |b_h| <= min(h^-alpha, |b|). The same
transform gives f_h for the jump-driven equation.

Admissible alpha ranges are checked by the system types, not here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np


def tame_vector(b_values: np.ndarray, h: Any, alpha: float) -> np.ndarray:
    """Apply the taming factor to drift vectors already evaluated, shape (..., n)."""
    b_values = np.asarray(b_values, dtype=float)
    scale = float(h) ** alpha
    norm = np.linalg.norm(b_values, axis=-1, keepdims=True)
    return b_values / (1.0 + scale * norm)


@dataclass(frozen=True)
class TamedDrift:
    """b_h for a fixed step size h and exponent alpha."""

    base: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: float
    alpha: float

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return tame_vector(self.base(x, y), self.h, self.alpha)

    @property
    def bound(self) -> float:
        """h^-alpha, the cap on |b_h|."""
        return float(self.h) ** (-self.alpha)


def tame(base_drift: Callable[[np.ndarray, np.ndarray], np.ndarray], h: Any, alpha: float) -> TamedDrift:
    return TamedDrift(base=base_drift, h=float(h), alpha=float(alpha))
