# project_code/model.py
"""
Domain types: time grids, initial segments, coefficient systems, path records.

PURPOSE: Hold the structural data every scheme and experiment shares, and
validate the structural constraints of the equations at construction time.

MAIN TYPES / FUNCTIONS:
- to_fraction()      -> exact rational from int / str / float / Fraction
- GridSpec           -> commensurate grid (T, tau, h, M, Mbar)
- build_grid()       -> validated GridSpec from (T, tau, h)
- InitialSegment     -> history xi(nh), n = -Mbar..0
- sample_segment()   -> InitialSegment from a history function
- DiffusionSystem    -> (D, b, sigma) + assumption constants + taming exponent
- JumpSystem         -> (G, f, g, Gc, lambda(U), mark sampler) + constants
- PathRecord         -> one simulated path on a grid

Index convention: value arrays are stored with row i holding grid index
n = i - Mbar, so row 0 is xi(-tau) and row Mbar is the value at t = 0.

Both schemes apply their recursion for n = 0, ..., M-1. The source equations
index the recursion from n = 1 while starting from Y(0) = xi(0), which
leaves the step producing Y(1) unindexed; this is read as an index typo and
the recursion is started at n = 0 (see model.md).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Integral, Real
from typing import Any, Callable, Optional

import numpy as np

from project_code.exceptions import (
    GridMismatch,
    InvalidRange,
    NonFiniteState,
    NotCommensurate,
    NotDivisible,
)

# Coefficient maps are vectorized over leading batch axes:
#   D, G:         (..., n) -> (..., n)
#   b, f, Gc:     (..., n), (..., n) -> (..., n)
#   sigma:        (..., n), (..., n) -> (..., n, m)
#   g:            (..., n), (..., n), (..., d) -> (..., n)
#   mark_sampler: (numpy Generator, size) -> (size, d)
Map = Callable[..., np.ndarray]
MarkSampler = Callable[[np.random.Generator, int], np.ndarray]

_ZERO_TOL = 1e-12


# ============================================================================
# EXACT ARITHMETIC HELPERS
# ============================================================================

def to_fraction(value: Any) -> Fraction:
    """
    Convert a time-like value to an exact Fraction.

    Floats go through their shortest repr, so 0.1 becomes 1/10 (not the
    binary expansion). Strings may be decimals ("0.125") or ratios ("1/8").
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InvalidRange(f"Expected a number, got bool {value!r}")
    if isinstance(value, Integral):
        return Fraction(int(value))
    if isinstance(value, Real):
        as_float = float(value)
        if not math.isfinite(as_float):
            raise InvalidRange(f"Expected a finite number, got {value!r}")
        return Fraction(repr(as_float))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise InvalidRange(f"Cannot read {value!r} as a rational number") from e
    raise InvalidRange(f"Expected a number, got {type(value).__name__}")


# ============================================================================
# GRID
# ============================================================================

@dataclass(frozen=True)
class GridSpec:
    """Commensurate grid with h*M = T and h*Mbar = tau held exactly."""

    T: Fraction
    tau: Fraction
    h: Fraction
    M: int
    Mbar: int

    def __post_init__(self):
        if not (0 < self.h < 1):
            raise InvalidRange(f"Step size h must lie in (0, 1), got {self.h}")
        if self.Mbar < 1 or self.M <= self.Mbar:
            raise InvalidRange(f"Need Mbar >= 1 and M > Mbar, got M={self.M}, Mbar={self.Mbar}")
        if self.h * self.M != self.T or self.h * self.Mbar != self.tau:
            raise NotCommensurate(
                f"h={self.h} does not satisfy h*M = T and h*Mbar = tau "
                f"(T={self.T}, tau={self.tau}, M={self.M}, Mbar={self.Mbar})"
            )

    @property
    def offset(self) -> int:
        """Array row of grid index n = 0."""
        return self.Mbar

    @property
    def n_values(self) -> int:
        """Rows in a full path array (n = -Mbar..M)."""
        return self.M + self.Mbar + 1

    def index(self, n: int) -> int:
        """Row of grid index n in a full path array."""
        if not -self.Mbar <= n <= self.M:
            raise InvalidRange(f"Grid index n={n} outside -{self.Mbar}..{self.M}")
        return n + self.Mbar

    def times(self) -> np.ndarray:
        """Grid times n*h for n = -Mbar..M, each rounded once from the exact value."""
        return np.array([float(n * self.h) for n in range(-self.Mbar, self.M + 1)])

    def refinement_factor(self, fine: "GridSpec") -> int:
        """Integer k with fine.h * k = self.h on the same horizon and delay."""
        if fine.T != self.T or fine.tau != self.tau:
            raise GridMismatch(
                f"Grids disagree on horizon/delay: (T={self.T}, tau={self.tau}) "
                f"vs (T={fine.T}, tau={fine.tau})"
            )
        ratio = self.h / fine.h
        if ratio.denominator != 1 or ratio < 1:
            raise NotDivisible(f"h={self.h} is not an integer multiple of h={fine.h}")
        return int(ratio)


def build_grid(T: Any, tau: Any, h: Any) -> GridSpec:
    """
    Build a grid with M = T/h and Mbar = tau/h, both exact integers.

    Raises:
        InvalidRange: h outside (0, 1), or not 0 < tau < T
        NotCommensurate: T/h or tau/h not an integer
    """
    T_, tau_, h_ = to_fraction(T), to_fraction(tau), to_fraction(h)

    if not (0 < h_ < 1):
        raise InvalidRange(f"Step size h must lie in (0, 1), got {h_}")
    if not (0 < tau_ < T_):
        raise InvalidRange(f"Need 0 < tau < T, got tau={tau_}, T={T_}")

    M = T_ / h_
    Mbar = tau_ / h_
    if M.denominator != 1:
        raise NotCommensurate(f"T/h = {T_}/{h_} = {M} is not an integer")
    if Mbar.denominator != 1:
        raise NotCommensurate(f"tau/h = {tau_}/{h_} = {Mbar} is not an integer")

    return GridSpec(T=T_, tau=tau_, h=h_, M=int(M), Mbar=int(Mbar))


# ============================================================================
# INITIAL DATA
# ============================================================================

@dataclass(frozen=True, eq=False)
class InitialSegment:
    """History xi sampled at n*h, n = -Mbar..0 (row Mbar is xi(0))."""

    grid: GridSpec
    values: np.ndarray
    holder_constant: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.Mbar + 1:
            raise GridMismatch(
                f"Segment needs {self.grid.Mbar + 1} rows for Mbar={self.grid.Mbar}, "
                f"got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidRange("Initial segment holds non-finite values")
        if not (self.holder_constant >= 0):
            raise InvalidRange(f"Holder constant must be >= 0, got {self.holder_constant}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, n: int) -> np.ndarray:
        """xi(n*h) for n = -Mbar..0."""
        if n > 0:
            raise InvalidRange(f"History index n={n} is after t = 0")
        return self.values[self.grid.index(n)]

    def lipschitz_ratio(self) -> float:
        """Largest |xi(t) - xi(s)| / |t - s| over adjacent grid points."""
        jumps = np.linalg.norm(np.diff(self.values, axis=0), axis=1)
        return float(jumps.max() / float(self.grid.h))


def sample_segment(xi: Callable[[float], Any], grid: GridSpec, holder_constant: float = 0.0) -> InitialSegment:
    """Evaluate the history xi at the grid points n*h, n = -Mbar..0."""
    rows = [
        np.atleast_1d(np.asarray(xi(float(n * grid.h)), dtype=float))
        for n in range(-grid.Mbar, 1)
    ]
    return InitialSegment(grid=grid, values=np.stack(rows), holder_constant=holder_constant)


# ============================================================================
# COEFFICIENT SYSTEMS
# ============================================================================

def _check_kappa(kappa: float) -> None:
    if not (0 < kappa < 1):
        raise InvalidRange(f"kappa must lie in (0, 1), got {kappa}")


def _check_vanishes_at_zero(fn: Map, dim: int, label: str) -> None:
    at_zero = np.asarray(fn(np.zeros(dim)), dtype=float)
    if at_zero.shape != (dim,):
        raise InvalidRange(f"{label} must map R^{dim} to R^{dim}, got output shape {at_zero.shape}")
    if not np.all(np.abs(at_zero) <= _ZERO_TOL):
        raise InvalidRange(f"{label}(0) must be 0, got {at_zero.tolist()}")


@dataclass(frozen=True)
class DiffusionSystem:
    """
    Brownian-driven neutral equation d[X - D(X(t-tau))] = b dt + sigma dB.

    growth_K is the A1 constant, lip_L and poly_l the A4 constants. alpha is
    the taming exponent, admissible in (0, 1/2].
    """

    dim_state: int
    dim_noise: int
    D: Map
    b: Map
    sigma: Map
    kappa: float
    growth_K: float
    lip_L: float
    poly_l: float
    alpha: float
    name: str = ""

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise InvalidRange(f"Dimensions must be >= 1, got n={self.dim_state}, m={self.dim_noise}")
        _check_kappa(self.kappa)
        if not (0 < self.alpha <= 0.5):
            raise InvalidRange(f"Diffusion taming exponent alpha must lie in (0, 1/2], got {self.alpha}")
        for label in ("growth_K", "lip_L", "poly_l"):
            if not (getattr(self, label) >= 0):
                raise InvalidRange(f"{label} must be >= 0, got {getattr(self, label)}")
        _check_vanishes_at_zero(self.D, self.dim_state, "D")


@dataclass(frozen=True)
class JumpSystem:
    """
    Jump-driven neutral equation
    d[x - G(x(t-tau))] = f dt + int_U g(x(t-), x((t-tau)-), u) Ntilde(du, dt).

    compensator(x, y) must equal int_U g(x, y, u) lambda(du) in closed form.
    alpha must satisfy alpha * moment_order < 1.
    """

    dim_state: int
    mark_dim: int
    G: Map
    f: Map
    g: Map
    compensator: Map
    total_intensity: float
    mark_sampler: MarkSampler
    kappa: float
    growth_K1: float
    lip_L: float
    poly_l: float
    alpha: float
    moment_order: float = 2.0
    name: str = ""

    def __post_init__(self):
        if self.dim_state < 1 or self.mark_dim < 1:
            raise InvalidRange(f"Dimensions must be >= 1, got n={self.dim_state}, d={self.mark_dim}")
        _check_kappa(self.kappa)
        if not (0 <= self.total_intensity < math.inf):
            raise InvalidRange(f"Total intensity must be finite and >= 0, got {self.total_intensity}")
        if not (self.moment_order > 0):
            raise InvalidRange(f"Moment order p must be positive, got {self.moment_order}")
        if not (self.alpha > 0 and self.alpha * self.moment_order < 1):
            raise InvalidRange(
                f"Jump taming exponent must satisfy 0 < alpha < 1/p, "
                f"got alpha={self.alpha}, p={self.moment_order}"
            )
        for label in ("growth_K1", "lip_L", "poly_l"):
            if not (getattr(self, label) >= 0):
                raise InvalidRange(f"{label} must be >= 0, got {getattr(self, label)}")
        _check_vanishes_at_zero(self.G, self.dim_state, "G")


# ============================================================================
# PATHS
# ============================================================================

@dataclass(frozen=True, eq=False)
class PathRecord:
    """
    One simulated path, rows n = -Mbar..M.

    An exploded record (untamed contrast runs only) holds NaN markers from
    explode_step onwards; every other record is finite.
    """

    grid: GridSpec
    values: np.ndarray
    exploded: bool = False
    explode_step: Optional[int] = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.n_values:
            raise GridMismatch(
                f"Path needs {self.grid.n_values} rows for this grid, got {values.shape[0]}"
            )
        if not self.exploded and not np.all(np.isfinite(values)):
            raise NonFiniteState(message="path record holds non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def at(self, n: int) -> np.ndarray:
        return self.values[self.grid.index(n)]

    def grid_values(self) -> np.ndarray:
        """Rows n = 0..M."""
        return self.values[self.grid.Mbar:]


def check_same_grid(a: GridSpec, b: GridSpec, what: str = "objects") -> None:
    if a != b:
        raise GridMismatch(
            f"{what} use different grids: (T={a.T}, tau={a.tau}, h={a.h}) "
            f"vs (T={b.T}, tau={b.tau}, h={b.h})"
        )
