# project_code/driver.py
"""
Noise realizations: Brownian increments and marked Poisson jumps.

PURPOSE: Generate seed-reproducible driving noise and couple it across step
sizes, so two discretizations of one path see the same underlying noise.

FUNCTIONS:
- path_seed()        -> SeedSequence for (base_seed, path_index)
- gen_brownian()     -> i.i.d. N(0, h I_m) increments on a grid
- block_sum()        -> sequential block sums of increments (any batch axes)
- coarsen()          -> increments of the same Brownian path on a k-times coarser grid
- gen_jumps()        -> compound Poisson events (time, mark) on (0, T]
- step_indices()     -> window index n with t in (nH, (n+1)H] for each event
- events_in_step()   -> events of one step window
- save_realization() / load_realization() -> bit-exact .npz dump
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Tuple, Union

import numpy as np

from project_code.exceptions import GridMismatch, InvalidRange, NotDivisible
from project_code.model import GridSpec, MarkSampler, build_grid, to_fraction

logger = logging.getLogger(__name__)

Seed = Union[int, np.random.SeedSequence]


# ============================================================================
# SEEDING
# ============================================================================

def path_seed(base_seed: int, path_index: int) -> np.random.SeedSequence:
    """Per-path stream, independent of the order paths are scheduled in."""
    return np.random.SeedSequence([int(base_seed), int(path_index)])


# ============================================================================
# BROWNIAN INCREMENTS
# ============================================================================

@dataclass(frozen=True, eq=False)
class BrownianPathIncrements:
    """dB^(n) = B((n+1)h) - B(nh), n = 0..M-1, stored as an (M, m) array."""

    grid: GridSpec
    increments: np.ndarray

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        if inc.ndim != 2 or inc.shape[0] != self.grid.M:
            raise GridMismatch(f"Expected {self.grid.M} increments, got shape {inc.shape}")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def dim_noise(self) -> int:
        return self.increments.shape[1]

    def brownian_path(self) -> np.ndarray:
        """B(nh) for n = 0..M, starting from B(0) = 0."""
        start = np.zeros((1, self.dim_noise))
        return np.concatenate([start, np.cumsum(self.increments, axis=0)])


def gen_brownian(grid: GridSpec, dim_noise: int, seed: Seed) -> BrownianPathIncrements:
    """Draw M i.i.d. N(0, h I_m) increments; deterministic for a fixed seed."""
    if dim_noise < 1:
        raise InvalidRange(f"dim_noise must be >= 1, got {dim_noise}")
    rng = np.random.default_rng(seed)
    increments = rng.normal(0.0, math.sqrt(float(grid.h)), size=(grid.M, dim_noise))
    return BrownianPathIncrements(grid=grid, increments=increments)


def block_sum(increments: np.ndarray, k: int) -> np.ndarray:
    """
    Sum consecutive blocks of k increments along the step axis (axis -2).

    Blocks are accumulated left to right, so the result does not depend on
    numpy's reduction strategy and matches a plain running sum bit for bit.
    """
    arr = np.asarray(increments, dtype=float)
    n_steps = arr.shape[-2]
    if k < 1 or n_steps % k:
        raise NotDivisible(f"Block size {k} does not divide {n_steps} steps")
    blocks = arr.reshape(arr.shape[:-2] + (n_steps // k, k, arr.shape[-1]))
    out = blocks[..., 0, :].copy()
    for j in range(1, k):
        out += blocks[..., j, :]
    return out


def coarsen(fine: BrownianPathIncrements, factor: int) -> BrownianPathIncrements:
    """Increments of the same Brownian path on the grid with step factor * h."""
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise NotDivisible(f"Refinement factor must be a positive integer, got {factor!r}")
    k = int(factor)
    if fine.grid.M % k or fine.grid.Mbar % k:
        raise NotDivisible(
            f"Factor {k} does not divide M={fine.grid.M} and Mbar={fine.grid.Mbar}"
        )
    if k == 1:
        return fine
    coarse_grid = build_grid(fine.grid.T, fine.grid.tau, fine.grid.h * k)
    return BrownianPathIncrements(grid=coarse_grid, increments=block_sum(fine.increments, k))


# ============================================================================
# POISSON JUMPS
# ============================================================================

@dataclass(frozen=True, eq=False)
class JumpRealization:
    """
    Events (t_i, u_i) of the Poisson random measure on (0, T] x U.

    The event set does not depend on any step size; grid only fixes T and
    tau, so one realization drives every resolution of a path.
    """

    grid: GridSpec
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        marks = np.array(self.marks, dtype=float)
        if marks.ndim == 1:
            marks = marks.reshape(times.shape[0], -1) if times.size else marks.reshape(0, 1)
        if marks.shape[0] != times.shape[0]:
            raise GridMismatch(f"{times.shape[0]} event times but {marks.shape[0]} marks")
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise InvalidRange("Event times must be strictly increasing")
            if times[0] <= 0 or times[-1] > float(self.grid.T):
                raise InvalidRange(f"Event times must lie in (0, {self.grid.T}]")
        times.setflags(write=False)
        marks.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)

    @property
    def n_events(self) -> int:
        return self.times.shape[0]

    @property
    def mark_dim(self) -> int:
        return self.marks.shape[1]


def gen_jumps(
    grid: GridSpec,
    total_intensity: float,
    mark_sampler: MarkSampler,
    seed: Seed,
    mark_dim: int = 1,
) -> JumpRealization:
    """
    Poisson(lambda(U) T) events, times i.i.d. uniform on (0, T] then sorted,
    marks i.i.d. from mark_sampler. Deterministic for a fixed seed.
    """
    if not (total_intensity >= 0):
        raise InvalidRange(f"Total intensity must be >= 0, got {total_intensity}")
    rng = np.random.default_rng(seed)
    horizon = float(grid.T)
    count = int(rng.poisson(total_intensity * horizon)) if total_intensity > 0 else 0
    if count == 0:
        return JumpRealization(grid=grid, times=np.empty(0), marks=np.empty((0, mark_dim)))

    # 1 - U maps [0, 1) onto (0, 1]
    times = np.sort(horizon * (1.0 - rng.random(count)))
    marks = np.asarray(mark_sampler(rng, count), dtype=float).reshape(count, -1)
    return JumpRealization(grid=grid, times=times, marks=marks)


def step_indices(times: np.ndarray, H: Any) -> np.ndarray:
    """Index n of the half-open window (nH, (n+1)H] holding each time."""
    idx = np.ceil(np.asarray(times, dtype=float) / float(to_fraction(H))).astype(np.int64) - 1
    return np.maximum(idx, 0)


def events_in_step(jr: JumpRealization, n: int, H: Any) -> Tuple[np.ndarray, np.ndarray]:
    """
    Events with t in (nH, (n+1)H], in time order, as (times, marks).

    A jump exactly at a grid time belongs to the earlier step (left limits).
    """
    if n < 0 or (n + 1) * to_fraction(H) > jr.grid.T:
        raise InvalidRange(f"Window {n} of width {H} is not inside (0, {jr.grid.T}]")
    mask = step_indices(jr.times, H) == n
    return jr.times[mask], jr.marks[mask]


# ============================================================================
# BINARY DUMP
# ============================================================================

def _grid_array(grid: GridSpec) -> np.ndarray:
    return np.array(
        [grid.T.numerator, grid.T.denominator,
         grid.tau.numerator, grid.tau.denominator,
         grid.h.numerator, grid.h.denominator],
        dtype=np.int64,
    )


def _grid_from_array(arr: np.ndarray) -> GridSpec:
    T = Fraction(int(arr[0]), int(arr[1]))
    tau = Fraction(int(arr[2]), int(arr[3]))
    h = Fraction(int(arr[4]), int(arr[5]))
    return build_grid(T, tau, h)


def save_realization(path: str, realization: Union[BrownianPathIncrements, JumpRealization]) -> None:
    """Write a realization to a .npz container (numpy appends .npz if missing)."""
    grid = _grid_array(realization.grid)
    if isinstance(realization, BrownianPathIncrements):
        np.savez(path, kind=np.array("brownian"), grid=grid, increments=realization.increments)
    elif isinstance(realization, JumpRealization):
        np.savez(path, kind=np.array("jumps"), grid=grid,
                 times=realization.times, marks=realization.marks)
    else:
        raise TypeError(f"Cannot dump {type(realization).__name__}")
    logger.debug("Saved %s realization to %s", type(realization).__name__, path)


def load_realization(path: str) -> Union[BrownianPathIncrements, JumpRealization]:
    with np.load(path, allow_pickle=False) as data:
        kind = str(data["kind"])
        grid = _grid_from_array(data["grid"])
        if kind == "brownian":
            return BrownianPathIncrements(grid=grid, increments=data["increments"])
        if kind == "jumps":
            return JumpRealization(grid=grid, times=data["times"], marks=data["marks"])
    raise ValueError(f"Unknown realization kind {kind!r} in {path}")
