# project_code/scheme_bm.py
"""
Tamed Euler-Maruyama recursion for Brownian-driven neutral delay equations.

PURPOSE: Advance

    Y(n+1) - D(Y(n+1-Mbar)) = Y(n) - D(Y(n-Mbar)) + b_h(Y(n), Y(n-Mbar)) h
                              + sigma(Y(n), Y(n-Mbar)) dB(n)

for n = 0..M-1 from Y(n) = xi(nh), n = -Mbar..0, and run the untamed
recursion (raw b in place of b_h) as a blow-up contrast.

FUNCTIONS:
- step_contribution()  -> (b_h h, sigma dB) of one step
- step_bm()            -> one step of the recursion
- simulate_bm_paths()  -> many paths at once, arrays in / arrays out
- simulate_bm()        -> one path as a PathRecord
- simulate_untamed()   -> untamed contrast, explosion reported on the record

Only grid values are produced; the continuous interpolant coincides with
them at grid times and is never evaluated off the grid.
"""

from __future__ import annotations

import logging
from typing import Any, Optional, Tuple

import numpy as np

from project_code.driver import BrownianPathIncrements
from project_code.exceptions import GridMismatch, InvalidRange, NonFiniteState
from project_code.model import DiffusionSystem, InitialSegment, PathRecord, check_same_grid
from project_code.taming import tame_vector

logger = logging.getLogger(__name__)


# ============================================================================
# ONE STEP
# ============================================================================

def step_contribution(
    sys: DiffusionSystem,
    y_n: np.ndarray,
    y_n_delay: np.ndarray,
    h: Any,
    dB: np.ndarray,
    tamed: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """Drift part b_h(y_n, y_n_delay) h and noise part sigma(y_n, y_n_delay) dB."""
    drift = np.asarray(sys.b(y_n, y_n_delay), dtype=float)
    if tamed:
        drift = tame_vector(drift, h, sys.alpha)
    sig = np.asarray(sys.sigma(y_n, y_n_delay), dtype=float)
    noise = (sig * np.asarray(dB, dtype=float)[..., None, :]).sum(axis=-1)
    return drift * float(h), noise


def _advance(
    sys: DiffusionSystem,
    y_n: np.ndarray,
    y_n_delay: np.ndarray,
    y_np1_delay: np.ndarray,
    h: Any,
    dB: np.ndarray,
    tamed: bool,
) -> np.ndarray:
    y_n = np.asarray(y_n, dtype=float)
    drift, noise = step_contribution(sys, y_n, y_n_delay, h, dB, tamed=tamed)
    return sys.D(y_np1_delay) + y_n - sys.D(y_n_delay) + drift + noise


def step_bm(
    sys: DiffusionSystem,
    y_n: np.ndarray,
    y_n_delay: np.ndarray,
    y_np1_delay: np.ndarray,
    h: Any,
    dB: np.ndarray,
    tamed: bool = True,
) -> np.ndarray:
    """
    D(y_np1_delay) + y_n - D(y_n_delay) + b_h(y_n, y_n_delay) h + sigma dB.

    Raises:
        NonFiniteState: the new state is not finite
    """
    with np.errstate(over="ignore", invalid="ignore"):
        out = _advance(sys, y_n, y_n_delay, y_np1_delay, h, dB, tamed)
    if tamed and not np.all(np.isfinite(out)):
        raise NonFiniteState(message="tamed step produced a non-finite state")
    return out


# ============================================================================
# MANY PATHS
# ============================================================================

def simulate_bm_paths(
    sys: DiffusionSystem,
    seg: InitialSegment,
    increments: np.ndarray,
    tamed: bool = True,
    explosion_threshold: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Run the recursion for P paths sharing one initial segment.

    Args:
        sys: coefficient system
        seg: initial segment on the simulation grid
        increments: Brownian increments, shape (P, M, m)
        tamed: use b_h (True) or raw b (False)
        explosion_threshold: untamed runs only; a path whose norm exceeds it
            (or turns non-finite) is frozen and marked exploded

    Returns:
        values: (P, Mbar + M + 1, n) array, row i is grid index i - Mbar.
            Exploded paths hold NaN from their explosion row on.
        explode_step: (P,) grid index of the first exploded value, -1 if none

    Raises:
        NonFiniteState: a tamed path became non-finite (step and path stamped)
    """
    grid = seg.grid
    dB = np.asarray(increments, dtype=float)
    if dB.ndim != 3 or dB.shape[1] != grid.M:
        raise GridMismatch(f"Expected increments of shape (P, {grid.M}, m), got {dB.shape}")
    if dB.shape[2] != sys.dim_noise:
        raise GridMismatch(f"System has m={sys.dim_noise} noise channels, increments have {dB.shape[2]}")
    if seg.dim != sys.dim_state:
        raise GridMismatch(f"System has n={sys.dim_state}, segment has dimension {seg.dim}")
    if not tamed and explosion_threshold is not None and not (explosion_threshold > 0):
        raise InvalidRange(f"Explosion threshold must be positive, got {explosion_threshold}")

    n_paths = dB.shape[0]
    Mbar, h = grid.Mbar, grid.h
    values = np.empty((n_paths, grid.n_values, sys.dim_state))
    values[:, : Mbar + 1] = seg.values
    explode_step = np.full(n_paths, -1, dtype=np.int64)
    alive = np.ones(n_paths, dtype=bool)

    for n in range(grid.M):
        i = n + Mbar
        with np.errstate(over="ignore", invalid="ignore"):
            y_next = _advance(
                sys,
                values[:, i],
                values[:, i - Mbar],
                values[:, i + 1 - Mbar],
                h,
                dB[:, n],
                tamed,
            )

        if not tamed:
            with np.errstate(over="ignore", invalid="ignore"):
                norm = np.linalg.norm(y_next, axis=-1)
            ok = np.isfinite(norm)
            if explosion_threshold is not None:
                ok &= norm <= explosion_threshold
            blown = alive & ~ok
            if blown.any():
                explode_step[blown] = n + 1
                alive &= ~blown
            y_next[~alive] = np.nan
        elif not np.all(np.isfinite(y_next)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(y_next), axis=-1))[0])
            raise NonFiniteState(step=n, path=bad)

        values[:, i + 1] = y_next

    return values, explode_step


def _check_driver(seg: InitialSegment, drv: BrownianPathIncrements) -> None:
    check_same_grid(seg.grid, drv.grid, "Initial segment and Brownian increments")


def simulate_bm(sys: DiffusionSystem, seg: InitialSegment, drv: BrownianPathIncrements) -> PathRecord:
    """Tamed path on the driver's grid."""
    _check_driver(seg, drv)
    values, _ = simulate_bm_paths(sys, seg, drv.increments[None])
    return PathRecord(grid=seg.grid, values=values[0])


def simulate_untamed(
    sys: DiffusionSystem,
    seg: InitialSegment,
    drv: BrownianPathIncrements,
    explosion_threshold: float,
) -> PathRecord:
    """
    Same recursion with raw b. Crossing the threshold is an outcome, not an
    error: the record comes back flagged exploded with NaN markers after it.
    """
    _check_driver(seg, drv)
    values, explode_step = simulate_bm_paths(
        sys, seg, drv.increments[None], tamed=False, explosion_threshold=explosion_threshold
    )
    step = int(explode_step[0])
    if step >= 0:
        logger.warning("Untamed path exploded at grid index %d (threshold %g)", step, explosion_threshold)
    return PathRecord(
        grid=seg.grid,
        values=values[0],
        exploded=step >= 0,
        explode_step=step if step >= 0 else None,
    )
