# project_code/scheme_jump.py
"""
Tamed Euler-Maruyama recursion for neutral delay equations driven by
compensated marked Poisson noise.

    z(n+1) - G(z(n+1-Mbar)) = z(n) - G(z(n-Mbar)) + f_h(z(n), z(n-Mbar)) h
                              + sum_i g(z(n), z(n-Mbar), u_i) - h Gc(z(n), z(n-Mbar))

where the sum runs over the events with t_i in (nh, (n+1)h] and Gc is the
closed-form compensator int_U g(., ., u) lambda(du). State arguments of g are
the pre-step values (left limits). As for the Brownian scheme the recursion
runs for n = 0..M-1.
"""

from __future__ import annotations

import logging
from typing import Any, Sequence, Tuple

import numpy as np

from project_code.driver import JumpRealization, step_indices
from project_code.exceptions import GridMismatch, NonFiniteState
from project_code.model import GridSpec, InitialSegment, JumpSystem, PathRecord, check_same_grid
from project_code.taming import tame_vector

logger = logging.getLogger(__name__)


def jump_contribution(
    sys: JumpSystem,
    z_n: np.ndarray,
    z_n_delay: np.ndarray,
    h: Any,
    marks: np.ndarray,
) -> np.ndarray:
    """Compensated jump increment of one path: sum_i g(z_n, z_n_delay, u_i) - h Gc."""
    z_n = np.asarray(z_n, dtype=float)
    z_n_delay = np.asarray(z_n_delay, dtype=float)
    marks = np.asarray(marks, dtype=float).reshape(-1, sys.mark_dim)
    total = np.zeros_like(z_n)
    if marks.shape[0]:
        k = marks.shape[0]
        g_vals = sys.g(
            np.broadcast_to(z_n, (k,) + z_n.shape),
            np.broadcast_to(z_n_delay, (k,) + z_n_delay.shape),
            marks,
        )
        for row in np.asarray(g_vals, dtype=float):
            total += row
    return total - float(h) * np.asarray(sys.compensator(z_n, z_n_delay), dtype=float)


def step_jump(
    sys: JumpSystem,
    z_n: np.ndarray,
    z_n_delay: np.ndarray,
    z_np1_delay: np.ndarray,
    h: Any,
    step_events: Sequence,
) -> np.ndarray:
    """
    One step for a single path; step_events are the marks u_i of the events
    falling in the step window.

    Raises:
        NonFiniteState: the new state is not finite
    """
    z_n = np.asarray(z_n, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        drift = tame_vector(sys.f(z_n, z_n_delay), h, sys.alpha) * float(h)
        jumps = jump_contribution(sys, z_n, z_n_delay, h, step_events)
        out = sys.G(z_np1_delay) + z_n - sys.G(z_n_delay) + drift + jumps
    if not np.all(np.isfinite(out)):
        raise NonFiniteState(message="tamed jump step produced a non-finite state")
    return out


def _flatten_events(
    realizations: Sequence[JumpRealization], h: Any, M: int, mark_dim: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Owners, marks and step bounds of all events, grouped by step then path then time."""
    owners = np.concatenate(
        [np.full(r.n_events, j, dtype=np.int64) for j, r in enumerate(realizations)]
    )
    times = np.concatenate([r.times for r in realizations])
    marks = np.concatenate([r.marks.reshape(-1, mark_dim) for r in realizations])

    steps = np.minimum(step_indices(times, h), M - 1)
    order = np.argsort(steps, kind="stable")
    bounds = np.searchsorted(steps[order], np.arange(M + 1), side="left")
    return owners[order], marks[order], bounds


def simulate_jump_paths(
    sys: JumpSystem,
    seg: InitialSegment,
    grid: GridSpec,
    realizations: Sequence[JumpRealization],
) -> np.ndarray:
    """
    Run the recursion for one path per realization, vectorized over paths.

    Returns the (P, Mbar + M + 1, n) array of grid values (row i is grid
    index i - Mbar). Results are bit-identical to simulate_jump per path.

    Raises:
        GridMismatch: segment grid differs from grid, or a realization has
            another horizon
        NonFiniteState: a path became non-finite (step and path stamped)
    """
    check_same_grid(seg.grid, grid, "Initial segment and simulation grid")
    if seg.dim != sys.dim_state:
        raise GridMismatch(f"System has n={sys.dim_state}, segment has dimension {seg.dim}")
    for r in realizations:
        if r.grid.T != grid.T:
            raise GridMismatch(f"Jump realization horizon {r.grid.T} differs from grid horizon {grid.T}")
        if r.mark_dim != sys.mark_dim:
            raise GridMismatch(f"Marks have dimension {r.mark_dim}, system expects {sys.mark_dim}")

    n_paths = len(realizations)
    Mbar, h = grid.Mbar, grid.h
    h_float = float(h)
    owners, marks, bounds = _flatten_events(realizations, h, grid.M, sys.mark_dim)

    values = np.empty((n_paths, grid.n_values, sys.dim_state))
    values[:, : Mbar + 1] = seg.values

    for n in range(grid.M):
        i = n + Mbar
        z, z_delay, z_next_delay = values[:, i], values[:, i - Mbar], values[:, i + 1 - Mbar]
        with np.errstate(over="ignore", invalid="ignore"):
            drift = tame_vector(sys.f(z, z_delay), h, sys.alpha) * h_float

            jump_sum = np.zeros((n_paths, sys.dim_state))
            lo, hi = bounds[n], bounds[n + 1]
            if hi > lo:
                who = owners[lo:hi]
                g_vals = np.asarray(sys.g(z[who], z_delay[who], marks[lo:hi]), dtype=float)
                # unbuffered, in event order
                np.add.at(jump_sum, who, g_vals)
            jumps = jump_sum - h_float * np.asarray(sys.compensator(z, z_delay), dtype=float)

            z_next = sys.G(z_next_delay) + z - sys.G(z_delay) + drift + jumps

        if not np.all(np.isfinite(z_next)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(z_next), axis=-1))[0])
            raise NonFiniteState(step=n, path=bad)
        values[:, i + 1] = z_next

    logger.debug("Simulated %d jump paths on h=%s (%d events)", n_paths, h, owners.shape[0])
    return values


def simulate_jump(
    sys: JumpSystem,
    seg: InitialSegment,
    grid: GridSpec,
    jr: JumpRealization,
) -> PathRecord:
    """Tamed jump path on grid driven by the events of jr."""
    values = simulate_jump_paths(sys, seg, grid, [jr])
    return PathRecord(grid=grid, values=values[0])
