# project_code/analysis.py
"""
Strong-error and moment experiments for the tamed schemes.

PURPOSE: Estimate E[sup_n |Y_h - Y_ref|^p] over a sweep of step sizes with
coupled noise, estimate E[sup_n |Y_h|^p], and fit log-log convergence slopes.

FUNCTIONS:
- sup_diff()         -> max over coarse grid indices of |coarse - fine| at shared times
- moment_estimate()  -> mean of sup_n |Y(n)|^p over a set of paths
- fit_order()        -> OLS of ln(err) on ln(h), with r^2
- strong_error()     -> ErrorReport for a step-size sweep against a fine reference
- moment_sweep()     -> MomentReport (tamed or untamed) for a step-size sweep

Determinism: paths are split into fixed chunks, every per-path quantity is
written to its slot in a preallocated array and reductions run over whole
arrays afterwards, so the thread count never changes a reported number.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from project_code.driver import block_sum, gen_brownian, gen_jumps, path_seed
from project_code.exceptions import (
    GridMismatch,
    InsufficientData,
    InvalidRange,
    NonFiniteState,
    NonPositiveValue,
)
from project_code.model import (
    DiffusionSystem,
    GridSpec,
    JumpSystem,
    PathRecord,
    build_grid,
    sample_segment,
)
from project_code.scheme_bm import simulate_bm_paths
from project_code.scheme_jump import simulate_jump_paths

logger = logging.getLogger(__name__)

System = Union[DiffusionSystem, JumpSystem]
History = Callable[[float], Any]
# exact(grid, increments[..., M, m]) -> values[..., Mbar + M + 1, n]
ExactPath = Callable[[GridSpec, np.ndarray], np.ndarray]

ERROR_COLUMNS = ["h", "n_paths", "p", "err_p", "err_root", "stderr", "moment_p"]
MOMENT_COLUMNS = ["h", "n_paths", "p", "moment_p", "stderr", "exploded_fraction"]


# ============================================================================
# REPORTS
# ============================================================================

@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    r_squared: float


@dataclass(frozen=True)
class ErrorRow:
    h: float
    n_paths: int
    p: float
    err_p: float
    err_root: float
    stderr: float
    moment_p: float


@dataclass(frozen=True)
class ErrorReport:
    """
    Rows sorted by decreasing h. fit is None when fewer than two rows have a
    positive error (nothing to regress).
    """

    rows: Tuple[ErrorRow, ...]
    fit: Optional[OrderFit]
    reference: str = "self"
    driver: str = "brownian"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=ERROR_COLUMNS)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "driver": self.driver,
            "reference": self.reference,
            "rows": [asdict(r) for r in self.rows],
            "fit": asdict(self.fit) if self.fit is not None else None,
        }


@dataclass(frozen=True)
class MomentRow:
    h: float
    n_paths: int
    p: float
    moment_p: float
    stderr: float
    exploded_fraction: float


@dataclass(frozen=True)
class MomentReport:
    rows: Tuple[MomentRow, ...]
    tamed: bool = True
    driver: str = "brownian"

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=MOMENT_COLUMNS)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "driver": self.driver,
            "tamed": self.tamed,
            "rows": [{k: _json_number(v) for k, v in asdict(r).items()} for r in self.rows],
        }


def _json_number(value: Any) -> Any:
    # NaN is not valid JSON
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


# ============================================================================
# PATH FUNCTIONALS
# ============================================================================

def _sup_diff_values(
    coarse: np.ndarray, coarse_grid: GridSpec, fine: np.ndarray, fine_grid: GridSpec, k: int
) -> np.ndarray:
    """Batched sup_diff on raw value arrays (..., n_values, n)."""
    c = coarse[..., coarse_grid.Mbar:, :]
    f = fine[..., fine_grid.Mbar::k, :]
    return np.max(np.linalg.norm(c - f, axis=-1), axis=-1)


def _sup_norm_pow(values: np.ndarray, grid: GridSpec, p: float) -> np.ndarray:
    return np.max(np.linalg.norm(values[..., grid.Mbar:, :], axis=-1), axis=-1) ** p


def sup_diff(coarse: PathRecord, fine: PathRecord, k: int) -> float:
    """
    max_{n=0..M} |coarse(n) - fine(k n)|, the grid surrogate of the sup over [0, T].

    Raises:
        GridMismatch: fine does not refine coarse by exactly k
    """
    try:
        factor = coarse.grid.refinement_factor(fine.grid)
    except (GridMismatch, ValueError) as e:
        raise GridMismatch(f"Fine path does not refine the coarse path: {e}") from e
    if factor != k:
        raise GridMismatch(f"Fine grid refines the coarse grid by {factor}, not {k}")
    if coarse.dim != fine.dim:
        raise GridMismatch(f"Path dimensions differ: {coarse.dim} vs {fine.dim}")
    return float(_sup_diff_values(coarse.values, coarse.grid, fine.values, fine.grid, k))


def moment_estimate(paths: Iterable[PathRecord], p: float) -> float:
    """
    Mean over paths of max_{n=0..M} |Y(n)|^p. Exploded records are skipped.

    Raises:
        InsufficientData: no finite path
        InvalidRange: p < 2
    """
    _check_p(p)
    sups = [float(_sup_norm_pow(r.values, r.grid, p)) for r in paths if not r.exploded]
    if not sups:
        raise InsufficientData("moment_estimate needs at least one finite path")
    return float(np.mean(sups))


def fit_order(pairs: Sequence[Tuple[float, float]]) -> OrderFit:
    """
    Least-squares line through (ln h, ln err).

    Raises:
        InsufficientData: fewer than two pairs, or a single distinct h
        NonPositiveValue: some h or err <= 0
    """
    if len(pairs) < 2:
        raise InsufficientData(f"Need at least 2 (h, err) pairs, got {len(pairs)}")
    arr = np.asarray(pairs, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise NonPositiveValue(f"Log-log fit needs positive finite h and err, got {arr.tolist()}")

    log_h, log_err = np.log(arr[:, 0]), np.log(arr[:, 1])
    if np.ptp(log_h) == 0:
        raise InsufficientData("Need at least two distinct step sizes")

    slope, intercept = np.polyfit(log_h, log_err, 1)
    residual = log_err - (slope * log_h + intercept)
    ss_res = float(np.sum(residual ** 2))
    ss_tot = float(np.sum((log_err - log_err.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else min(max(1.0 - ss_res / ss_tot, 0.0), 1.0)
    return OrderFit(slope=float(slope), intercept=float(intercept), r_squared=r_squared)


# ============================================================================
# SWEEP PLUMBING
# ============================================================================

def _check_p(p: float) -> None:
    if not (p >= 2):
        raise InvalidRange(f"Moment order p must be >= 2, got {p}")


def _check_paths(n_paths: int) -> None:
    if n_paths < 2:
        raise InsufficientData(f"Monte Carlo estimates need n_paths >= 2, got {n_paths}")


def _chunks(n_paths: int, chunk_size: int) -> List[Tuple[int, int]]:
    if chunk_size < 1:
        raise InvalidRange(f"chunk_size must be >= 1, got {chunk_size}")
    return [(s, min(s + chunk_size, n_paths)) for s in range(0, n_paths, chunk_size)]


def _run_chunks(work: Callable[[int, int], None], n_paths: int, chunk_size: int,
                threads: int, progress: bool, label: str) -> None:
    """Call work(start, stop) for every chunk; work writes into caller-owned arrays."""
    chunks = _chunks(n_paths, chunk_size)
    bar = tqdm(total=len(chunks), desc=label, disable=not progress)
    try:
        if threads <= 1:
            for start, stop in chunks:
                work(start, stop)
                bar.update()
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(work, start, stop) for start, stop in chunks]
                for fut in futures:
                    fut.result()
                    bar.update()
    finally:
        bar.close()


def _restamp(e: NonFiniteState, start: int) -> NonFiniteState:
    path = None if e.path is None else e.path + start
    return NonFiniteState(step=e.step, path=path)


def _driver_name(system: System) -> str:
    if isinstance(system, DiffusionSystem):
        return "brownian"
    if isinstance(system, JumpSystem):
        return "jump"
    raise TypeError(f"Unsupported system type {type(system).__name__}")


def _brownian_batch(grid: GridSpec, dim_noise: int, base_seed: int, start: int, stop: int) -> np.ndarray:
    return np.stack([
        gen_brownian(grid, dim_noise, path_seed(base_seed, j)).increments
        for j in range(start, stop)
    ])


def _jump_batch(grid: GridSpec, system: JumpSystem, base_seed: int, start: int, stop: int) -> list:
    return [
        gen_jumps(grid, system.total_intensity, system.mark_sampler,
                  path_seed(base_seed, j), mark_dim=system.mark_dim)
        for j in range(start, stop)
    ]


def _stats(samples: np.ndarray) -> Tuple[float, float]:
    """Mean and standard error of the mean (NaN when undefined)."""
    if samples.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(samples))
    if samples.size < 2:
        return mean, math.nan
    return mean, float(np.std(samples, ddof=1) / math.sqrt(samples.size))


# ============================================================================
# STRONG ERROR
# ============================================================================

def strong_error(
    system: System,
    history: History,
    T: Any,
    tau: Any,
    h_list: Sequence[Any],
    h_ref: Any,
    p: float,
    n_paths: int,
    base_seed: int,
    *,
    exact: Optional[ExactPath] = None,
    threads: int = 1,
    chunk_size: int = 250,
    progress: bool = False,
) -> ErrorReport:
    """
    Coupled strong-error sweep.

    Path j draws its noise on the h_ref grid from seed (base_seed, j). The
    reference is the scheme at h_ref (or exact(grid, increments) when given,
    Brownian only); each coarse run sees the block-summed increments, or the
    very same jump events.

    Raises:
        InsufficientData: n_paths < 2 or empty h_list
        InvalidRange / NotCommensurate / NotDivisible / GridMismatch: bad grids
        NonFiniteState: a tamed path blew up
    """
    _check_p(p)
    _check_paths(n_paths)
    if not h_list:
        raise InsufficientData("h_list is empty")
    driver = _driver_name(system)
    if exact is not None and driver != "brownian":
        raise InvalidRange("An exact reference is only available for Brownian-driven problems")

    ref_grid = build_grid(T, tau, h_ref)
    grids = sorted({build_grid(T, tau, h) for h in h_list}, key=lambda g: g.h, reverse=True)
    factors = [g.refinement_factor(ref_grid) for g in grids]
    ref_seg = sample_segment(history, ref_grid)
    segs = [sample_segment(history, g) for g in grids]

    err = np.empty((len(grids), n_paths))
    mom = np.empty((len(grids), n_paths))

    def work(start: int, stop: int) -> None:
        try:
            if driver == "brownian":
                inc = _brownian_batch(ref_grid, system.dim_noise, base_seed, start, stop)
                if exact is not None:
                    ref = np.asarray(exact(ref_grid, inc), dtype=float)
                else:
                    ref, _ = simulate_bm_paths(system, ref_seg, inc)
                for r, (grid, seg, k) in enumerate(zip(grids, segs, factors)):
                    vals, _ = simulate_bm_paths(system, seg, inc if k == 1 else block_sum(inc, k))
                    err[r, start:stop] = _sup_diff_values(vals, grid, ref, ref_grid, k) ** p
                    mom[r, start:stop] = _sup_norm_pow(vals, grid, p)
            else:
                jrs = _jump_batch(ref_grid, system, base_seed, start, stop)
                ref = simulate_jump_paths(system, ref_seg, ref_grid, jrs)
                for r, (grid, seg, k) in enumerate(zip(grids, segs, factors)):
                    vals = simulate_jump_paths(system, seg, grid, jrs)
                    err[r, start:stop] = _sup_diff_values(vals, grid, ref, ref_grid, k) ** p
                    mom[r, start:stop] = _sup_norm_pow(vals, grid, p)
        except NonFiniteState as e:
            raise _restamp(e, start) from e
        logger.debug("strong_error: paths %d..%d done", start, stop - 1)

    _run_chunks(work, n_paths, chunk_size, threads, progress, "strong error")

    rows = []
    for r, grid in enumerate(grids):
        err_p, stderr = _stats(err[r])
        rows.append(ErrorRow(
            h=float(grid.h),
            n_paths=n_paths,
            p=float(p),
            err_p=err_p,
            err_root=err_p ** (1.0 / p),
            stderr=stderr,
            moment_p=float(np.mean(mom[r])),
        ))

    positive = [(row.h, row.err_p) for row in rows if row.err_p > 0]
    fit = fit_order(positive) if len({h for h, _ in positive}) >= 2 else None
    if fit is not None:
        logger.info("Fitted slope %.4f (r^2 %.4f) over %d step sizes", fit.slope, fit.r_squared, len(positive))
    return ErrorReport(
        rows=tuple(rows),
        fit=fit,
        reference="exact" if exact is not None else "self",
        driver=driver,
    )


# ============================================================================
# MOMENTS
# ============================================================================

def moment_sweep(
    system: System,
    history: History,
    T: Any,
    tau: Any,
    h_list: Sequence[Any],
    p: float,
    n_paths: int,
    base_seed: int,
    *,
    untamed: bool = False,
    explosion_threshold: float = 1e10,
    threads: int = 1,
    chunk_size: int = 250,
    progress: bool = False,
) -> MomentReport:
    """
    E[sup_n |Y_h|^p] for each h, noise drawn directly on each grid from
    seed (base_seed, j), so a tamed and an untamed sweep with the same seed
    see identical drivers.

    Untamed runs (Brownian only) report the exploded fraction and take the
    moment over the surviving paths; NaN when none survive.
    """
    _check_p(p)
    _check_paths(n_paths)
    if not h_list:
        raise InsufficientData("h_list is empty")
    driver = _driver_name(system)
    if untamed and driver != "brownian":
        raise InvalidRange("Untamed runs are only available for Brownian-driven problems")

    grids = sorted({build_grid(T, tau, h) for h in h_list}, key=lambda g: g.h, reverse=True)
    rows = []
    for grid in grids:
        seg = sample_segment(history, grid)
        sup = np.empty(n_paths)
        exploded = np.zeros(n_paths, dtype=bool)

        def work(start: int, stop: int, grid: GridSpec = grid, seg=seg) -> None:
            try:
                if driver == "brownian":
                    inc = _brownian_batch(grid, system.dim_noise, base_seed, start, stop)
                    vals, steps = simulate_bm_paths(
                        system, seg, inc, tamed=not untamed,
                        explosion_threshold=explosion_threshold if untamed else None,
                    )
                    exploded[start:stop] = steps >= 0
                else:
                    jrs = _jump_batch(grid, system, base_seed, start, stop)
                    vals = simulate_jump_paths(system, seg, grid, jrs)
            except NonFiniteState as e:
                raise _restamp(e, start) from e
            with np.errstate(invalid="ignore"):
                sup[start:stop] = _sup_norm_pow(vals, grid, p)

        _run_chunks(work, n_paths, chunk_size, threads, progress, f"moments h={grid.h}")

        frac = float(np.count_nonzero(exploded)) / n_paths
        if frac > 0:
            logger.warning("h=%s: %.1f%% of untamed paths exploded", grid.h, 100 * frac)
        moment, stderr = _stats(sup[~exploded])
        rows.append(MomentRow(
            h=float(grid.h), n_paths=n_paths, p=float(p),
            moment_p=moment, stderr=stderr, exploded_fraction=frac,
        ))

    return MomentReport(rows=tuple(rows), tamed=not untamed, driver=driver)

