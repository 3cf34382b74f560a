# experiment_app/runner.py
"""
Mode runners: one function per CLI subcommand, each writing its result files
under config.output_dir.

FILES:
- simulate -> paths/path_<index>.csv + simulate.json
- converge -> converge.csv + converge.json
- moments  -> moments.csv + moments.json
- check    -> check.json
- every mode also writes provenance.json (wall-clock, threads)

Result files depend only on the config file and its seed; anything that can
vary between identical runs goes to provenance.json.
"""

import json
import logging
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List

import pandas as pd

from experiment_app.config import ExperimentConfig, build_problem, echo, requested_paths
from project_code import __version__
from project_code.analysis import moment_sweep, strong_error
from project_code.driver import gen_brownian, gen_jumps, path_seed
from project_code.exceptions import ConfigError
from project_code.model import GridSpec, PathRecord, build_grid
from project_code.problems import Problem, audit_assumptions
from project_code.scheme_bm import simulate_bm, simulate_untamed
from project_code.scheme_jump import simulate_jump

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


# ============================================================================
# WRITERS
# ============================================================================

def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote %s", path)
    return path


def _write_csv(path: Path, frame: pd.DataFrame) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    logger.info("Wrote %s", path)
    return path


def _header(config: ExperimentConfig) -> Dict[str, Any]:
    return {
        "mode": config.mode,
        "problem": config.problem_id,
        "base_seed": config.base_seed,
        "version": __version__,
        "config": echo(config),
    }


def _grid_dict(grid: GridSpec) -> Dict[str, Any]:
    return {"T": str(grid.T), "tau": str(grid.tau), "h": str(grid.h), "M": grid.M, "Mbar": grid.Mbar}


def path_frame(record: PathRecord) -> pd.DataFrame:
    """Grid index, time and one column per state component."""
    grid = record.grid
    frame = pd.DataFrame({
        "n": range(-grid.Mbar, grid.M + 1),
        "t": grid.times(),
    })
    for i in range(record.dim):
        frame[f"x{i}"] = record.values[:, i]
    return frame


# ============================================================================
# MODES
# ============================================================================

def _simulate_one(problem: Problem, config: ExperimentConfig, grid: GridSpec, index: int) -> PathRecord:
    system = problem.system
    seg = problem.segment(grid)
    seed = path_seed(config.base_seed, index)
    if problem.driver == "jump":
        jr = gen_jumps(grid, system.total_intensity, system.mark_sampler, seed, mark_dim=system.mark_dim)
        return simulate_jump(system, seg, grid, jr)
    drv = gen_brownian(grid, system.dim_noise, seed)
    if config.untamed:
        return simulate_untamed(system, seg, drv, config.explosion_threshold)
    return simulate_bm(system, seg, drv)


def run_simulate(config: ExperimentConfig, progress: bool = False) -> List[Path]:
    problem = build_problem(config)
    if config.untamed and problem.driver == "jump":
        raise ConfigError("untamed runs need a Brownian-driven problem", field="untamed")
    grid = build_grid(config.T, config.tau, config.h)

    out = Path(config.output_dir)
    written, paths = [], []
    for index in requested_paths(config):
        record = _simulate_one(problem, config, grid, index)
        name = f"paths/path_{index:05d}.csv"
        written.append(_write_csv(out / name, path_frame(record)))
        paths.append({
            "index": index,
            "file": name,
            "exploded": record.exploded,
            "explode_step": record.explode_step,
        })

    payload = _header(config)
    payload.update({"grid": _grid_dict(grid), "tamed": not config.untamed, "paths": paths})
    written.append(_write_json(out / "simulate.json", payload))
    return written


def run_converge(config: ExperimentConfig, progress: bool = False) -> List[Path]:
    problem = build_problem(config)
    report = strong_error(
        problem.system,
        problem.history,
        config.T,
        config.tau,
        list(config.h_list),
        config.h_ref,
        config.p,
        config.n_paths,
        config.base_seed,
        exact=problem.exact_path if config.reference == "exact" else None,
        threads=config.threads,
        chunk_size=config.chunk_size,
        progress=progress,
    )
    out = Path(config.output_dir)
    payload = _header(config)
    payload.update(report.to_dict())
    payload["h_ref"] = str(config.h_ref)
    return [
        _write_csv(out / "converge.csv", report.to_frame()),
        _write_json(out / "converge.json", payload),
    ]


def run_moments(config: ExperimentConfig, progress: bool = False) -> List[Path]:
    problem = build_problem(config)
    report = moment_sweep(
        problem.system,
        problem.history,
        config.T,
        config.tau,
        list(config.h_list),
        config.p,
        config.n_paths,
        config.base_seed,
        untamed=config.untamed,
        explosion_threshold=config.explosion_threshold,
        threads=config.threads,
        chunk_size=config.chunk_size,
        progress=progress,
    )
    out = Path(config.output_dir)
    payload = _header(config)
    payload.update(report.to_dict())
    return [
        _write_csv(out / "moments.csv", report.to_frame()),
        _write_json(out / "moments.json", payload),
    ]


def run_check(config: ExperimentConfig, progress: bool = False) -> List[Path]:
    problem = build_problem(config)
    segment = None
    if config.T is not None and config.tau is not None and config.h is not None:
        segment = problem.segment(build_grid(config.T, config.tau, config.h))
    report = audit_assumptions(
        problem.system, config.n_samples, config.radius, config.base_seed, segment=segment
    )
    payload = _header(config)
    payload.update(report.to_dict())
    return [_write_json(Path(config.output_dir) / "check.json", payload)]


RUNNERS: Dict[str, Callable[..., List[Path]]] = {
    "simulate": run_simulate,
    "converge": run_converge,
    "moments": run_moments,
    "check": run_check,
}


def run(config: ExperimentConfig, progress: bool = False) -> List[Path]:
    """Dispatch on config.mode and record provenance next to the results."""
    started = datetime.now(timezone.utc)
    clock = time.perf_counter()
    written = RUNNERS[config.mode](config, progress=progress)

    provenance = _header(config)
    provenance.update({
        "threads": config.threads,
        "started_at": started.isoformat(),
        "wall_clock_seconds": time.perf_counter() - clock,
        "files": [str(p) for p in written],
    })
    written.append(_write_json(Path(config.output_dir) / "provenance.json", provenance))
    return written
