# experiment_app/config.py
"""
Experiment configuration

PURPOSE: Read one YAML experiment file into a validated ExperimentConfig,
with line/field diagnostics on every rejection.

FUNCTIONS:
- load_config()       -> ExperimentConfig from a YAML file
- parse_config()      -> ExperimentConfig from YAML text
- build_problem()     -> catalog Problem with the config's alpha / xi overrides

Environment defaults (read after load_dotenv() in main):
  NSDDE_OUTPUT_DIR  output_dir when the file gives none
  NSDDE_THREADS     worker threads when neither flag nor file gives one
"""

import dataclasses
import inspect
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Tuple

import yaml

from project_code.exceptions import ConfigError, NsddeError, UnknownProblem
from project_code.model import JumpSystem, to_fraction
from project_code.problems import CATALOG, Problem, get_problem

MODES = ("simulate", "converge", "moments", "check")
DRIVERS = ("brownian", "jump")
REFERENCES = ("self", "exact")

REQUIRED = {
    "simulate": ("T", "tau", "h", "n_paths", "base_seed"),
    "converge": ("T", "tau", "h_list", "h_ref", "n_paths", "base_seed"),
    "moments": ("T", "tau", "h_list", "n_paths", "base_seed"),
    "check": ("base_seed",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    problem_id: str
    problem_params: Dict[str, Any] = field(default_factory=dict)
    driver: Optional[str] = None
    T: Optional[Fraction] = None
    tau: Optional[Fraction] = None
    h: Optional[Fraction] = None
    h_list: Tuple[Fraction, ...] = ()
    h_ref: Optional[Fraction] = None
    alpha: Optional[float] = None
    p: float = 2.0
    n_paths: int = 1
    base_seed: int = 0
    output_dir: str = "results"
    explosion_threshold: float = 1e10
    untamed: bool = False
    xi_value: Optional[float] = None
    xi_slope: float = 0.0
    path_indices: Optional[Tuple[int, ...]] = None
    n_samples: int = 10_000
    radius: float = 10.0
    reference: str = "self"
    threads: int = 1
    chunk_size: int = 250
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)
    lines: Dict[str, int] = field(default_factory=dict, compare=False)

    def with_threads(self, threads: Optional[int]) -> "ExperimentConfig":
        if threads is None:
            return self
        if threads < 1:
            raise ConfigError(f"must be >= 1, got {threads}", field="threads")
        return dataclasses.replace(self, threads=threads)


# ============================================================================
# FIELD READERS
# ============================================================================

def _key_lines(text: str) -> Dict[str, int]:
    """1-based line of every top-level key."""
    node = yaml.compose(text, Loader=yaml.SafeLoader)
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k, yaml.ScalarNode)}


class _Reader:
    """Pulls typed fields out of the raw mapping, raising ConfigError with the key's line."""

    def __init__(self, raw: Dict[str, Any], lines: Dict[str, int]):
        self.raw = raw
        self.lines = lines

    def error(self, name: str, message: str) -> ConfigError:
        return ConfigError(message, field=name, line=self.lines.get(name))

    def has(self, name: str) -> bool:
        return self.raw.get(name) is not None

    def get(self, name: str, convert: Callable[[Any], Any], default: Any = None) -> Any:
        if not self.has(name):
            return default
        try:
            return convert(self.raw[name])
        except ConfigError:
            raise
        except (NsddeError, TypeError, ValueError) as e:
            raise self.error(name, str(e)) from e


def _time(value: Any) -> Fraction:
    t = to_fraction(value)
    if t <= 0:
        raise ValueError(f"must be positive, got {t}")
    return t


def _positive_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ValueError(f"expected a positive integer, got {value!r}")
    return value


def _int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"expected an integer, got {value!r}")
    return value


def _number(value: Any) -> float:
    # PyYAML reads 1e10 (no dot) as a string
    if isinstance(value, str):
        value = float(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _positive_number(value: Any) -> float:
    out = _number(value)
    if not (out > 0):
        raise ValueError(f"must be positive, got {value!r}")
    return out


def _bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise ValueError(f"expected true or false, got {value!r}")
    return value


def _choice(options: Tuple[str, ...]) -> Callable[[Any], str]:
    def convert(value: Any) -> str:
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {value!r}")
        return value
    return convert


def _time_list(value: Any) -> Tuple[Fraction, ...]:
    if not isinstance(value, list) or not value:
        raise ValueError("expected a non-empty list of step sizes")
    return tuple(_time(v) for v in value)


def _index_list(value: Any) -> Tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ValueError("expected a non-empty list of path indices")
    out = tuple(_int(v) for v in value)
    if any(i < 0 for i in out):
        raise ValueError("path indices must be >= 0")
    return out


def _problem(value: Any) -> Tuple[str, Dict[str, Any]]:
    if isinstance(value, str):
        return value, {}
    if isinstance(value, dict) and isinstance(value.get("id"), str):
        params = value.get("params") or {}
        if not isinstance(params, dict):
            raise ValueError("params must be a mapping")
        return value["id"], dict(params)
    raise ValueError("expected a catalog id or a mapping {id, params}")


def _xi(value: Any) -> Tuple[float, float]:
    if isinstance(value, dict):
        unknown = set(value) - {"value", "slope"}
        if unknown or "value" not in value:
            raise ValueError("expected {value, slope}")
        return _number(value["value"]), _number(value.get("slope", 0.0))
    return _number(value), 0.0


def _env_int(name: str) -> Optional[int]:
    value = os.getenv(name)
    if not value:
        return None
    try:
        return _positive_int(int(value))
    except ValueError as e:
        raise ConfigError(f"environment variable {name}: {e}") from e


# ============================================================================
# LOADING
# ============================================================================

KNOWN_KEYS = {
    "mode", "driver", "problem", "T", "tau", "h", "h_list", "h_ref", "alpha", "p",
    "n_paths", "base_seed", "output_dir", "explosion_threshold", "untamed", "xi",
    "path_indices", "n_samples", "radius", "reference", "threads", "chunk_size",
}


def parse_config(text: str) -> ExperimentConfig:
    """
    Raises:
        ConfigError: YAML syntax error (with line), unknown or missing key,
            or a field of the wrong type (with field and line)
    """
    try:
        raw = yaml.safe_load(text)
        lines = _key_lines(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(e, "problem", None) or str(e)
        raise ConfigError(f"invalid YAML: {problem}", line=line) from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a YAML mapping")

    r = _Reader(raw, lines)
    for key in raw:
        if key not in KNOWN_KEYS:
            raise r.error(str(key), "unknown key")

    if not r.has("mode"):
        raise ConfigError("missing required key", field="mode")
    mode = r.get("mode", _choice(MODES))
    for key in REQUIRED[mode]:
        if not r.has(key):
            raise ConfigError(f"missing required key for mode '{mode}'", field=key)
    if not r.has("problem"):
        raise ConfigError("missing required key", field="problem")
    problem_id, problem_params = r.get("problem", _problem)
    xi_value, xi_slope = r.get("xi", _xi, (None, 0.0))

    threads = r.get("threads", _positive_int) or _env_int("NSDDE_THREADS") or 1
    output_dir = r.get("output_dir", str) or os.getenv("NSDDE_OUTPUT_DIR") or "results"

    config = ExperimentConfig(
        mode=mode,
        problem_id=problem_id,
        problem_params=problem_params,
        driver=r.get("driver", _choice(DRIVERS)),
        T=r.get("T", _time),
        tau=r.get("tau", _time),
        h=r.get("h", _time),
        h_list=r.get("h_list", _time_list, ()),
        h_ref=r.get("h_ref", _time),
        alpha=r.get("alpha", _positive_number),
        p=r.get("p", _number, 2.0),
        n_paths=r.get("n_paths", _positive_int, 1),
        base_seed=r.get("base_seed", _int, 0),
        output_dir=output_dir,
        explosion_threshold=r.get("explosion_threshold", _positive_number, 1e10),
        untamed=r.get("untamed", _bool, False),
        xi_value=xi_value,
        xi_slope=xi_slope,
        path_indices=r.get("path_indices", _index_list),
        n_samples=r.get("n_samples", _positive_int, 10_000),
        radius=r.get("radius", _positive_number, 10.0),
        reference=r.get("reference", _choice(REFERENCES), "self"),
        threads=threads,
        chunk_size=r.get("chunk_size", _positive_int, 250),
        raw=raw,
        lines=lines,
    )
    if config.p < 2 and mode in ("converge", "moments"):
        raise r.error("p", f"must be >= 2, got {config.p}")
    if config.path_indices and any(i >= config.n_paths for i in config.path_indices):
        raise r.error("path_indices", f"indices must be below n_paths={config.n_paths}")
    return config


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from e
    return parse_config(text)


def build_problem(config: ExperimentConfig) -> Problem:
    """
    Catalog problem with the config's alpha and history overrides.

    Jump problems are built at the config's moment order p, so alpha * p < 1
    is checked here. UnknownProblem propagates unchanged; bad catalog
    parameters become ConfigError on the 'problem' field.
    """
    params = dict(config.problem_params)
    builder = CATALOG.get(config.problem_id)
    if builder is not None and "p" in inspect.signature(builder).parameters:
        if "p" in params and params["p"] != config.p:
            raise ConfigError(
                f"params.p={params['p']} disagrees with p={config.p}",
                field="p", line=config.lines.get("p"),
            )
        params["p"] = config.p
        if config.alpha is not None:
            if not config.alpha * config.p < 1:
                raise ConfigError(
                    f"jump-driven problems need alpha * p < 1, got alpha={config.alpha}, p={config.p}",
                    field="alpha", line=config.lines.get("alpha"),
                )
            params["alpha"] = config.alpha

    try:
        problem = get_problem(config.problem_id, **params)
    except UnknownProblem:
        raise
    except (NsddeError, TypeError, ValueError) as e:
        raise ConfigError(
            f"problem '{config.problem_id}': {e}", field="problem", line=config.lines.get("problem")
        ) from e
    overrides: Dict[str, Any] = {}
    if config.alpha is not None:
        overrides["alpha"] = config.alpha
    if isinstance(problem.system, JumpSystem):
        overrides["moment_order"] = config.p
    if overrides:
        try:
            system = dataclasses.replace(problem.system, **overrides)
        except NsddeError as e:
            raise ConfigError(str(e), field="alpha", line=config.lines.get("alpha")) from e
        problem = dataclasses.replace(problem, system=system)

    if config.driver is not None and config.driver != problem.driver:
        raise ConfigError(
            f"problem '{config.problem_id}' is {problem.driver}-driven, config says {config.driver}",
            field="driver",
        )
    if config.xi_value is not None:
        value, slope = config.xi_value, config.xi_slope
        problem = dataclasses.replace(
            problem,
            history=lambda t: value + slope * t,
            holder_constant=abs(slope),
            exact_path=None,
        )
    if config.reference == "exact" and problem.exact_path is None:
        raise ConfigError(f"problem '{config.problem_id}' has no exact solution", field="reference")
    return problem


def echo(config: ExperimentConfig) -> Dict[str, Any]:
    """The config as written, JSON-safe."""
    return _json_safe(config.raw)


def _json_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_json_safe(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def requested_paths(config: ExperimentConfig) -> List[int]:
    if config.path_indices is not None:
        return list(config.path_indices)
    return list(range(config.n_paths))
