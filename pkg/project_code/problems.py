# project_code/problems.py
"""
Catalog of test systems and a numerical auditor for their assumption constants.

PURPOSE: Ship scalar systems that exercise the schemes (closed-form GBM,
super-linear neutral drift, jump-driven variants, a negative control) and
check declared constants against sampled points before an experiment trusts
them.

FUNCTIONS:
- make_gbm()                -> GbmSetup (system, segment builder, exact terminal value, exact path)
- make_cubic_neutral()      -> DiffusionSystem with cubic drift and linear neutral term
- make_broken_cubic()       -> negative control violating the growth condition
- make_zero()               -> all-zero diffusion system
- make_jump_linear()        -> linear jump-driven system with uniform marks
- make_jump_cubic_neutral() -> cubic neutral drift with multiplicative jumps
- make_jump_zero()          -> all-zero jump system
- get_problem()             -> Problem from the catalog by id
- audit_assumptions()       -> AuditReport of maximal relative violations

The constants declared here are derived by hand in problems.md; the auditor
confirms them numerically on a ball of radius R.
"""

from __future__ import annotations

import inspect
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from project_code.driver import BrownianPathIncrements
from project_code.exceptions import InvalidRange, UnknownProblem
from project_code.model import (
    DiffusionSystem,
    GridSpec,
    InitialSegment,
    JumpSystem,
    sample_segment,
)

logger = logging.getLogger(__name__)

System = Union[DiffusionSystem, JumpSystem]
ExactPath = Callable[[GridSpec, np.ndarray], np.ndarray]

# Declared jump constants carry this factor over lambda(U) E|u|^p so the
# Monte Carlo mark integral of the auditor stays below them.
_JUMP_HEADROOM = 1.25


# ============================================================================
# MARKS
# ============================================================================

@dataclass(frozen=True)
class UniformMarks:
    """Marks uniform on [low, high], drawn as an (size, 1) array."""

    low: float
    high: float

    def __post_init__(self):
        if not (self.low <= self.high):
            raise InvalidRange(f"Need low <= high, got [{self.low}, {self.high}]")

    def __call__(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(size, 1))

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    def abs_moment(self, p: float) -> float:
        """E|u|^p."""
        if self.high == self.low:
            return abs(self.low) ** p

        def antiderivative(u: float) -> float:
            return math.copysign(abs(u) ** (p + 1), u) / (p + 1)

        return (antiderivative(self.high) - antiderivative(self.low)) / (self.high - self.low)


# ============================================================================
# BROWNIAN-DRIVEN SYSTEMS
# ============================================================================

class GbmSetup(NamedTuple):
    system: DiffusionSystem
    segment: Callable[[GridSpec], InitialSegment]
    exact_solution: Callable[[BrownianPathIncrements], np.ndarray]
    exact_path: ExactPath


def make_gbm(mu: float = 0.05, sigma_hat: float = 0.2, x0: float = 1.0, alpha: float = 0.5) -> GbmSetup:
    """
    dX = mu X dt + sigma_hat X dB with D = 0 and constant history x0.

    X(t) = x0 exp((mu - sigma_hat^2 / 2) t + sigma_hat B(t)).
    """
    system = DiffusionSystem(
        dim_state=1,
        dim_noise=1,
        D=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        b=lambda x, y: mu * x,
        sigma=lambda x, y: (sigma_hat * x)[..., None],
        kappa=0.5,  # D = 0, any kappa in (0, 1) holds
        growth_K=max(abs(mu), sigma_hat ** 2, 1.0),
        lip_L=max(abs(mu) + sigma_hat ** 2, 1.0),
        poly_l=1.0,
        alpha=alpha,
        name="gbm",
    )
    drift = mu - 0.5 * sigma_hat ** 2

    def segment(grid: GridSpec) -> InitialSegment:
        return sample_segment(lambda t: x0, grid)

    def exact_solution(drv: BrownianPathIncrements) -> np.ndarray:
        b_T = drv.increments.sum(axis=0)[:1]
        return x0 * np.exp(drift * float(drv.grid.T) + sigma_hat * b_T)

    def exact_path(grid: GridSpec, increments: np.ndarray) -> np.ndarray:
        inc = np.asarray(increments, dtype=float)[..., 0]
        lead = inc.shape[:-1]
        brownian = np.concatenate([np.zeros(lead + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
        t = grid.times()[grid.Mbar:]
        future = x0 * np.exp(drift * t + sigma_hat * brownian)
        past = np.full(lead + (grid.Mbar,), float(x0))
        return np.concatenate([past, future], axis=-1)[..., None]

    return GbmSetup(system, segment, exact_solution, exact_path)


def make_cubic_neutral(kappa: float = 0.25, alpha: float = 0.5) -> DiffusionSystem:
    """D(y) = kappa y, b(x, y) = -(x - kappa y)^3 + y, sigma(x, y) = 0.2 x + 0.1 y."""
    return DiffusionSystem(
        dim_state=1,
        dim_noise=1,
        D=lambda y: kappa * np.asarray(y, dtype=float),
        b=lambda x, y: -((x - kappa * y) ** 3) + y,
        sigma=lambda x, y: (0.2 * x + 0.1 * y)[..., None],
        kappa=kappa,
        growth_K=1.0,
        lip_L=3.0,
        poly_l=2.0,
        alpha=alpha,
        name="cubic_neutral",
    )


def make_broken_cubic(alpha: float = 0.5) -> DiffusionSystem:
    """b(x, y) = x^3, D = 0: declared constants that cannot hold."""
    return DiffusionSystem(
        dim_state=1,
        dim_noise=1,
        D=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        b=lambda x, y: np.asarray(x, dtype=float) ** 3,
        sigma=lambda x, y: np.zeros_like(np.asarray(x, dtype=float))[..., None],
        kappa=0.5,
        growth_K=1.0,
        lip_L=1.0,
        poly_l=2.0,
        alpha=alpha,
        name="broken_cubic",
    )


def make_zero(dim: int = 1, alpha: float = 0.5) -> DiffusionSystem:
    def zero(x, y=None):
        return np.zeros_like(np.asarray(x, dtype=float))

    return DiffusionSystem(
        dim_state=dim,
        dim_noise=1,
        D=zero,
        b=zero,
        sigma=lambda x, y: np.zeros_like(np.asarray(x, dtype=float))[..., None],
        kappa=0.5,
        growth_K=1.0,
        lip_L=1.0,
        poly_l=1.0,
        alpha=alpha,
        name="zero",
    )


# ============================================================================
# JUMP-DRIVEN SYSTEMS
# ============================================================================

def _marks_for(mean_mark: float) -> UniformMarks:
    if not (mean_mark >= 0):
        raise InvalidRange(f"mean_mark must be >= 0, got {mean_mark}")
    return UniformMarks(0.0, 2.0 * mean_mark)


def make_jump_linear(
    lambda_tot: float = 2.0,
    mean_mark: float = 0.5,
    alpha: float = 0.2,
    p: float = 2.0,
) -> JumpSystem:
    """G = 0, f(x, y) = -x, g(x, y, u) = x u, marks uniform on [0, 2 mean_mark]."""
    if not (lambda_tot >= 0):
        raise InvalidRange(f"lambda_tot must be >= 0, got {lambda_tot}")
    marks = _marks_for(mean_mark)
    jump_moment = _JUMP_HEADROOM * lambda_tot * marks.abs_moment(p)
    return JumpSystem(
        dim_state=1,
        mark_dim=1,
        G=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
        f=lambda x, y: -np.asarray(x, dtype=float),
        g=lambda x, y, u: x * u,
        compensator=lambda x, y: np.asarray(x, dtype=float) * (lambda_tot * marks.mean),
        total_intensity=float(lambda_tot),
        mark_sampler=marks,
        kappa=0.5,
        growth_K1=max(1.0, jump_moment),
        lip_L=max(1.0, jump_moment),
        poly_l=1.0,
        alpha=alpha,
        moment_order=p,
        name="jump_linear",
    )


def make_jump_cubic_neutral(
    kappa: float = 0.25,
    lambda_tot: float = 1.0,
    mean_mark: float = 0.5,
    alpha: float = 0.25,
    p: float = 2.0,
) -> JumpSystem:
    """G(y) = kappa y, f(x, y) = -(x - kappa y)^3 + y, g(x, y, u) = 0.1 x u."""
    if not (lambda_tot >= 0):
        raise InvalidRange(f"lambda_tot must be >= 0, got {lambda_tot}")
    marks = _marks_for(mean_mark)
    jump_moment = _JUMP_HEADROOM * lambda_tot * 0.1 ** p * marks.abs_moment(p)
    return JumpSystem(
        dim_state=1,
        mark_dim=1,
        G=lambda y: kappa * np.asarray(y, dtype=float),
        f=lambda x, y: -((x - kappa * y) ** 3) + y,
        g=lambda x, y, u: 0.1 * x * u,
        compensator=lambda x, y: 0.1 * np.asarray(x, dtype=float) * (lambda_tot * marks.mean),
        total_intensity=float(lambda_tot),
        mark_sampler=marks,
        kappa=kappa,
        growth_K1=max(1.0, jump_moment),
        lip_L=max(3.0, jump_moment),
        poly_l=2.0,
        alpha=alpha,
        moment_order=p,
        name="jump_cubic_neutral",
    )


def make_jump_zero(alpha: float = 0.25) -> JumpSystem:
    def zero(x, y=None):
        return np.zeros_like(np.asarray(x, dtype=float))

    return JumpSystem(
        dim_state=1,
        mark_dim=1,
        G=zero,
        f=zero,
        g=lambda x, y, u: np.zeros_like(np.asarray(x, dtype=float)),
        compensator=zero,
        total_intensity=0.0,
        mark_sampler=UniformMarks(0.0, 1.0),
        kappa=0.5,
        growth_K1=1.0,
        lip_L=1.0,
        poly_l=1.0,
        alpha=alpha,
        name="jump_zero",
    )


# ============================================================================
# CATALOG
# ============================================================================

@dataclass(frozen=True)
class Problem:
    """A system with its history xi and, when known, the exact path."""

    problem_id: str
    system: System
    history: Callable[[float], Any]
    holder_constant: float = 0.0
    exact_path: Optional[ExactPath] = None

    @property
    def driver(self) -> str:
        return "jump" if isinstance(self.system, JumpSystem) else "brownian"

    def segment(self, grid: GridSpec) -> InitialSegment:
        return sample_segment(self.history, grid, self.holder_constant)


def _constant(value: float) -> Callable[[float], float]:
    return lambda t: value


def _gbm(mu: float = 0.05, sigma_hat: float = 0.2, x0: float = 1.0, alpha: float = 0.5) -> Problem:
    setup = make_gbm(mu, sigma_hat, x0, alpha)
    return Problem("gbm", setup.system, _constant(x0), exact_path=setup.exact_path)


def _cubic_neutral(kappa: float = 0.25, alpha: float = 0.5, xi: float = 1.0) -> Problem:
    return Problem("cubic_neutral", make_cubic_neutral(kappa, alpha), _constant(xi))


def _broken_cubic(alpha: float = 0.5, xi: float = 1.0) -> Problem:
    return Problem("broken_cubic", make_broken_cubic(alpha), _constant(xi))


def _zero(alpha: float = 0.5, xi: float = 1.0) -> Problem:
    return Problem("zero", make_zero(alpha=alpha), _constant(xi))


def _jump_linear(lambda_tot: float = 2.0, mean_mark: float = 0.5, alpha: float = 0.2,
                 p: float = 2.0, xi: float = 1.0) -> Problem:
    return Problem("jump_linear", make_jump_linear(lambda_tot, mean_mark, alpha, p), _constant(xi))


def _jump_cubic_neutral(kappa: float = 0.25, lambda_tot: float = 1.0, mean_mark: float = 0.5,
                        alpha: float = 0.25, p: float = 2.0, xi: float = 1.0) -> Problem:
    system = make_jump_cubic_neutral(kappa, lambda_tot, mean_mark, alpha, p)
    return Problem("jump_cubic_neutral", system, _constant(xi))


def _jump_zero(alpha: float = 0.25, xi: float = 1.0) -> Problem:
    return Problem("jump_zero", make_jump_zero(alpha), _constant(xi))


CATALOG: Dict[str, Callable[..., Problem]] = {
    "gbm": _gbm,
    "cubic_neutral": _cubic_neutral,
    "broken_cubic": _broken_cubic,
    "zero": _zero,
    "jump_linear": _jump_linear,
    "jump_cubic_neutral": _jump_cubic_neutral,
    "jump_zero": _jump_zero,
}


def get_problem(problem_id: str, **params: Any) -> Problem:
    """
    Build a catalog problem, overriding its default parameters.

    Raises:
        UnknownProblem: id not in the catalog
        InvalidRange: parameter the builder does not take, or out of range
    """
    try:
        builder = CATALOG[problem_id]
    except KeyError:
        known = ", ".join(sorted(CATALOG))
        raise UnknownProblem(f"Unknown problem '{problem_id}' (known: {known})") from None
    try:
        inspect.signature(builder).bind(**params)
    except TypeError as e:
        raise InvalidRange(f"Bad parameters for problem '{problem_id}': {e}") from e
    return builder(**params)


# ============================================================================
# ASSUMPTION AUDIT
# ============================================================================

@dataclass(frozen=True)
class AuditEntry:
    """
    max_violation is the largest relative excess (lhs - rhs) / |rhs| seen,
    0 when the inequality held everywhere. For the local A3/B3 entries the
    constant is the empirical value found on the ball, not a declared one.
    """

    assumption: str
    max_violation: float
    constant: float
    witness: Optional[List[float]] = None


@dataclass(frozen=True)
class AuditReport:
    system: str
    radius: float
    n_samples: int
    seed: int
    entries: Tuple[AuditEntry, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(e.max_violation == 0 for e in self.entries)

    def entry(self, assumption: str) -> AuditEntry:
        for e in self.entries:
            if e.assumption == assumption:
                return e
        raise KeyError(assumption)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "system": self.system,
            "radius": self.radius,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "passed": self.passed,
            "entries": [asdict(e) for e in self.entries],
        }


def _ball(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples in the closed dim-ball of the given radius."""
    direction = rng.standard_normal((count, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / dim)
    return direction * r[:, None]


def _pairs(rng: np.random.Generator, count: int, dim: int, radius: float) -> Tuple[np.ndarray, ...]:
    """
    (x, y, xb, yb) with every component in the ball. The second half of the
    pairs are close neighbours, where Lipschitz-type ratios peak.
    """
    x, y = _ball(rng, count, dim, radius), _ball(rng, count, dim, radius)
    xb, yb = _ball(rng, count, dim, radius), _ball(rng, count, dim, radius)
    half = count // 2
    if half:
        local = 1e-3 * radius
        xb[half:] = x[half:] + _ball(rng, count - half, dim, local)
        yb[half:] = y[half:] + _ball(rng, count - half, dim, local)
        for arr in (xb, yb):
            norm = np.linalg.norm(arr, axis=1, keepdims=True)
            arr *= np.minimum(1.0, radius / np.maximum(norm, np.finfo(float).tiny))
    return x, y, xb, yb


def _norm(a: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a, axis=-1)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def _entry(name: str, lhs: np.ndarray, rhs: np.ndarray, constant: float,
           points: np.ndarray, tolerance: float) -> AuditEntry:
    """Worst relative excess of lhs over rhs; excesses below tolerance count as zero."""
    scale = np.maximum(np.abs(rhs), np.finfo(float).tiny)
    excess = (lhs - rhs) / scale
    worst = int(np.argmax(excess))
    value = float(excess[worst])
    if not (value > tolerance):
        return AuditEntry(name, 0.0, float(constant))
    return AuditEntry(name, value, float(constant), points[worst].tolist())


def _empirical(name: str, ratio: np.ndarray) -> AuditEntry:
    return AuditEntry(name, 0.0, float(max(np.max(ratio), 0.0)))


def _poly_weight(l: float, *points: np.ndarray) -> np.ndarray:
    return 1.0 + sum(_norm(pt) ** l for pt in points)


def _audit_diffusion(sys: DiffusionSystem, rng: np.random.Generator, n: int,
                     radius: float, tol: float) -> List[AuditEntry]:
    dim = sys.dim_state
    x, y, xb, yb = _pairs(rng, n, dim, radius)
    single = np.concatenate([x, y], axis=1)
    pair = np.concatenate([x, y, xb, yb], axis=1)

    b, bb = sys.b(x, y), sys.b(xb, yb)
    sig, sigb = sys.sigma(x, y), sys.sigma(xb, yb)
    dx2, dy2 = _norm(x - xb) ** 2, _norm(y - yb) ** 2
    d_sum = _norm(x - xb) + _norm(y - yb)

    growth = np.maximum(_dot(x - sys.D(y), b), np.sum(sig ** 2, axis=(-2, -1)))
    neutral = _norm(sys.D(x) - sys.D(xb))
    cross = _dot(x - sys.D(y) - xb + sys.D(yb), b - bb)
    dsig2 = np.sum((sig - sigb) ** 2, axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        local = np.nan_to_num(np.maximum(cross, dsig2) / (dx2 + dy2))

    return [
        _entry("A1", growth, sys.growth_K * (1 + _norm(x) ** 2 + _norm(y) ** 2),
               sys.growth_K, single, tol),
        _entry("A2", neutral, sys.kappa * _norm(x - xb), sys.kappa, pair, tol),
        _empirical("A3.local_monotone", local),
        _empirical("A3.drift_bound", _norm(b)),
        _entry("A4.monotone", cross + dsig2, sys.lip_L * (dx2 + dy2), sys.lip_L, pair, tol),
        _entry("A4.poly_lipschitz", _norm(b - bb),
               sys.lip_L * _poly_weight(sys.poly_l, x, y, xb, yb) * d_sum,
               sys.lip_L, pair, tol),
    ]


def _mark_integral(sys: JumpSystem, marks: np.ndarray, p: float,
                   x: np.ndarray, y: np.ndarray,
                   xb: Optional[np.ndarray] = None, yb: Optional[np.ndarray] = None,
                   batch: int = 64) -> np.ndarray:
    """lambda(U) * mean_k |g(x, y, u_k) - g(xb, yb, u_k)|^p per sample row (g alone if xb is None)."""
    out = np.zeros(x.shape[0])
    if sys.total_intensity == 0:
        return out
    k = marks.shape[0]
    for s in range(0, x.shape[0], batch):
        e = min(s + batch, x.shape[0])
        shape = (e - s, k, sys.dim_state)
        mk = np.broadcast_to(marks[None], (e - s,) + marks.shape)
        val = sys.g(np.broadcast_to(x[s:e, None], shape), np.broadcast_to(y[s:e, None], shape), mk)
        if xb is not None:
            val = val - sys.g(np.broadcast_to(xb[s:e, None], shape), np.broadcast_to(yb[s:e, None], shape), mk)
        out[s:e] = sys.total_intensity * np.mean(_norm(val) ** p, axis=1)
    return out


def _audit_jump(sys: JumpSystem, rng: np.random.Generator, n: int, radius: float,
                tol: float, n_marks: int) -> List[AuditEntry]:
    dim, p = sys.dim_state, sys.moment_order
    x, y, xb, yb = _pairs(rng, n, dim, radius)
    single = np.concatenate([x, y], axis=1)
    pair = np.concatenate([x, y, xb, yb], axis=1)
    marks = np.asarray(sys.mark_sampler(rng, n_marks), dtype=float).reshape(n_marks, -1)

    f, fb = sys.f(x, y), sys.f(xb, yb)
    dx, dy = _norm(x - xb), _norm(y - yb)

    drift_growth = 2 * _dot(x - sys.G(y), f)
    jump_growth = _mark_integral(sys, marks, p, x, y)
    cross = 2 * _dot(x - sys.G(y) - xb + sys.G(yb), f - fb)
    jump_diff = _mark_integral(sys, marks, p, x, y, xb, yb)
    with np.errstate(divide="ignore", invalid="ignore"):
        local = np.maximum(
            np.nan_to_num(cross / (dx ** 2 + dy ** 2)),
            np.nan_to_num(jump_diff / (dx ** p + dy ** p)),
        )

    return [
        _entry("B1.drift", drift_growth, sys.growth_K1 * (1 + _norm(x) ** 2 + _norm(y) ** 2),
               sys.growth_K1, single, tol),
        _entry("B1.jump_moment", jump_growth, sys.growth_K1 * (1 + _norm(x) ** p + _norm(y) ** p),
               sys.growth_K1, single, tol),
        _entry("B2", _norm(sys.G(x) - sys.G(xb)), sys.kappa * dx, sys.kappa, pair, tol),
        _empirical("B3.local_monotone", local),
        _empirical("B3.drift_bound", _norm(f)),
        _entry("B4.monotone", cross, sys.lip_L * (dx ** 2 + dy ** 2), sys.lip_L, pair, tol),
        _entry("B4.jump_lipschitz", jump_diff, sys.lip_L * (dx ** p + dy ** p), sys.lip_L, pair, tol),
        _entry("B4.poly_lipschitz", _norm(f - fb),
               sys.lip_L * _poly_weight(sys.poly_l, x, y, xb, yb) * (dx + dy),
               sys.lip_L, pair, tol),
    ]


def _audit_segment(name: str, segment: InitialSegment, tol: float) -> AuditEntry:
    """Deterministic history: adjacent-point slopes against the declared constant."""
    ratio = np.array([segment.lipschitz_ratio()])
    constant = segment.holder_constant
    times = segment.grid.times()[: segment.grid.Mbar + 1]
    return _entry(name, ratio, np.array([constant]), constant, times[None, :], tol)


def audit_assumptions(
    sys: System,
    n_samples: int,
    radius: float,
    seed: int,
    *,
    tolerance: float = 1e-9,
    n_marks: int = 10_000,
    segment: Optional[InitialSegment] = None,
) -> AuditReport:
    """
    Sample points uniformly in the ball of radius R and report, per
    inequality, the worst relative violation of the declared constants.
    Relative excesses up to tolerance are floating rounding and count as 0.
    """
    if n_samples < 1:
        raise InvalidRange(f"n_samples must be >= 1, got {n_samples}")
    if not (radius > 0):
        raise InvalidRange(f"radius must be positive, got {radius}")
    if n_marks < 1:
        raise InvalidRange(f"n_marks must be >= 1, got {n_marks}")

    rng = np.random.default_rng(seed)
    with np.errstate(over="ignore"):
        if isinstance(sys, DiffusionSystem):
            entries = _audit_diffusion(sys, rng, n_samples, radius, tolerance)
            history_name = "A5"
        elif isinstance(sys, JumpSystem):
            entries = _audit_jump(sys, rng, n_samples, radius, tolerance, n_marks)
            history_name = "B5"
        else:
            raise TypeError(f"Cannot audit {type(sys).__name__}")
    if segment is not None:
        entries.append(_audit_segment(history_name, segment, tolerance))

    report = AuditReport(
        system=sys.name or type(sys).__name__,
        radius=float(radius),
        n_samples=int(n_samples),
        seed=int(seed),
        entries=tuple(entries),
    )
    failed = [e.assumption for e in report.entries if e.max_violation > 0]
    if failed:
        logger.warning("Audit of %s: violations in %s", report.system, ", ".join(failed))
    else:
        logger.info("Audit of %s passed (R=%g, %d samples)", report.system, radius, n_samples)
    return report
