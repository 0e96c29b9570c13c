"""Minimisation of the Parisi functional over RSB parameters.

Candidates are produced from unconstrained coordinates, so every evaluated
point is a feasible parameter set and the running best is always a valid
upper bound on the free energy (for positive semi-definite models).

Coordinates for depth r and n species: r logits for zeta (sorted after the
logistic map) followed by r raw increments per species; the q increments are
u_k^2 / sum_j u_j^2, which can represent exact zeros.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from ._rng import stream
from .model import ModelSpec, ValidationError
from .parisi import QuadratureConfig, RsbParams, make_params, parisi_functional

log = logging.getLogger(__name__)

_ZETA_EPS = 1e-15


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 4
    max_evals: int = 2000
    xatol: float = 1e-7
    fatol: float = 1e-11
    r_max: int = 3
    seed: int = 0
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if self.restarts < 1:
            raise ValidationError("optimizer: restarts must be >= 1")
        if self.max_evals < 1 or self.xatol <= 0 or self.fatol <= 0:
            raise ValidationError("optimizer: budget and tolerances must be positive")
        if self.r_max < 1:
            raise ValidationError("optimizer: r_max must be >= 1")


@dataclass
class OptimizationResult:
    params: RsbParams
    value: float
    trace: list[tuple[int, int, float]]  # (restart, evaluation index, value)
    evaluations: int
    converged: bool
    restart_values: list[float] = field(default_factory=list)


def decode(u: np.ndarray, r: int, species: tuple[str, ...]) -> RsbParams:
    """Map unconstrained coordinates to feasible parameters."""
    n = len(species)
    zeta = np.sort(np.clip(expit(u[:r]), _ZETA_EPS, 1 - _ZETA_EPS))
    # strictness after clipping/sorting; ties have measure zero but are cheap to break
    for k in range(1, r):
        if zeta[k] <= zeta[k - 1]:
            zeta[k] = np.nextafter(zeta[k - 1], 1.0)
    raw = u[r:].reshape(n, r) ** 2
    norm = raw.sum(axis=1, keepdims=True)
    inc = np.where(norm > 0, raw / np.where(norm > 0, norm, 1.0), 1.0 / r)
    q = np.hstack([np.zeros((n, 1)), np.cumsum(inc, axis=1)])
    q[:, -1] = 1.0
    q = np.minimum(q, 1.0)
    return make_params(zeta, q, species)


def encode(params: RsbParams) -> np.ndarray:
    """Inverse of :func:`decode` (up to the scale of the increment coordinates)."""
    zeta = np.clip(params.zeta, 1e-12, 1 - 1e-12)
    inc = np.diff(params.q, axis=1)
    return np.concatenate([logit(zeta), np.sqrt(np.maximum(inc, 0.0)).ravel()])


def _random_start(r: int, n: int, rng: np.random.Generator) -> np.ndarray:
    zeta = np.sort(rng.uniform(0.05, 0.95, r))
    inc = rng.dirichlet(np.ones(r), size=n)
    return np.concatenate([logit(zeta), np.sqrt(inc).ravel()])


def _run_nelder_mead(objective, x0, config: OptimizerConfig, restart: int, trace: list):
    best = [np.inf, None]
    count = [0]

    def f(u):
        val = objective(u)
        trace.append((restart, count[0], val))
        count[0] += 1
        if val < best[0]:
            best[0], best[1] = val, u.copy()
        return val

    res = minimize(
        f, x0, method="Nelder-Mead",
        options={"maxfev": config.max_evals, "xatol": config.xatol, "fatol": config.fatol, "adaptive": True},
    )
    return best[0], best[1], bool(res.success), count[0]


def minimize_at_level(spec: ModelSpec, r: int, config: OptimizerConfig | None = None,
                      starts: list[RsbParams] | None = None) -> OptimizationResult:
    """Multi-start Nelder-Mead minimisation of P at fixed depth ``r``.

    ``starts`` are evaluated exactly as given (no coordinate round trip) and
    then used as the first Nelder-Mead initialisations; remaining restarts
    begin at random points.
    """
    config = config or OptimizerConfig()
    if r < 1:
        raise ValidationError("r must be >= 1")
    species = spec.species
    n = len(species)
    starts = list(starts or [])

    def objective(u):
        return parisi_functional(spec, decode(u, r, species), config.quad)

    trace: list[tuple[int, int, float]] = []
    best_val, best_params = np.inf, None
    for k, p in enumerate(starts):
        val = parisi_functional(spec, p, config.quad)
        trace.append((-1, k, val))
        if val < best_val:
            best_val, best_params = val, p

    inits = [encode(p) for p in starts][: config.restarts]
    rng = stream(config.seed, "optimizer", r)
    while len(inits) < config.restarts:
        inits.append(_random_start(r, n, rng))

    converged = True
    evaluations = len(starts)
    restart_values = []
    for k, x0 in enumerate(inits):
        val, u, ok, used = _run_nelder_mead(objective, x0, config, k, trace)
        evaluations += used
        converged &= ok
        restart_values.append(val)
        # ties resolved by the earliest restart
        if val < best_val:
            best_val, best_params = val, decode(u, r, species)
        log.debug("r=%d restart %d: %.12g (%d evals)", r, k, val, used)

    return OptimizationResult(best_params, float(best_val), trace, evaluations, converged, restart_values)


def infimum_over_levels(spec: ModelSpec, config: OptimizerConfig | None = None) -> tuple[OptimizationResult, list[OptimizationResult]]:
    """Minimise for r = 1..r_max, warm-starting depth r+1 from the depth-r optimum.

    Returns the overall best result and the per-depth results; the per-depth
    values are non-increasing because each warm start reproduces the previous
    optimum exactly.
    """
    config = config or OptimizerConfig()
    per_level: list[OptimizationResult] = []
    starts: list[RsbParams] = []
    for r in range(1, config.r_max + 1):
        res = minimize_at_level(spec, r, config, starts)
        per_level.append(res)
        starts = [res.params.duplicate_level(k) for k in range(r + 1)]
    best = min(per_level, key=lambda res: res.value)
    return best, per_level
