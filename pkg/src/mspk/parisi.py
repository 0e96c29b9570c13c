"""Parisi functional for the multi-species model at finite replica-symmetry-breaking depth.

For each species the recursion only ever sees the accumulated Gaussian field,
so X^s_l is tabulated as a function of one scalar ``x``:

    X_r(x) = log ch x,
    X_l(x) = (1/zeta_l) log E exp(zeta_l X_{l+1}(x + eta sqrt(Q^s_{l+1} - Q^s_l))),

and X^s_0 = X_0(0).  Expectations over ``eta`` use Gauss-Hermite nodes.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.interpolate import CubicSpline

from .model import ModelSpec, ValidationError

LOG2 = float(np.log(2.0))
ZETA_LIMIT = 1e-10


@dataclass(frozen=True)
class RsbParams:
    """Replica-symmetry-breaking parameters.

    ``zeta`` has length r (the implicit endpoints 0 and 1 are not stored) and
    ``q`` has shape (n_species, r + 1) with rows ordered like ``species``.
    """

    zeta: np.ndarray
    q: np.ndarray
    species: tuple[str, ...]

    @property
    def r(self) -> int:
        return len(self.zeta)

    def q_of(self, label: str) -> np.ndarray:
        return self.q[self.species.index(label)]

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "zeta": [float(z) for z in self.zeta],
            "q": {s: [float(v) for v in row] for s, row in zip(self.species, self.q)},
        }

    def duplicate_level(self, k: int) -> "RsbParams":
        """Insert a copy of q-level ``k``; the new zeta bisects (zeta_{k-1}, zeta_k).

        The functional takes the same value at the result.
        """
        if not 0 <= k <= self.r:
            raise ValidationError(f"level {k} out of range 0..{self.r}")
        ext = np.concatenate([[0.0], self.zeta, [1.0]])
        new = 0.5 * (ext[k] + ext[k + 1])
        zeta = np.insert(self.zeta, k, new)
        q = np.insert(self.q, k, self.q[:, k], axis=1)
        return RsbParams(zeta, q, self.species)


def make_params(zeta, q: Mapping[str, object] | np.ndarray, species=None) -> RsbParams:
    """Validate and build :class:`RsbParams`.

    ``q`` is either a mapping label -> sequence or an array whose rows follow
    ``species``.
    """
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    if isinstance(q, Mapping):
        species = tuple(q) if species is None else tuple(species)
        try:
            rows = [np.asarray(q[s], dtype=float) for s in species]
        except KeyError as exc:
            raise ValidationError(f"q: no sequence for species {exc.args[0]!r}") from None
        q = np.vstack(rows) if rows else np.zeros((0, 0))
    else:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if species is None:
            raise ValidationError("q given as an array needs explicit species labels")
        species = tuple(species)
    r = len(zeta)
    if r < 1:
        raise ValidationError("zeta: r must be at least 1")
    if q.shape != (len(species), r + 1):
        raise ValidationError(f"q: expected shape ({len(species)}, {r + 1}), got {q.shape}")
    if not np.all(np.isfinite(zeta)) or not np.all(np.isfinite(q)):
        raise ValidationError("params: entries must be finite")
    if np.any(zeta <= 0) or np.any(zeta >= 1):
        raise ValidationError("zeta: entries must lie in (0, 1)")
    if np.any(np.diff(zeta) <= 0):
        raise ValidationError("zeta: sequence must be strictly increasing")
    if np.any(np.abs(q[:, 0]) > 1e-12) or np.any(np.abs(q[:, -1] - 1) > 1e-12):
        raise ValidationError("q: every sequence must start at 0 and end at 1")
    q = q.copy()
    q[:, 0] = 0.0
    q[:, -1] = 1.0
    if np.any(np.diff(q, axis=1) < 0):
        raise ValidationError("q: sequences must be non-decreasing")
    return RsbParams(zeta.copy(), q, species)


def params_from_dict(raw: Mapping) -> RsbParams:
    try:
        zeta, q = raw["zeta"], raw["q"]
    except KeyError as exc:
        raise ValidationError(f"params: missing field {exc.args[0]!r}") from None
    if not isinstance(q, Mapping):
        raise ValidationError("params: q must map species labels to sequences")
    params = make_params(zeta, q)
    if "r" in raw and int(raw["r"]) != params.r:
        raise ValidationError(f"params: r={raw['r']} disagrees with len(zeta)={params.r}")
    return params


def _check_species(spec: ModelSpec, params: RsbParams) -> np.ndarray:
    if set(spec.species) != set(params.species):
        raise ValidationError(f"species mismatch: model {spec.species} vs params {params.species}")
    return np.vstack([params.q_of(s) for s in spec.species])


@dataclass(frozen=True)
class PathSequences:
    Q: np.ndarray   # (r + 1,)
    Qs: np.ndarray  # (n_species, r + 1), rows in model species order


def path_sequences(spec: ModelSpec, params: RsbParams) -> PathSequences:
    """Q_l = sum_{s,t} D_st lam_s lam_t q^s_l q^t_l and Q^s_l = 2 sum_t D_st lam_t q^t_l."""
    q = _check_species(spec, params)
    lq = spec.lam[:, None] * q
    Qs = 2.0 * spec.delta_sq @ lq
    Q = np.einsum("sl,st,tl->l", lq, spec.delta_sq, lq)
    return PathSequences(Q, Qs)


@dataclass(frozen=True)
class QuadratureConfig:
    mode: str = "grid"
    hermite_nodes: int = 40
    grid_points: int = 513
    grid_halfwidth_sigmas: float = 8.0

    def __post_init__(self):
        if self.mode not in ("grid", "nested"):
            raise ValidationError(f"quadrature mode must be 'grid' or 'nested', got {self.mode!r}")
        if self.hermite_nodes < 8:
            raise ValidationError("quadrature: at least 8 Hermite nodes are required")
        if self.grid_points < 5 or self.grid_halfwidth_sigmas <= 0:
            raise ValidationError("quadrature: grid needs >= 5 points and a positive halfwidth")


@lru_cache(maxsize=32)
def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights with sum w f(z) ~ E f(eta), eta standard normal."""
    x, w = hermgauss(n)
    w = w / w.sum()
    return x * np.sqrt(2.0), w


def log_ch(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - LOG2


def soft_expectation(values: np.ndarray, weights: np.ndarray, zeta: float, axis: int = -1) -> np.ndarray:
    """(1/zeta) log sum_k w_k exp(zeta v_k) along ``axis``; weights sum to 1.

    Shifted by the maximum and written with expm1/log1p so that the
    zeta -> 0 limit sum_k w_k v_k is reached smoothly.
    """
    values = np.moveaxis(values, axis, -1)
    if zeta < ZETA_LIMIT:
        return values @ weights
    m = values.max(axis=-1)
    s = np.expm1(zeta * (values - m[..., None])) @ weights
    return m + np.log1p(s) / zeta


class _Tabulated:
    """Cubic spline on a symmetric grid, continued with slope +-1 outside."""

    def __init__(self, x: np.ndarray, values: np.ndarray):
        self.h = x[-1]
        self.edge = values[-1]
        self.edge_left = values[0]
        self.spline = CubicSpline(x, values)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        out = self.spline(np.clip(y, -self.h, self.h))
        over = y > self.h
        under = y < -self.h
        out[over] = self.edge + (y[over] - self.h)
        out[under] = self.edge_left + (-self.h - y[under])
        return out


def _recursion_grid(Qs: np.ndarray, zeta: np.ndarray, quad: QuadratureConfig) -> float:
    z, w = gauss_hermite(quad.hermite_nodes)
    inc = np.diff(Qs)
    r = len(zeta)
    half = quad.grid_halfwidth_sigmas * np.sqrt(Qs[-1])
    x = np.linspace(-half, half, quad.grid_points)
    f = log_ch
    for level in range(r - 1, 0, -1):
        if inc[level] == 0:
            continue  # degenerate level: X_l = X_{l+1}
        vals = f(x[:, None] + z[None, :] * np.sqrt(inc[level]))
        f = _Tabulated(x, soft_expectation(vals, w, zeta[level]))
    if inc[0] == 0:
        return float(f(np.zeros(1))[0])
    vals = f(z * np.sqrt(inc[0]))
    return float(soft_expectation(vals, w, zeta[0]))


def _recursion_nested(Qs: np.ndarray, zeta: np.ndarray, quad: QuadratureConfig) -> float:
    z, w = gauss_hermite(quad.hermite_nodes)
    inc = np.diff(Qs)
    r = len(zeta)
    field = np.zeros((1,) * r)
    for level in range(r):
        shape = [1] * r
        shape[level] = len(z)
        field = field + (z * np.sqrt(inc[level])).reshape(shape)
    vals = log_ch(field)
    for level in range(r - 1, -1, -1):
        vals = soft_expectation(vals, w, zeta[level], axis=-1)
    return float(vals)


def parisi_recursion(spec: ModelSpec, params: RsbParams, quad: QuadratureConfig | None = None) -> np.ndarray:
    """X^s_0 for every species, in model species order."""
    quad = quad or QuadratureConfig()
    paths = path_sequences(spec, params)
    return _recursion_from_paths(paths, params.zeta, quad)


def _recursion_from_paths(paths: PathSequences, zeta: np.ndarray, quad: QuadratureConfig) -> np.ndarray:
    if quad.mode == "nested" and len(zeta) > 3:
        raise ValidationError("nested-exact quadrature is limited to r <= 3")
    inc = np.diff(paths.Qs, axis=1)
    if np.any(inc < -1e-12):
        raise ValidationError("path sequences Q^s must be non-decreasing")
    run = _recursion_grid if quad.mode == "grid" else _recursion_nested
    out = np.zeros(paths.Qs.shape[0])
    for s, Qs in enumerate(paths.Qs):
        Qs = np.maximum.accumulate(Qs)
        if Qs[-1] > 0:
            out[s] = run(Qs, zeta, quad)
    return out


@dataclass(frozen=True)
class ParisiEvaluation:
    P: float
    X0: np.ndarray
    paths: PathSequences
    correction: float  # 1/2 sum_l zeta_l (Q_{l+1} - Q_l)


def evaluate(spec: ModelSpec, params: RsbParams, quad: QuadratureConfig | None = None) -> ParisiEvaluation:
    quad = quad or QuadratureConfig()
    paths = path_sequences(spec, params)
    X0 = _recursion_from_paths(paths, params.zeta, quad)
    corr = 0.5 * float(params.zeta @ np.diff(paths.Q))
    return ParisiEvaluation(LOG2 + float(spec.lam @ X0) - corr, X0, paths, corr)


def parisi_functional(spec: ModelSpec, params: RsbParams, quad: QuadratureConfig | None = None) -> float:
    """P(zeta, q) = log 2 + sum_s lam_s X^s_0 - 1/2 sum_l zeta_l (Q_{l+1} - Q_l)."""
    return evaluate(spec, params, quad).P
