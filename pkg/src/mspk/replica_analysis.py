"""Statistics on arrays of replica overlaps.

Samples come either from exact Gibbs sampling of small systems or from
cascades.  The tools here are source-agnostic: Ghirlanda-Guerra
discrepancies, ultrametricity violations and isotonic fits of species
overlaps against the combined overlap.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._rng import stream
from .model import (
    ENUMERATION_CAP,
    ModelSpec,
    SpinAssignment,
    ValidationError,
    all_energies,
    assign_species,
    configurations,
    sample_disorder,
)


@dataclass(frozen=True)
class OverlapSample:
    """Overlap arrays for ``D`` draws of ``n`` replicas.

    ``R_species`` has shape (D, n_species, n, n) with species rows following
    ``species``; ``R`` has shape (D, n, n); ``weights`` are per-draw weights.
    """

    R_species: np.ndarray
    R: np.ndarray
    weights: np.ndarray
    species: tuple[str, ...]
    lam: np.ndarray

    def __post_init__(self):
        D, S, n, n2 = self.R_species.shape
        if n != n2 or self.R.shape != (D, n, n) or self.weights.shape != (D,):
            raise ValidationError("overlap sample: inconsistent array shapes")
        if S != len(self.species) or len(self.lam) != S:
            raise ValidationError("overlap sample: species count mismatch")

    @property
    def n_draws(self) -> int:
        return self.R.shape[0]

    @property
    def n_replicas(self) -> int:
        return self.R.shape[1]

    def array(self, which: str = "ALL") -> np.ndarray:
        """The combined array (``"ALL"``) or one species' array, shape (D, n, n)."""
        if which == "ALL":
            return self.R
        if which not in self.species:
            raise ValidationError(f"unknown species {which!r}")
        return self.R_species[:, self.species.index(which)]

    def permute_replicas(self, perm) -> "OverlapSample":
        perm = np.asarray(perm)
        return OverlapSample(self.R_species[:, :, perm][:, :, :, perm], self.R[:, perm][:, :, perm],
                             self.weights, self.species, self.lam)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.R - self.R.swapaxes(-1, -2)) <= tol)
                    and np.all(np.abs(self.R_species - self.R_species.swapaxes(-1, -2)) <= tol))


def concat_samples(samples: list[OverlapSample]) -> OverlapSample:
    first = samples[0]
    return OverlapSample(np.concatenate([s.R_species for s in samples]), np.concatenate([s.R for s in samples]),
                         np.concatenate([s.weights for s in samples]), first.species, first.lam)


def weighted_array(sample: OverlapSample, w) -> np.ndarray:
    """R_w = sum_s lam_s w_s R^s for every draw and replica pair, shape (D, n, n)."""
    w = np.asarray(w, dtype=float)
    if w.shape != (len(sample.species),):
        raise ValidationError(f"weight vector needs {len(sample.species)} entries, got {w.shape}")
    if np.any(w < 0) or np.any(w > 1):
        raise ValidationError("weight vector entries must lie in [0, 1]")
    return np.einsum("s,dsij->dij", sample.lam * w, sample.R_species)


def weighted_overlap(sample: OverlapSample, w, l: int, lp: int) -> np.ndarray:
    """R_w(l, lp) for every draw."""
    return weighted_array(sample, w)[:, l, lp]


# --- perturbation -------------------------------------------------------------

def default_weight_grid(n_species: int) -> np.ndarray:
    """All 0/1 vectors followed by the all-0.5 vector."""
    grid = [list(v) for v in itertools.product([0.0, 1.0], repeat=n_species)]
    grid.append([0.5] * n_species)
    return np.array(grid)


@dataclass(frozen=True)
class PerturbationSpec:
    """Finite perturbation: weight vectors ``W`` (position k has j(w) = k + 1),
    orders 1..p_max and coefficients ``x`` of shape (len(W), p_max).

    ``x=None`` draws every coefficient uniformly from [1, 2] per disorder draw.
    ``allow_degenerate`` admits coefficients outside [1, 2] (e.g. zeros for tests).
    """

    W: np.ndarray
    p_max: int = 2
    x: np.ndarray | None = None
    gamma: float = 0.3
    allow_degenerate: bool = False
    tensor_cap: int = 10**7

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        object.__setattr__(self, "W", W)
        if np.any(W < 0) or np.any(W > 1):
            raise ValidationError("perturbation: weight vectors must lie in [0,1]^S")
        if not 1 <= self.p_max <= 3:
            raise ValidationError("perturbation: p_max must be 1, 2 or 3")
        if not 0.25 < self.gamma < 0.5:
            raise ValidationError("perturbation: gamma must lie in (1/4, 1/2)")
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            if x.shape != (len(W), self.p_max):
                raise ValidationError(f"perturbation: x must have shape {(len(W), self.p_max)}")
            if not self.allow_degenerate and (np.any(x < 1) or np.any(x > 2)):
                raise ValidationError("perturbation: coefficients must lie in [1, 2]")
            object.__setattr__(self, "x", x)
            if self.variance_bound(x) > 4 + 1e-12:
                raise ValidationError("perturbation: variance bound 4 exceeded")

    def variance_bound(self, x=None) -> float:
        """Upper bound on Var h_N(sigma) using R_w(sigma, sigma) <= 1."""
        x = np.full((len(self.W), self.p_max), 2.0) if x is None else np.asarray(x)
        j = np.arange(1, len(self.W) + 1)[:, None]
        p = np.arange(1, self.p_max + 1)[None, :]
        return float(np.sum(4.0 ** (-j - p) * x ** 2))

    def s_N(self, N: int) -> float:
        return float(N) ** self.gamma


def _coefficients(pspec: PerturbationSpec, seed: int, draw: int) -> np.ndarray:
    if pspec.x is not None:
        return pspec.x
    return stream(seed, "perturbation-x", draw).uniform(1.0, 2.0, (len(pspec.W), pspec.p_max))


def _pspin(tau: np.ndarray, g: np.ndarray, p: int, chunk: int = 1 << 14) -> np.ndarray:
    """N^{-p/2} sum g_{i1..ip} tau_i1 ... tau_ip for each row of ``tau``."""
    N = tau.shape[1]
    out = np.empty(tau.shape[0])
    for start in range(0, tau.shape[0], chunk):
        t = tau[start:start + chunk]
        acc = t @ g.reshape(N, -1)  # contract the first index
        for _ in range(p - 1):
            acc = np.einsum("ci,cij->cj", t, acc.reshape(t.shape[0], N, -1))
        out[start:start + chunk] = acc.reshape(-1)
    return out / N ** (p / 2)


def perturbation_hamiltonian(pspec: PerturbationSpec, assign: SpinAssignment, sigma, seed: int,
                             draw: int = 0, components: bool = False):
    """h_N(sigma) = sum_w sum_p 2^{-j(w)-p} x_{w,p} h_{N,w,p}(sigma) for a batch of configurations.

    With ``components=True`` the unscaled h_{N,w,p} are returned as an
    array of shape (len(W), p_max, batch) instead.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    N = assign.n_total
    if sigma.shape[1] != N:
        raise ValidationError("configuration length does not match the spin assignment")
    if sum(N ** p for p in range(1, pspec.p_max + 1)) * len(pspec.W) > pspec.tensor_cap:
        raise ValidationError("perturbation couplings exceed the tensor storage cap")
    if pspec.W.shape[1] != len(assign.index_sets):
        raise ValidationError("perturbation weight vectors and species count disagree")
    x = _coefficients(pspec, seed, draw)
    parts = np.zeros((len(pspec.W), pspec.p_max, sigma.shape[0]))
    for k, w in enumerate(pspec.W):
        tau = sigma * np.sqrt(w[assign.species_of])[None, :]
        for p in range(1, pspec.p_max + 1):
            g = stream(seed, "perturbation", draw, k, p).standard_normal((N,) * p)
            parts[k, p - 1] = _pspin(tau, g, p)
    if components:
        return parts
    j = np.arange(1, len(pspec.W) + 1)[:, None]
    p = np.arange(1, pspec.p_max + 1)[None, :]
    scale = 2.0 ** (-j - p) * x
    return np.einsum("kp,kpc->c", scale, parts)


# --- exact Gibbs sampling -----------------------------------------------------------

def gibbs_probabilities(energies: np.ndarray) -> np.ndarray:
    e = energies - energies.max()
    p = np.exp(e)
    return p / p.sum()


def gibbs_replica_samples(spec: ModelSpec, N: int, n: int, draws: int, seed: int,
                          pspec: PerturbationSpec | None = None, cap: int = 20) -> OverlapSample:
    """Exact Gibbs sampling: for each draw, fresh disorder (and perturbation),
    all 2^N Gibbs probabilities, and ``n`` i.i.d. replicas."""
    if N > min(cap, ENUMERATION_CAP):
        raise ValidationError(f"Gibbs sampling enumerates 2^N states; N={N} exceeds the cap {cap}")
    if n < 2:
        raise ValidationError("need at least two replicas")
    assign = assign_species(spec, N)
    S = configurations(N)
    Rs = np.empty((draws, spec.n_species, n, n))
    R = np.empty((draws, n, n))
    for d in range(draws):
        energies = all_energies(sample_disorder(spec, assign, seed, d))
        if pspec is not None:
            energies = energies + pspec.s_N(N) * perturbation_hamiltonian(pspec, assign, S, seed, d)
        probs = gibbs_probabilities(energies)
        rng = stream(seed, "gibbs", d)
        reps = S[rng.choice(len(probs), size=n, p=probs)]
        for s, ix in enumerate(assign.index_sets):
            Rs[d, s] = reps[:, ix] @ reps[:, ix].T / len(ix)
        R[d] = np.einsum("s,sij->ij", assign.realized_lambda, Rs[d])
    return OverlapSample(Rs, R, np.ones(draws), spec.species, assign.realized_lambda.copy())


# --- Ghirlanda-Guerra --------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """Bounded function of the first ``n`` replicas' overlap arrays."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(repr=False)
    bound: float
    needs: int = 1  # replicas referenced

    def __call__(self, R_species: np.ndarray, R: np.ndarray) -> np.ndarray:
        return self.fn(R_species, R)


def make_test_function(name: str, *, value: float = 1.0, threshold: float | None = None,
                       entries=None, sample: OverlapSample | None = None) -> TestFunction:
    """Built-in family: ``const``, ``indicator`` (R_12 >= threshold, default the
    sample median of R_12) and ``monomial`` (product of combined-overlap entries,
    default R_12 R_13)."""
    if name == "const":
        return TestFunction("const", lambda Rs, R: np.full(R.shape[0], float(value)), abs(value), 1)
    if name == "indicator":
        if threshold is None:
            if sample is None:
                raise ValidationError("indicator needs a threshold or a sample to take the median from")
            threshold = float(np.median(sample.R[:, 0, 1]))
        t = float(threshold)
        return TestFunction(f"indicator[R12>={t:.6g}]", lambda Rs, R: (R[:, 0, 1] >= t).astype(float), 1.0, 2)
    if name == "monomial":
        entries = [(0, 1), (0, 2)] if entries is None else [tuple(e) for e in entries]
        if not entries or any(a == b or min(a, b) < 0 for a, b in entries):
            raise ValidationError("monomial entries must be off-diagonal replica pairs")
        needs = 1 + max(max(e) for e in entries)

        def mono(Rs, R):
            out = np.ones(R.shape[0])
            for a, b in entries:
                out = out * R[:, a, b]
            return out

        return TestFunction(f"monomial{entries}", mono, 1.0, needs)
    raise ValidationError(f"unknown test function {name!r}")


@dataclass(frozen=True)
class GGResult:
    value: float   # |signed|
    signed: float
    se: float
    n: int
    p: int
    w: tuple[float, ...]
    f: str

    @property
    def within(self) -> float:
        """Multiples of SE separating the statistic from 0."""
        return self.value / self.se if self.se > 0 else (0.0 if self.value == 0 else np.inf)


def _weighted_jackknife(cols: np.ndarray, weights: np.ndarray, stat: Callable[[np.ndarray], np.ndarray]):
    """Delete-one jackknife SE of ``stat(weighted column means)``."""
    W = weights.sum()
    tot = weights @ cols
    full = stat(tot / W)
    loo = (tot[None, :] - weights[:, None] * cols) / (W - weights)[:, None]
    th = stat(loo)
    D = len(weights)
    se = np.sqrt((D - 1) / D * np.sum((th - th.mean()) ** 2))
    return float(full[0]), float(se)


def gg_delta(sample: OverlapSample, f: TestFunction, n: int, w, p: int,
             symmetrize: bool = True) -> GGResult:
    """Ghirlanda-Guerra discrepancy

        |E<f R_w(1,n+1)^p> - (1/n) E<f> E<R_w(1,2)^p> - (1/n) sum_{l=2..n} E<f R_w(1,l)^p>|

    with a delete-one jackknife SE over draws.  With ``symmetrize`` every
    per-draw term is averaged over all relabellings of the first n+1
    replicas, which leaves each expectation unchanged under exchangeability.
    """
    if n < 1 or p < 1:
        raise ValidationError("n and p must be positive")
    if sample.n_replicas < n + 1:
        raise ValidationError(f"gg_delta needs {n + 1} replicas per draw, sample has {sample.n_replicas}")
    if f.needs > n:
        raise ValidationError(f"test function {f.name} uses {f.needs} replicas but n={n}")
    if sample.n_draws < 2:
        raise ValidationError("gg_delta needs at least two draws")
    Rw = weighted_array(sample, w)
    m = n + 1
    if symmetrize:
        if m > 7:
            raise ValidationError("symmetrization is limited to n <= 6")
        perms = list(itertools.permutations(range(m)))
    else:
        perms = [tuple(range(m))]
    cols = np.zeros((sample.n_draws, 4))
    for perm in perms:
        pi = np.asarray(perm)
        Rs_p = sample.R_species[:, :, pi][:, :, :, pi]
        R_p = sample.R[:, pi][:, :, pi]
        fv = f(Rs_p[:, :, :n, :n], R_p[:, :n, :n])
        Rw_p = Rw[:, pi][:, :, pi]
        cols[:, 0] += fv * Rw_p[:, 0, n] ** p
        cols[:, 1] += fv
        cols[:, 2] += Rw_p[:, 0, 1] ** p
        cols[:, 3] += fv * np.sum(Rw_p[:, 0, 1:n] ** p, axis=1)
    cols /= len(perms)

    def stat(means):
        means = np.atleast_2d(means)
        return means[:, 0] - means[:, 1] * means[:, 2] / n - means[:, 3] / n

    signed, se = _weighted_jackknife(cols, sample.weights.astype(float), stat)
    return GGResult(abs(signed), signed, se, n, p, tuple(float(v) for v in np.ravel(w)), f.name)


# --- ultrametricity --------------------------------------------------------------

@dataclass(frozen=True)
class UltrametricityReport:
    max_violation: float
    fraction: float
    per_array: dict


def ultrametricity_violation(sample: OverlapSample, tol: float = 1e-12) -> UltrametricityReport:
    """Largest min(R_{l l'}, R_{l l''}) - R_{l' l''} over ordered triples, clipped at 0."""
    if sample.n_replicas < 3:
        raise ValidationError("ultrametricity needs at least three replicas")
    n = sample.n_replicas
    triples = np.array([t for t in itertools.permutations(range(n), 3)])
    a, b, c = triples.T
    per = {}
    worst, bad, total = 0.0, 0, 0
    for name in ("ALL",) + sample.species:
        A = sample.array(name)
        v = np.maximum(np.minimum(A[:, a, b], A[:, a, c]) - A[:, b, c], 0.0)
        per[name] = float(v.max())
        worst = max(worst, per[name])
        bad += int(np.count_nonzero(v > tol))
        total += v.size
    return UltrametricityReport(worst, bad / total, per)


# --- synchronization -----------------------------------------------------------------

def pava(y: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit of ``y`` (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    level, weight, size = [], [], []
    for yi, wi in zip(y, w):
        level.append(yi)
        weight.append(wi)
        size.append(1)
        while len(level) > 1 and level[-2] > level[-1]:
            wt = weight[-2] + weight[-1]
            lv = (weight[-2] * level[-2] + weight[-1] * level[-1]) / wt
            sz = size[-2] + size[-1]
            del level[-1], weight[-1], size[-1]
            level[-1], weight[-1], size[-1] = lv, wt, sz
    return np.repeat(level, size)


@dataclass(frozen=True)
class SyncFit:
    species: str
    knots: np.ndarray     # distinct combined-overlap values
    fitted: np.ndarray    # fitted species overlap at each knot
    max_residual: float
    lipschitz: float      # largest secant slope between consecutive knots
    bound: float          # 1 / lam_s

    def __call__(self, R) -> np.ndarray:
        """Evaluate the fitted step map (right-continuous between knots)."""
        idx = np.clip(np.searchsorted(self.knots, R, side="right") - 1, 0, len(self.knots) - 1)
        return self.fitted[idx]


def fit_isotonic(x, y, weights=None, species: str = "", bound: float = np.inf) -> SyncFit:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    weights = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    if x.size == 0:
        raise ValidationError("synchronization fit needs a nonempty sample")
    knots, inv = np.unique(x, return_inverse=True)
    wsum = np.bincount(inv, weights=weights, minlength=len(knots))
    ymean = np.bincount(inv, weights=weights * y, minlength=len(knots)) / wsum
    fitted = pava(ymean, wsum)
    resid = float(np.max(np.abs(y - fitted[inv])))
    if len(knots) < 2:
        lip = 0.0
    else:
        lip = float(np.max(np.diff(fitted) / np.diff(knots)))
    return SyncFit(species, knots, fitted, resid, lip, bound)


def fit_synchronization(sample: OverlapSample) -> dict[str, SyncFit]:
    """Isotonic fit of R^s against R over all off-diagonal replica pairs, per species."""
    n = sample.n_replicas
    if n < 2 or sample.n_draws == 0:
        raise ValidationError("synchronization needs a nonempty sample with n >= 2")
    iu = np.triu_indices(n, 1)
    x = sample.R[:, iu[0], iu[1]]
    wts = np.repeat(sample.weights[:, None], len(iu[0]), axis=1)
    out = {}
    for s, label in enumerate(sample.species):
        y = sample.R_species[:, s, iu[0], iu[1]]
        out[label] = fit_isotonic(x, y, wts, label, 1.0 / sample.lam[s])
    return out
