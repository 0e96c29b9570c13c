"""Multi-species SK model: parameters, disorder, energies and exact partition functions.

The Hamiltonian is

    H_N(sigma) = N^{-1/2} sum_{i,j} g_ij sigma_i sigma_j,

with independent centred Gaussian couplings whose variance ``delta_sq[s, t]``
depends only on the species of ``i`` and ``j``.  Diagonal terms are kept.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from ._rng import stream

ENUMERATION_CAP = 24
PSD_TOL = -1e-10


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


@dataclass(frozen=True)
class ModelSpec:
    species: tuple[str, ...]
    lam: np.ndarray
    delta_sq: np.ndarray
    psd: bool = field(default=True)

    @property
    def n_species(self) -> int:
        return len(self.species)

    def mean_variance(self) -> float:
        """sum_{s,t} delta_sq[s,t] lam_s lam_t, the per-spin variance of H_N at R = 1."""
        return float(self.lam @ self.delta_sq @ self.lam)

    def with_lambda(self, lam) -> "ModelSpec":
        return ModelSpec(self.species, np.asarray(lam, dtype=float), self.delta_sq, self.psd)

    def permuted(self, order: Sequence[int]) -> "ModelSpec":
        order = list(order)
        return ModelSpec(
            tuple(self.species[i] for i in order),
            self.lam[order],
            self.delta_sq[np.ix_(order, order)],
            self.psd,
        )

    def to_dict(self) -> dict:
        return {
            "species": list(self.species),
            "lambda": [float(x) for x in self.lam],
            "delta_sq": [[float(x) for x in row] for row in self.delta_sq],
        }


def validate_model(raw: Mapping | ModelSpec) -> ModelSpec:
    """Check a raw model description and return a :class:`ModelSpec`.

    ``raw`` is a mapping with keys ``species``, ``lambda`` and ``delta_sq``
    (the JSON layout), or an existing spec to re-validate.
    """
    if isinstance(raw, ModelSpec):
        raw = raw.to_dict()
    try:
        species = tuple(str(s) for s in raw["species"])
        lam = np.asarray(raw["lambda"], dtype=float)
        dsq = np.asarray(raw["delta_sq"], dtype=float)
    except KeyError as exc:
        raise ValidationError(f"model: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"model: non-numeric entry ({exc})") from None

    n = len(species)
    if n < 1:
        raise ValidationError("species: at least one species is required")
    if len(set(species)) != n:
        raise ValidationError("species: labels must be distinct")
    if lam.shape != (n,):
        raise ValidationError(f"lambda: expected {n} entries, got shape {lam.shape}")
    if dsq.shape != (n, n):
        raise ValidationError(f"delta_sq: expected a {n}x{n} matrix, got shape {dsq.shape}")
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(dsq))):
        raise ValidationError("model: entries must be finite")
    if np.any(lam <= 0):
        raise ValidationError("lambda: every proportion must be positive")
    if abs(lam.sum() - 1.0) > 1e-12:
        raise ValidationError(f"lambda: proportions sum to {lam.sum():.12g}, not 1")
    if np.max(np.abs(dsq - dsq.T)) > 1e-12:
        raise ValidationError("delta_sq: matrix is not symmetric")
    if np.any(dsq < 0):
        raise ValidationError("delta_sq: entries are variances and must be >= 0")
    dsq = 0.5 * (dsq + dsq.T)
    psd = bool(np.linalg.eigvalsh(dsq)[0] >= PSD_TOL)
    lam.setflags(write=False)
    dsq.setflags(write=False)
    return ModelSpec(species, lam, dsq, psd)


@dataclass(frozen=True)
class SpinAssignment:
    n_total: int
    index_sets: tuple[np.ndarray, ...]
    realized_lambda: np.ndarray
    species_of: np.ndarray  # species index of every site

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(ix) for ix in self.index_sets])


def assign_species(spec: ModelSpec, N: int) -> SpinAssignment:
    """Split ``N`` sites into contiguous species blocks by largest-remainder rounding."""
    N = int(N)
    if N < spec.n_species:
        raise ValidationError(f"N={N} is smaller than the number of species ({spec.n_species})")
    exact = spec.lam * N
    counts = np.floor(exact).astype(int)
    short = N - counts.sum()
    # stable sort keeps species order among equal remainders
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:short]] += 1
    if np.any(counts < 1):
        raise ValidationError(f"N={N} leaves species {spec.species[int(np.argmin(counts))]!r} empty")
    edges = np.concatenate([[0], np.cumsum(counts)])
    index_sets = tuple(np.arange(edges[k], edges[k + 1]) for k in range(spec.n_species))
    species_of = np.repeat(np.arange(spec.n_species), counts)
    return SpinAssignment(N, index_sets, counts / N, species_of)


def effective_spec(spec: ModelSpec, assign: SpinAssignment, use_realized_lambda: bool = True) -> ModelSpec:
    """Copy of the model whose proportions are the finite-N ratios N_s/N (or the limits)."""
    return spec.with_lambda(assign.realized_lambda) if use_realized_lambda else spec


@dataclass(frozen=True)
class DisorderMatrix:
    g: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.g.shape[0]


def sample_disorder(spec: ModelSpec, assign: SpinAssignment, seed: int, draw: int = 0) -> DisorderMatrix:
    """Draw the coupling matrix for disorder sample ``draw``.

    Each species block is generated from its own stream keyed by the pair of
    species labels, so relabelling species permutes the couplings together
    with the sites.
    """
    N = assign.n_total
    g = np.zeros((N, N))
    for a, ia in enumerate(assign.index_sets):
        for b, ib in enumerate(assign.index_sets):
            var = spec.delta_sq[a, b]
            if var == 0:
                continue
            rng = stream(seed, "disorder", draw, spec.species[a], spec.species[b])
            g[ia[0] : ia[-1] + 1, ib[0] : ib[-1] + 1] = np.sqrt(var) * rng.standard_normal((len(ia), len(ib)))
    return DisorderMatrix(g, seed)


def hamiltonian(disorder: DisorderMatrix, sigma) -> np.ndarray | float:
    """H_N(sigma); ``sigma`` may be one configuration or a stack of them."""
    g = disorder.g
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape[-1] != g.shape[0]:
        raise ValidationError(f"configuration length {sigma.shape[-1]} does not match N={g.shape[0]}")
    energy = np.einsum("...i,ij,...j->...", sigma, g, sigma) / np.sqrt(g.shape[0])
    return float(energy) if energy.ndim == 0 else energy


def species_overlaps(assign: SpinAssignment, sigma1, sigma2) -> tuple[np.ndarray, float]:
    """Per-species overlaps R_s and the combined overlap R = sum_s (N_s/N) R_s."""
    s1 = np.asarray(sigma1, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    if s1.shape != (assign.n_total,) or s2.shape != (assign.n_total,):
        raise ValidationError("configuration length does not match the spin assignment")
    prod = s1 * s2
    rs = np.array([prod[ix].mean() for ix in assign.index_sets])
    return rs, float(assign.realized_lambda @ rs)


def configurations(N: int) -> np.ndarray:
    """All 2^N configurations as rows of +-1, configuration k has bits of k (site 0 = lowest bit)."""
    k = np.arange(2**N, dtype=np.int64)[:, None]
    bits = (k >> np.arange(N)) & 1
    return 1.0 - 2.0 * bits


def all_energies(disorder: DisorderMatrix) -> np.ndarray:
    """H_N for every configuration in :func:`configurations` order."""
    N = disorder.n
    if N > 20:
        raise ValidationError(f"explicit energy table limited to N <= 20, got {N}")
    S = configurations(N)
    return np.einsum("ki,ki->k", S @ disorder.g, S) / np.sqrt(N)


@njit(cache=True, nogil=True)
def _gray_log_partition(g):
    N = g.shape[0]
    scale = 1.0 / np.sqrt(N)
    sigma = np.ones(N)
    f = np.zeros(N)
    energy = 0.0
    for i in range(N):
        energy += g[i, i]
        for j in range(N):
            if i != j:
                f[i] += g[i, j] + g[j, i]
                energy += g[i, j]
    energy *= scale
    # sigma_{N-1} stays +1; the sign-flipped half has identical energies
    m = energy
    s = 1.0
    n_states = 1 << (N - 1)
    for t in range(1, n_states):
        k = 0
        while not (t >> k) & 1:
            k += 1
        old = sigma[k]
        energy -= 2.0 * scale * old * f[k]
        sigma[k] = -old
        for i in range(N):
            if i != k:
                f[i] -= 2.0 * (g[i, k] + g[k, i]) * old
        if energy > m:
            s = s * np.exp(m - energy) + 1.0
            m = energy
        else:
            s += np.exp(energy - m)
    return np.log(2.0) + m + np.log(s)


def exact_log_partition(disorder: DisorderMatrix, cap: int = ENUMERATION_CAP) -> float:
    """log sum_sigma exp H_N(sigma) by Gray-code enumeration."""
    N = disorder.n
    if N > cap:
        raise ValidationError(f"N={N} exceeds the enumeration cap {cap}")
    if N < 1:
        raise ValidationError("N must be positive")
    return float(_gray_log_partition(np.ascontiguousarray(disorder.g, dtype=np.float64)))


@dataclass(frozen=True)
class FreeEnergyEstimate:
    mean: float
    se: float
    values: np.ndarray
    n: int


def free_energy_mc(spec: ModelSpec, N: int, samples: int, seed: int,
                   cap: int = ENUMERATION_CAP, workers: int = 1) -> FreeEnergyEstimate:
    """Sample mean and standard error of (1/N) log Z_N over independent disorder draws."""
    if samples < 2:
        raise ValidationError("free_energy_mc needs at least 2 samples")
    if N > cap:
        raise ValidationError(f"N={N} exceeds the enumeration cap {cap}")
    assign = assign_species(spec, N)

    def one(k: int) -> float:
        return exact_log_partition(sample_disorder(spec, assign, seed, k), cap) / N

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            values = np.array(list(pool.map(one, range(samples))))
    else:
        values = np.array([one(k) for k in range(samples)])
    return FreeEnergyEstimate(float(values.mean()), float(values.std(ddof=1) / np.sqrt(samples)), values, N)


# --- covariance checks -------------------------------------------------------

def random_configuration_pairs(assign: SpinAssignment, count: int, rng: np.random.Generator,
                               max_flip: float = 0.05) -> np.ndarray:
    """Pairs (sigma1, sigma2) with |R| close to 1 and species-dependent overlaps.

    sigma2 is sigma1, globally negated with probability 1/2, with each spin of
    species s flipped independently at a rate drawn from [0, max_flip].  Pairs
    with small overlaps are avoided on purpose: the relative error of a Monte
    Carlo covariance estimate is unbounded when the covariance is near zero.
    Returns an array of shape (count, 2, N).
    """
    N = assign.n_total
    out = np.empty((count, 2, N))
    for c in range(count):
        s1 = rng.choice([-1.0, 1.0], size=N)
        rates = rng.uniform(0.0, max_flip, size=len(assign.index_sets))[assign.species_of]
        flips = np.where(rng.random(N) < rates, -1.0, 1.0)
        sign = rng.choice([-1.0, 1.0])
        out[c, 0] = s1
        out[c, 1] = sign * s1 * flips
    return out


def _relative_error(emp: np.ndarray, theory: np.ndarray) -> np.ndarray:
    denom = np.where(theory != 0, np.abs(theory), 1.0)
    return np.abs(emp - theory) / denom


@dataclass(frozen=True)
class CovarianceCheck:
    theory: np.ndarray
    empirical: np.ndarray
    rel_error: np.ndarray
    pairs: np.ndarray
    draws: int


def _pair_overlaps(assign, pairs):
    rs = np.array([species_overlaps(assign, p[0], p[1])[0] for p in pairs])
    return rs.reshape(len(pairs), -1)


def empirical_hamiltonian_covariance(spec: ModelSpec, N: int, pairs: int | np.ndarray = 20,
                                     draws: int = 10_000, seed: int = 0,
                                     use_realized_lambda: bool = True) -> CovarianceCheck:
    """Compare (1/N) E H(sigma1) H(sigma2) with sum_{s,t} delta_sq lam_s lam_t R_s R_t."""
    if draws < 100:
        raise ValidationError("covariance checks need at least 100 draws")
    assign = assign_species(spec, N)
    if np.ndim(pairs) == 0:
        pairs = random_configuration_pairs(assign, int(pairs), stream(seed, "pairs"))
    pairs = np.asarray(pairs, dtype=float)
    lam = effective_spec(spec, assign, use_realized_lambda).lam
    rs = _pair_overlaps(assign, pairs)
    theory = np.einsum("ps,st,pt->p", rs * lam, spec.delta_sq, rs * lam)

    s1, s2 = pairs[:, 0], pairs[:, 1]
    acc = np.zeros(len(pairs))
    for k in range(draws):
        d = sample_disorder(spec, assign, seed, k)
        acc += hamiltonian(d, s1) * hamiltonian(d, s2)
    emp = acc / draws / N
    return CovarianceCheck(theory, emp, _relative_error(emp, theory), pairs, draws)


@dataclass(frozen=True)
class CavityCheck:
    z_theory: np.ndarray
    z_empirical: np.ndarray
    z_rel_error: np.ndarray
    y_theory: np.ndarray
    y_empirical: np.ndarray
    y_rel_error: np.ndarray
    pairs: np.ndarray
    draws: int


def empirical_cavity_covariance(spec: ModelSpec, N: int, cavity_species: str,
                                pairs: int | np.ndarray = 20, draws: int = 10_000, seed: int = 0,
                                use_realized_lambda: bool = True) -> CavityCheck:
    """Monte Carlo covariances of the cavity fields for one added spin (k = 1).

    z(sigma) = (N+1)^{-1/2} sum_j (g_ij + g_ji) sigma_j for a new site i of
    ``cavity_species``, and y(sigma) = (N(N+1))^{-1/2} sum_{i,j} g'_ij sigma_i sigma_j.
    Theory values are the large-N forms 2 sum_t delta_sq[s,t] lam_t R_t and
    sum_{s,t} delta_sq lam_s lam_t R_s R_t; the finite-N factor N/(N+1) is
    left to the caller's tolerance.
    """
    if draws < 100:
        raise ValidationError("covariance checks need at least 100 draws")
    if cavity_species not in spec.species:
        raise ValidationError(f"unknown cavity species {cavity_species!r}")
    s = spec.species.index(cavity_species)
    assign = assign_species(spec, N)
    if np.ndim(pairs) == 0:
        pairs = random_configuration_pairs(assign, int(pairs), stream(seed, "cavity-pairs"))
    pairs = np.asarray(pairs, dtype=float)
    lam = effective_spec(spec, assign, use_realized_lambda).lam
    rs = _pair_overlaps(assign, pairs)
    z_theory = 2.0 * (rs * lam) @ spec.delta_sq[s]
    y_theory = np.einsum("ps,st,pt->p", rs * lam, spec.delta_sq, rs * lam)

    sd_row = np.sqrt(spec.delta_sq[s, assign.species_of])
    s1, s2 = pairs[:, 0], pairs[:, 1]
    zacc = np.zeros(len(pairs))
    yacc = np.zeros(len(pairs))
    for k in range(draws):
        rng = stream(seed, "cavity", k)
        row = sd_row * rng.standard_normal(N) + sd_row * rng.standard_normal(N)
        z1 = s1 @ row / np.sqrt(N + 1)
        z2 = s2 @ row / np.sqrt(N + 1)
        zacc += z1 * z2
        gp = sample_disorder(spec, assign, seed, draws + k).g
        y1 = np.einsum("pi,ij,pj->p", s1, gp, s1) / np.sqrt(N * (N + 1))
        y2 = np.einsum("pi,ij,pj->p", s2, gp, s2) / np.sqrt(N * (N + 1))
        yacc += y1 * y2
    z_emp = zacc / draws
    y_emp = yacc / draws
    return CavityCheck(z_theory, z_emp, _relative_error(z_emp, z_theory),
                       y_theory, y_emp, _relative_error(y_emp, y_theory), pairs, draws)
