"""Truncated Ruelle probability cascades with their hierarchical Gaussian fields.

A tree of depth r keeps, under every node at depth l, the ``M[l]`` largest
atoms of a Poisson process with intensity zeta_l x^{-zeta_l - 1}.  Atoms are
stored as logarithms; leaf masses are products along the path.

Truncation at the last level is compensated by one pseudo-leaf per parent
carrying the expected mass of the discarded atoms,
E sum_{a < a_M} a = zeta/(1 - zeta) a_M^{1 - zeta}.  Because last-level
children are exchangeable given their parent, the pseudo-leaf's field
contribution is the conditional expectation over a fresh last increment.
Without the compensation the discarded mass decays only like
M^{1 - 1/zeta}, which is far too slow when the last zeta is close to 1.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from ._rng import stream
from .model import (
    ModelSpec,
    ValidationError,
    assign_species,
    effective_spec,
    exact_log_partition,
    sample_disorder,
    configurations,
)
from .parisi import LOG2, PathSequences, QuadratureConfig, RsbParams, log_ch, path_sequences, evaluate
from .replica_analysis import OverlapSample


def _lse(x: np.ndarray) -> float:
    m = np.max(x)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(x - m))))


def _lse2(a: np.ndarray, b: np.ndarray) -> float:
    """log(sum exp a + sum exp b) without concatenating."""
    m = max(np.max(a), np.max(b))
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(a - m)) + np.sum(np.exp(b - m))))


LEAF_CAP = 10**5


def _levels(M, r: int, leaf_cap: int | None = None) -> tuple[int, ...]:
    M = (int(M),) * r if np.ndim(M) == 0 else tuple(int(m) for m in M)
    if len(M) != r:
        raise ValidationError(f"truncation needs one branching number per level ({r}), got {len(M)}")
    if min(M) < 2:
        raise ValidationError("truncation M must be at least 2")
    if leaf_cap is not None and int(np.prod(M)) > leaf_cap:
        raise ValidationError(f"{int(np.prod(M))} leaves exceed the leaf cap {leaf_cap}")
    return M


@dataclass(frozen=True)
class CascadeTree:
    zeta: np.ndarray
    M: tuple[int, ...]
    log_atoms: tuple[np.ndarray, ...]  # level l has shape M[:l+1], decreasing along the last axis
    tail_correction: bool = True
    seed: int | None = None

    @property
    def r(self) -> int:
        return len(self.zeta)

    @cached_property
    def log_leaf_mass(self) -> np.ndarray:
        out = np.zeros(())
        for la in self.log_atoms:
            out = out[..., None] + la
        return out

    @cached_property
    def log_tail_mass(self) -> np.ndarray:
        """Log expected discarded mass under every last-level parent, shape M[:-1]."""
        z = self.zeta[-1]
        last = self.log_atoms[-1][..., -1]
        if not self.tail_correction:
            return np.full(last.shape, -np.inf)
        out = np.log(z / (1 - z)) + (1 - z) * last
        prefix = np.zeros(())
        for la in self.log_atoms[:-1]:
            prefix = prefix[..., None] + la
        return out + prefix

    @cached_property
    def log_norm(self) -> float:
        return _lse2(self.log_leaf_mass, self.log_tail_mass)

    @cached_property
    def log_v(self) -> np.ndarray:
        return self.log_leaf_mass - self.log_norm

    @cached_property
    def log_v_tail(self) -> np.ndarray:
        return self.log_tail_mass - self.log_norm

    @cached_property
    def log_total(self) -> float:
        """log of the total normalized mass (0 up to rounding); subtracted so that
        zero fields give exactly 0."""
        return _lse2(self.log_v, self.log_v_tail)

    @property
    def weights(self) -> np.ndarray:
        """Leaf weights v_alpha, shape M."""
        return np.exp(self.log_v)

    @property
    def tail_weights(self) -> np.ndarray:
        return np.exp(self.log_v_tail)

    def discarded_mass(self) -> np.ndarray:
        """Per level, the mean over nodes of expected discarded mass / retained mass."""
        out = []
        for z, la in zip(self.zeta, self.log_atoms):
            tail = z / (1 - z) * np.exp((1 - z) * la[..., -1])
            kept = np.exp(la).sum(axis=-1)
            out.append(float(np.mean(tail / kept)))
        return np.array(out)

    def truncated(self, M) -> "CascadeTree":
        """The tree keeping only the first ``M[l]`` children of every node (same atoms)."""
        M = _levels(M, self.r)
        if any(m > big for m, big in zip(M, self.M)):
            raise ValidationError("cannot truncate to a larger branching number")
        atoms = tuple(la[tuple(slice(0, m) for m in M[: l + 1])] for l, la in enumerate(self.log_atoms))
        return CascadeTree(self.zeta, M, atoms, self.tail_correction, self.seed)


def sample_cascade(zeta, M, seed: int, index: int = 0, tail_correction: bool = True,
                   leaf_cap: int = LEAF_CAP) -> CascadeTree:
    """Sample a truncated cascade; atoms are T_k^{-1/zeta} for unit-rate arrival times T_k."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim != 1 or len(zeta) < 1 or np.any(zeta <= 0) or np.any(zeta >= 1) or np.any(np.diff(zeta) <= 0):
        raise ValidationError("zeta must be a strictly increasing sequence in (0, 1)")
    M = _levels(M, len(zeta), leaf_cap)
    rng = stream(seed, "cascade", index)
    atoms = []
    for l, z in enumerate(zeta):
        arrivals = np.cumsum(rng.standard_exponential(M[: l + 1]), axis=-1)
        atoms.append(-np.log(arrivals) / z)
    return CascadeTree(zeta.copy(), M, tuple(atoms), tail_correction, seed)


@dataclass(frozen=True)
class FieldSample:
    """Hierarchical Gaussian fields on the leaves of one tree.

    ``C`` has shape (n_fields, *M); ``C_parent`` holds the same fields at the
    last-level parents and ``C_last_var`` the variance of the last increment,
    which together give the conditional law of a discarded leaf.
    """

    C: np.ndarray
    C_parent: np.ndarray
    C_last_var: np.ndarray
    D: np.ndarray
    D_parent: np.ndarray
    D_last_var: float
    seed: int | None = None

    def truncated(self, tree: CascadeTree) -> "FieldSample":
        idx = tuple(slice(0, m) for m in tree.M)
        pidx = idx[:-1]
        return FieldSample(self.C[(slice(None),) + idx], self.C_parent[(slice(None),) + pidx],
                           self.C_last_var, self.D[idx], self.D_parent[pidx], self.D_last_var, self.seed)


def _hierarchical(rng, M, variances: np.ndarray, copies: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum of per-edge increments; ``variances`` has shape (copies, r)."""
    r = len(M)
    field = np.zeros((copies,) + (1,) * 0)
    parent = None
    for l in range(r):
        if l == r - 1:
            parent = field
        sd = np.sqrt(variances[:, l]).reshape((copies,) + (1,) * (l + 1))
        step = rng.standard_normal((copies,) + M[: l + 1])
        step *= sd
        step += field[..., None]
        field = step
    if parent is None:
        parent = np.zeros((copies,))
    return field, parent


def _increments(seq: np.ndarray) -> np.ndarray:
    inc = np.diff(seq, axis=-1)
    if np.any(inc < -1e-12):
        raise ValidationError("path sequences must be non-decreasing")
    return np.maximum(inc, 0.0)


def sample_fields(tree: CascadeTree, paths: PathSequences, seed: int, index: int = 0) -> FieldSample:
    """Fields C^s (one per species, model order) and D with covariance Q_{alpha ^ beta}."""
    if paths.Qs.shape[1] != tree.r + 1:
        raise ValidationError("path sequences and tree depth disagree")
    cvar = _increments(paths.Qs)
    dvar = _increments(paths.Q)
    rng = stream(seed, "fields", index)
    C, Cp = _hierarchical(rng, tree.M, cvar, cvar.shape[0])
    D, Dp = _hierarchical(rng, tree.M, dvar[None, :], 1)
    return FieldSample(C, Cp, cvar[:, -1], D[0], Dp[0], float(dvar[-1]), seed)


def cascade_log_ch(tree: CascadeTree, fields: FieldSample, s: int) -> float:
    """log sum_alpha v_alpha ch C^s(alpha) (discarded leaves included in expectation)."""
    leaf = log_ch(fields.C[s])
    leaf += tree.log_v
    tail = tree.log_v_tail + log_ch(fields.C_parent[s]) + 0.5 * fields.C_last_var[s]
    return _lse2(leaf, tail) - tree.log_total


def cascade_log_exp(tree: CascadeTree, fields: FieldSample, t: float) -> float:
    """log sum_alpha v_alpha exp(t D(alpha))."""
    if t < 0:
        raise ValidationError("scale factor t must be >= 0")
    if t == 0:
        return 0.0
    leaf = t * fields.D
    leaf += tree.log_v
    tail = tree.log_v_tail + t * fields.D_parent + 0.5 * t * t * fields.D_last_var
    return _lse2(leaf, tail) - tree.log_total


# --- Monte Carlo drivers ----------------------------------------------------------

@dataclass(frozen=True)
class IdentityCheck:
    name: str
    mean: float
    se: float
    target: float
    samples: int

    @property
    def z(self) -> float:
        return (self.mean - self.target) / self.se if self.se > 0 else (0.0 if self.mean == self.target else np.inf)


def _summary(name, values, target):
    values = np.asarray(values)
    se = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else float("nan")
    return IdentityCheck(name, float(values.mean()), se, float(target), len(values))


def cascade_identities_mc(spec: ModelSpec, params: RsbParams, M, samples: int, seed: int,
                          t_values=(1.0, 2.0), tail_correction: bool = True,
                          quad: QuadratureConfig | None = None,
                          nested_M=None, leaf_cap: int = LEAF_CAP) -> dict:
    """Monte Carlo check of both cascade identities.

    Returns ``{"log_ch": {species: IdentityCheck}, "log_exp": {t: IdentityCheck}}``;
    targets are X^s_0 and (t^2/2) sum_l zeta_l (Q_{l+1} - Q_l).  When
    ``nested_M`` is given, the same samples truncated to ``nested_M`` are
    reported under ``"nested"`` (common random numbers for the M comparison),
    together with the per-sample values under ``"values"``.
    """
    ev = evaluate(spec, params, quad)
    paths = ev.paths
    dq = float(params.zeta @ np.diff(paths.Q))
    n_sp = spec.n_species
    t_values = tuple(float(t) for t in t_values)
    vals = np.zeros((samples, n_sp + len(t_values)))
    nested = np.zeros_like(vals) if nested_M is not None else None
    for k in range(samples):
        tree = sample_cascade(params.zeta, M, seed, k, tail_correction, leaf_cap)
        fields = sample_fields(tree, paths, seed, k)
        vals[k] = _identity_row(tree, fields, n_sp, t_values)
        if nested is not None:
            small = tree.truncated(nested_M)
            nested[k] = _identity_row(small, fields.truncated(small), n_sp, t_values)

    def pack(v):
        return {
            "log_ch": {s: _summary(f"log_ch[{s}]", v[:, i], ev.X0[i]) for i, s in enumerate(spec.species)},
            "log_exp": {t: _summary(f"log_exp[t={t:g}]", v[:, n_sp + j], 0.5 * t * t * dq)
                        for j, t in enumerate(t_values)},
        }

    out = pack(vals)
    out["values"] = vals
    if nested is not None:
        out["nested"] = pack(nested)
        out["nested_values"] = nested
    return out


@dataclass(frozen=True)
class TruncationBias:
    """Plain-truncation bias estimated against the compensated estimator on
    the same trees, at M and at a larger M2 (common random numbers)."""

    name: str
    bias_M: float
    se_M: float
    bias_M2: float
    se_M2: float

    @property
    def shrinks(self) -> bool:
        return abs(self.bias_M2) < abs(self.bias_M)


def truncation_bias(spec: ModelSpec, params: RsbParams, M, M2, samples: int, seed: int,
                    t_values=(1.0, 2.0), leaf_cap: int = 4 * LEAF_CAP) -> list[TruncationBias]:
    """Per-sample difference (plain - compensated) for every identity statistic."""
    paths = path_sequences(spec, params)
    n_sp = spec.n_species
    t_values = tuple(float(t) for t in t_values)
    diff = np.zeros((2, samples, n_sp + len(t_values)))
    for k in range(samples):
        big = sample_cascade(params.zeta, M2, seed, k, True, leaf_cap)
        fields = sample_fields(big, paths, seed, k)
        small = big.truncated(M)
        for i, (tree, fl) in enumerate(((small, fields.truncated(small)), (big, fields))):
            plain = replace(tree, tail_correction=False)
            diff[i, k] = np.subtract(_identity_row(plain, fl, n_sp, t_values), _identity_row(tree, fl, n_sp, t_values))
    names = [f"log_ch[{s}]" for s in spec.species] + [f"log_exp[t={t:g}]" for t in t_values]
    se = diff.std(axis=1, ddof=1) / np.sqrt(samples)
    mean = diff.mean(axis=1)
    return [TruncationBias(nm, float(mean[0, j]), float(se[0, j]), float(mean[1, j]), float(se[1, j]))
            for j, nm in enumerate(names)]


def _identity_row(tree, fields, n_sp, t_values):
    row = [cascade_log_ch(tree, fields, s) for s in range(n_sp)]
    row += [cascade_log_exp(tree, fields, t) for t in t_values]
    return row


# --- Guerra interpolation ----------------------------------------------------------

@dataclass(frozen=True)
class PhiEstimate:
    x: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    values: np.ndarray  # (samples, len(x)), common random numbers across x

    def paired_se(self, i: int, j: int) -> float:
        d = self.values[:, i] - self.values[:, j]
        return float(d.std(ddof=1) / np.sqrt(len(d)))


def _site_fields(rng, tree: CascadeTree, cvar_sites: np.ndarray):
    return _hierarchical(rng, tree.M, cvar_sites, cvar_sites.shape[0])


def interpolation_phi(spec: ModelSpec, N: int, params: RsbParams, x=(0.0, 0.25, 0.5, 0.75, 1.0),
                      samples: int = 1000, M=50, seed: int = 0, cap: int = 10**8,
                      tail_correction: bool = True, use_realized_lambda: bool = True) -> PhiEstimate:
    """Monte Carlo estimate of the interpolating free energy phi(x).

    Each sample draws disorder, a cascade and independent site fields once and
    reuses them for every x.  The sum over configurations is exact.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1):
        raise ValidationError("interpolation parameter must lie in [0, 1]")
    assign = assign_species(spec, N)
    eff = effective_spec(spec, assign, use_realized_lambda)
    paths = path_sequences(eff, params)
    Mt = _levels(M, params.r)
    n_leaves = int(np.prod(Mt)) + int(np.prod(Mt[:-1]))
    if 2 ** (N - 1) * n_leaves > cap and np.any((x > 0) & (x < 1)):
        raise ValidationError(f"interpolation needs {2 ** (N - 1) * n_leaves:.3g} terms, above the cap {cap:.3g}")
    cvar = _increments(paths.Qs)[assign.species_of]   # (N, r)
    dvar = _increments(paths.Q)
    S = configurations(N - 1)
    S = np.hstack([S, np.ones((S.shape[0], 1))])  # sigma_N = +1; the other half is -S
    sqN = np.sqrt(N)
    vals = np.zeros((samples, len(x)))
    for k in range(samples):
        disorder = sample_disorder(spec, assign, seed, k)
        tree = sample_cascade(params.zeta, Mt, seed, k, tail_correction)
        rng = stream(seed, "phi-fields", k)
        C, Cp = _site_fields(rng, tree, cvar)
        Dl, Dp = _hierarchical(rng, tree.M, dvar[None, :], 1)
        Dl, Dp = Dl[0].ravel(), Dp[0].ravel()
        Cl = C.reshape(N, -1)
        Cp = Cp.reshape(N, -1)
        log_w = np.concatenate([tree.log_v.ravel(), np.ravel(tree.log_v_tail)])
        H = None
        E = None
        for j, xj in enumerate(x):
            if xj == 0.0:
                leaf = tree.log_v.ravel() + log_ch(Cl).sum(axis=0)
                tail = np.ravel(tree.log_v_tail) + log_ch(Cp).sum(axis=0) + 0.5 * cvar[:, -1].sum()
                vals[k, j] = (N * LOG2 + _lse(np.concatenate([leaf, tail]))) / N
                continue
            if H is None:
                H = np.einsum("ki,ij,kj->k", S, disorder.g, S) / sqN
            if xj == 1.0:
                log_z = exact_log_partition(disorder)
                leaf = tree.log_v.ravel() + sqN * Dl
                tail = np.ravel(tree.log_v_tail) + sqN * Dp + 0.5 * N * dvar[-1]
                vals[k, j] = (log_z + _lse(np.concatenate([leaf, tail]))) / N
                continue
            if E is None:
                E = S @ np.hstack([Cl, Cp])
            a = np.sqrt(xj) * H
            b = log_w + np.sqrt(xj) * sqN * np.concatenate([Dl, Dp])
            b[Cl.shape[1]:] += 0.5 * (1 - xj) * cvar[:, -1].sum() + 0.5 * xj * N * dvar[-1]
            kk = np.sqrt(1 - xj)
            am, bm = a.max(), b.max()
            if kk * np.abs(E).max() < 600:
                total = np.exp(a - am) @ np.cosh(kk * E) @ np.exp(b - bm)
                log_sum = np.log(total)
            else:
                lc = np.logaddexp(kk * E, -kk * E) - LOG2
                log_sum = _lse((a - am)[:, None] + lc + (b - bm)[None, :])
            vals[k, j] = (LOG2 + am + bm + log_sum) / N
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / np.sqrt(samples)
    return PhiEstimate(x, mean, se, vals)


# --- overlap arrays -------------------------------------------------------------

def combined_sequence(spec: ModelSpec, params: RsbParams) -> np.ndarray:
    """q_l = sum_s lam_s q^s_l, a convenient default for the combined overlap levels."""
    return np.vstack([params.q_of(s) for s in spec.species]).T @ spec.lam


def sample_overlap_array(tree: CascadeTree, params: RsbParams, n: int, seed: int, *,
                         q_combined, lam, index: int = 0) -> OverlapSample:
    """Draw ``n`` leaves i.i.d. from the cascade weights and read off overlaps.

    R_{ll'} = q_{alpha^l ^ alpha^{l'}} and R^s_{ll'} = q^s_{alpha^l ^ alpha^{l'}};
    a draw landing on a discarded-mass pseudo-leaf becomes a fresh leaf under
    that parent.  Species rows follow ``params.species``.
    """
    q_combined = np.asarray(q_combined, dtype=float)
    if q_combined.shape != (tree.r + 1,) or np.any(np.diff(q_combined) <= 0):
        raise ValidationError("combined overlap sequence must be strictly increasing with r + 1 entries")
    rng = stream(seed, "replicas", index)
    paths = _draw_leaves(tree, n, rng)
    meet = _meet_levels(paths, tree.r)
    R = q_combined[meet]
    Rs = params.q[:, meet]
    return OverlapSample(Rs[None], R[None], np.ones(1), params.species, np.asarray(lam, dtype=float))


def _draw_leaves(tree: CascadeTree, n: int, rng) -> np.ndarray:
    leaf_p = tree.weights.ravel()
    tail_p = np.ravel(tree.tail_weights)
    p = np.concatenate([leaf_p, tail_p])
    cdf = np.cumsum(p)
    u = rng.random(n) * cdf[-1]
    picks = np.minimum(np.searchsorted(cdf, u, side="right"), len(p) - 1)
    paths = np.empty((n, tree.r), dtype=np.int64)
    n_leaf = leaf_p.size
    for i, k in enumerate(picks):
        if k < n_leaf:
            paths[i] = np.unravel_index(k, tree.M)
        else:
            parent = np.unravel_index(k - n_leaf, tree.M[:-1]) if tree.r > 1 else ()
            paths[i, :-1] = parent
            paths[i, -1] = -1 - i  # fresh leaf, distinct from every other draw
    return paths


def _meet_levels(paths: np.ndarray, r: int) -> np.ndarray:
    """alpha ^ beta for every pair of drawn paths (r on the diagonal)."""
    eq = paths[:, None, :] == paths[None, :, :]
    return np.cumprod(eq, axis=-1).sum(axis=-1)


def cascade_overlap_samples(spec: ModelSpec, params: RsbParams, n: int, draws: int, M, seed: int,
                            q_combined=None, tail_correction: bool = True) -> OverlapSample:
    """``draws`` independent trees, each contributing one array of ``n`` replicas."""
    if q_combined is None:
        q_combined = combined_sequence(spec, params)
    Rs, R = [], []
    for k in range(draws):
        tree = sample_cascade(params.zeta, M, seed, k, tail_correction)
        one = sample_overlap_array(tree, params, n, seed, q_combined=q_combined, lam=_lam_for(spec, params), index=k)
        Rs.append(one.R_species[0])
        R.append(one.R[0])
    return OverlapSample(np.array(Rs), np.array(R), np.ones(draws), params.species, _lam_for(spec, params))


def _lam_for(spec: ModelSpec, params: RsbParams) -> np.ndarray:
    return np.array([spec.lam[spec.species.index(s)] for s in params.species])


def overlap_law_distance(zeta, q_combined, target) -> float:
    """Kolmogorov distance between the cascade law of R_12 and the empirical law of ``target``.

    The cascade law puts mass zeta_l - zeta_{l-1} on q_l (zeta_{-1} = 0, zeta_r = 1).
    """
    zeta = np.concatenate([np.asarray(zeta, dtype=float), [1.0]])
    q_combined = np.asarray(q_combined, dtype=float)
    target = np.sort(np.ravel(target))
    grid = np.union1d(q_combined, target)
    cascade_cdf = np.array([zeta[np.searchsorted(q_combined, g, side="right") - 1]
                            if g >= q_combined[0] else 0.0 for g in grid])
    emp_cdf = np.searchsorted(target, grid, side="right") / len(target)
    emp_left = np.searchsorted(target, grid, side="left") / len(target)
    casc_left = np.concatenate([[0.0], cascade_cdf[:-1]])
    return float(max(np.max(np.abs(cascade_cdf - emp_cdf)), np.max(np.abs(casc_left - emp_left))))
