import itertools

import numpy as np
import pytest

from mspk.cascades import cascade_overlap_samples
from mspk.model import ValidationError, all_energies, assign_species, configurations, sample_disorder, validate_model
from mspk.replica_analysis import (
    OverlapSample,
    PerturbationSpec,
    concat_samples,
    default_weight_grid,
    fit_isotonic,
    fit_synchronization,
    gg_delta,
    gibbs_probabilities,
    gibbs_replica_samples,
    make_test_function,
    pava,
    perturbation_hamiltonian,
    ultrametricity_violation,
    weighted_overlap,
)
from mspk.verify import adversarial_sample, synthetic_sync_fit

from conftest import mean_se


def two_species_sample(Ra, Rb, lam=(0.5, 0.5)):
    n = 2
    Rs = np.ones((1, 2, n, n))
    Rs[0, 0, 0, 1] = Rs[0, 0, 1, 0] = Ra
    Rs[0, 1, 0, 1] = Rs[0, 1, 1, 0] = Rb
    lam = np.asarray(lam)
    R = np.einsum("s,dsij->dij", lam, Rs)
    return OverlapSample(Rs, R, np.ones(1), ("a", "b"), lam)


# --- weighted overlaps -------------------------------------------------------

def test_weighted_overlap_examples():
    smp = two_species_sample(0.4, -0.2)
    assert weighted_overlap(smp, [1, 1], 0, 1)[0] == pytest.approx(smp.R[0, 0, 1])
    assert weighted_overlap(smp, [0, 0], 0, 1)[0] == 0.0
    assert weighted_overlap(smp, [1, 0], 0, 1)[0] == pytest.approx(0.2)


def test_weight_validation():
    smp = two_species_sample(0.4, 0.1)
    with pytest.raises(ValidationError):
        weighted_overlap(smp, [1.2, 0], 0, 1)
    with pytest.raises(ValidationError):
        weighted_overlap(smp, [1, 0, 0], 0, 1)


def test_default_weight_grid():
    g = default_weight_grid(2)
    assert g.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1], [0.5, 0.5]]


def test_sample_shape_validation():
    with pytest.raises(ValidationError):
        OverlapSample(np.ones((2, 1, 3, 3)), np.ones((2, 3, 3)), np.ones(3), ("a",), np.ones(1))


# --- perturbation -------------------------------------------------------------

def test_perturbation_spec_validation():
    with pytest.raises(ValidationError, match="gamma"):
        PerturbationSpec(default_weight_grid(1), gamma=0.25)
    with pytest.raises(ValidationError, match=r"\[1, 2\]"):
        PerturbationSpec(default_weight_grid(1), x=np.zeros((3, 2)))
    assert PerturbationSpec([[1.0]]).s_N(16) == pytest.approx(16 ** 0.3)


def test_degenerate_perturbation_vanishes(ref_spec):
    assign = assign_species(ref_spec, 6)
    pspec = PerturbationSpec(default_weight_grid(2), x=np.zeros((5, 2)), allow_degenerate=True)
    assert np.all(perturbation_hamiltonian(pspec, assign, configurations(6), seed=0) == 0)


def test_perturbation_covariance(ref_spec):
    N = 12
    assign = assign_species(ref_spec, N)
    w = np.array([1.0, 0.5])
    pspec = PerturbationSpec([w], p_max=2)
    rng = np.random.default_rng(0)
    s1, s2 = rng.choice([-1.0, 1.0], (2, N))
    Rw = sum(ref_spec.lam[s] * w[s] * (s1[ix] @ s2[ix]) / len(ix) for s, ix in enumerate(assign.index_sets))
    parts = np.array([perturbation_hamiltonian(pspec, assign, [s1, s2], seed=3, draw=d, components=True)[0]
                      for d in range(10_000)])
    for p in (1, 2):
        emp = np.mean(parts[:, p - 1, 0] * parts[:, p - 1, 1])
        assert abs(emp - Rw ** p) <= 0.05 * abs(Rw ** p) + 3 * np.std(parts[:, p - 1, 0] * parts[:, p - 1, 1]) / 100


def test_tensor_cap(ref_spec):
    assign = assign_species(ref_spec, 40)
    pspec = PerturbationSpec([[1.0, 1.0]], p_max=3, tensor_cap=1000)
    with pytest.raises(ValidationError, match="cap"):
        perturbation_hamiltonian(pspec, assign, np.ones(40), seed=0)


# --- Gibbs sampling -----------------------------------------------------------

def test_gibbs_two_spins_against_hand_formula(ref_spec):
    assign = assign_species(ref_spec, 2)
    d = sample_disorder(ref_spec, assign, seed=7)
    g = d.g
    S = configurations(2)
    E = np.array([(g[0, 0] + g[1, 1] + (g[0, 1] + g[1, 0]) * s[0] * s[1]) / np.sqrt(2) for s in S])
    hand = np.exp(E) / np.exp(E).sum()
    assert np.max(np.abs(gibbs_probabilities(all_energies(d)) - hand)) <= 1e-12


def test_gibbs_zero_model_uncorrelated(zero_spec):
    smp = gibbs_replica_samples(zero_spec, 8, 2, 2000, seed=1)
    m, s = mean_se(smp.R[:, 0, 1])
    assert abs(m) <= 3 * s
    assert np.all(smp.R[:, 0, 0] == 1)


def test_gibbs_deterministic_and_symmetric(ref_spec):
    a = gibbs_replica_samples(ref_spec, 6, 3, 20, seed=2)
    b = gibbs_replica_samples(ref_spec, 6, 3, 20, seed=2)
    assert np.array_equal(a.R_species, b.R_species)
    assert a.is_symmetric()


def test_gibbs_cap(ref_spec):
    with pytest.raises(ValidationError, match="cap"):
        gibbs_replica_samples(ref_spec, 22, 2, 1, seed=0)


# --- GG discrepancy ----------------------------------------------------------

def test_constant_test_function_gives_zero(ref_spec, ref_params):
    smp = cascade_overlap_samples(ref_spec, ref_params, 4, 300, 30, seed=1)
    for n in (1, 2, 3):
        res = gg_delta(smp, make_test_function("const"), n, [1, 1], 2)
        assert res.value <= 1e-12


def test_gg_relabelling_invariance(ref_spec, ref_params):
    smp = cascade_overlap_samples(ref_spec, ref_params, 4, 300, 30, seed=2)
    f = make_test_function("monomial")
    base = gg_delta(smp, f, 3, [1, 0.5], 2)
    for perm in itertools.permutations(range(4)):
        other = gg_delta(smp.permute_replicas(perm), f, 3, [1, 0.5], 2)
        assert abs(other.signed - base.signed) <= 1e-12


def test_gg_insufficient_replicas(ref_spec, ref_params):
    smp = cascade_overlap_samples(ref_spec, ref_params, 3, 10, 10, seed=0)
    with pytest.raises(ValidationError, match="replicas"):
        gg_delta(smp, make_test_function("const"), 3, [1, 1], 1)


def test_gg_detects_violation():
    # R12 = 1 always and R14 = 1 on half the draws, other pairs 0: E<f R14> = 1/2 but the mixture predicts 1
    rng = np.random.default_rng(0)
    D = 400
    R = np.tile(np.eye(4), (D, 1, 1))
    flips = rng.random(D) < 0.5
    R[:, 0, 1] = R[:, 1, 0] = 1.0
    R[flips, 0, 3] = R[flips, 3, 0] = 1.0
    smp = OverlapSample(R[:, None], R, np.ones(D), ("a",), np.ones(1))
    f = make_test_function("monomial", entries=[(0, 1)])
    res = gg_delta(smp, f, 2, [1.0], 1, symmetrize=False)
    assert res.within > 3


def test_gg_cascade_small(ref_spec, ref_params):
    smp = cascade_overlap_samples(ref_spec, ref_params, 4, 3000, 60, seed=4)
    for name in ("indicator", "monomial"):
        f = make_test_function(name, sample=smp)
        for w in ([1, 1], [0, 1], [0.5, 0.5]):
            res = gg_delta(smp, f, 3, w, 1)
            assert res.within <= 4, res


def test_zero_test_function_has_zero_statistic_and_se():
    rng = np.random.default_rng(1)
    D = 500
    R = np.tile(np.eye(2), (D, 1, 1))
    v = rng.uniform(-1, 1, D)
    R[:, 0, 1] = R[:, 1, 0] = v
    smp = OverlapSample(R[:, None], R, np.ones(D), ("a",), np.ones(1))
    res = gg_delta(smp, make_test_function("const", value=0.0), 1, [1.0], 1, symmetrize=False)
    assert res.value == 0.0 and res.within == 0.0


# --- ultrametricity ----------------------------------------------------------

def test_adversarial_violation():
    assert ultrametricity_violation(adversarial_sample()).max_violation == pytest.approx(0.8, abs=1e-12)


def test_constant_arrays_are_ultrametric():
    R = np.full((3, 5, 5), 0.3)
    smp = OverlapSample(R[:, None], R, np.ones(3), ("a",), np.ones(1))
    rep = ultrametricity_violation(smp)
    assert rep.max_violation == 0.0 and rep.fraction == 0.0


# --- PAVA and synchronization ----------------------------------------------------

def test_pava_examples():
    assert pava([1, 3, 2, 4]).tolist() == [1, 2.5, 2.5, 4]
    assert pava([3, 2, 1], [1, 1, 2]).tolist() == pytest.approx([1.75] * 3)
    assert pava([1, 2, 3]).tolist() == [1, 2, 3]


def test_pava_against_least_squares_brute_force():
    # isotonic regression of 4 points: the best of all block partitions
    y = np.array([2.0, -1.0, 0.5, 0.2])
    best = np.inf
    for cuts in itertools.product([0, 1], repeat=3):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [4]
        fit = np.concatenate([np.full(b - a, y[a:b].mean()) for a, b in zip(bounds[:-1], bounds[1:])])
        if np.all(np.diff(fit) >= -1e-15):
            best = min(best, np.sum((y - fit) ** 2))
    assert np.sum((y - pava(y)) ** 2) == pytest.approx(best, abs=1e-14)


def test_isotonic_pools_ties():
    fit = fit_isotonic([0.1, 0.1, 0.5], [0.0, 1.0, 2.0])
    assert fit.knots.tolist() == [0.1, 0.5] and fit.fitted.tolist() == [0.5, 2.0]
    assert fit.max_residual == pytest.approx(0.5)
    assert fit(0.3) == 0.5 and fit(0.9) == 2.0


@pytest.mark.parametrize("lam_s", [0.25, 0.5, 0.75])
def test_synthetic_lipschitz(lam_s):
    fit = synthetic_sync_fit(lam_s)
    assert fit.max_residual <= 1e-12
    assert fit.lipschitz <= 1 / lam_s + 1e-9


def test_concat_and_sync_on_cascade(ref_spec, ref_params):
    parts = [cascade_overlap_samples(ref_spec, ref_params, 3, 100, 20, seed=s) for s in (0, 1)]
    smp = concat_samples(parts)
    assert smp.n_draws == 200
    fits = fit_synchronization(smp)
    for label, fit in fits.items():
        assert fit.max_residual <= 1e-12
        assert np.allclose(fit.fitted, ref_params.q_of(label), atol=1e-12)


def test_gibbs_sync_diagnostic(ref_spec):
    # finite-N Gibbs arrays are not exactly synchronized; report the residual only
    smp = gibbs_replica_samples(ref_spec, 12, 3, 100, seed=5)
    fits = fit_synchronization(smp)
    for fit in fits.values():
        print(f"gibbs N=12 sync residual {fit.species}: {fit.max_residual:.4f}, lipschitz {fit.lipschitz:.3f}")
        assert np.all(np.diff(fit.fitted) >= 0)


def test_validation_of_function_family():
    with pytest.raises(ValidationError):
        make_test_function("indicator")
    with pytest.raises(ValidationError):
        make_test_function("monomial", entries=[(1, 1)])
    with pytest.raises(ValidationError):
        make_test_function("cubic")
