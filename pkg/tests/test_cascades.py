import numpy as np
import pytest

from mspk.cascades import (
    FieldSample,
    cascade_identities_mc,
    cascade_log_ch,
    cascade_log_exp,
    combined_sequence,
    interpolation_phi,
    overlap_law_distance,
    sample_cascade,
    sample_fields,
    sample_overlap_array,
    truncation_bias,
)
from mspk.model import ValidationError, validate_model
from mspk.parisi import LOG2, PathSequences, make_params, path_sequences
from mspk.replica_analysis import fit_synchronization, ultrametricity_violation

from conftest import mean_se


def stick_breaking_pair_mass(zeta, draws, K, rng):
    """E sum V_k^2 for size-biased Poisson-Dirichlet(zeta, 0) weights via stick breaking."""
    k = np.arange(1, K + 1)
    W = rng.beta(1 - zeta, k * zeta, size=(draws, K))
    left = np.cumprod(np.hstack([np.ones((draws, 1)), 1 - W[:, :-1]]), axis=1)
    V = W * left
    return (V ** 2).sum(axis=1)


# --- trees ---------------------------------------------------------------

def test_truncation_must_be_at_least_two():
    with pytest.raises(ValidationError):
        sample_cascade([0.5], 1, seed=0)


def test_tree_invariants():
    tree = sample_cascade([0.3, 0.7], (20, 15), seed=1)
    v = tree.weights
    assert v.shape == (20, 15) and np.all(v > 0)
    assert abs(v.sum() + tree.tail_weights.sum() - 1) <= 1e-12
    for la in tree.log_atoms:
        assert np.all(np.diff(la, axis=-1) < 0)


def test_plain_truncation_normalized():
    tree = sample_cascade([0.3, 0.7], 10, seed=1, tail_correction=False)
    assert abs(tree.weights.sum() - 1) <= 1e-12 and np.all(tree.tail_weights == 0)


def test_single_level_sorted_and_deterministic():
    a = sample_cascade([0.5], 50, seed=4, index=2)
    b = sample_cascade([0.5], 50, seed=4, index=2)
    assert np.all(np.diff(a.weights) < 0)
    assert np.array_equal(a.weights, b.weights)


def test_pair_mass_against_stick_breaking():
    zeta = 0.5
    cascade = [np.sum(sample_cascade([zeta], 1000, seed=11, index=k).weights ** 2) for k in range(3000)]
    oracle = stick_breaking_pair_mass(zeta, 3000, 4000, np.random.default_rng(5))
    m1, s1 = mean_se(cascade)
    m2, s2 = mean_se(oracle)
    assert abs(m1 - (1 - zeta)) <= 3 * s1
    assert abs(m2 - (1 - zeta)) <= 3 * s2
    assert abs(m1 - m2) <= 3 * np.hypot(s1, s2)


def test_truncated_view_shares_atoms():
    big = sample_cascade([0.4, 0.8], 30, seed=2)
    small = big.truncated(10)
    assert np.array_equal(small.log_atoms[1], big.log_atoms[1][:10, :10])
    with pytest.raises(ValidationError):
        small.truncated(20)


def test_leaf_cap():
    with pytest.raises(ValidationError, match="leaf cap"):
        sample_cascade([0.4, 0.8], 400, seed=0)


def test_discarded_mass_decreases_with_M():
    small = sample_cascade([0.8], 50, seed=3).discarded_mass()[0]
    big = sample_cascade([0.8], 800, seed=3).discarded_mass()[0]
    assert big < small


# --- fields -------------------------------------------------------------------

def _paths(Qs_rows, Q):
    return PathSequences(np.asarray(Q, float), np.atleast_2d(np.asarray(Qs_rows, float)))


def test_zero_paths_zero_fields():
    tree = sample_cascade([0.4, 0.8], 5, seed=0)
    f = sample_fields(tree, _paths([[0, 0, 0]], [0, 0, 0]), seed=0)
    assert np.all(f.C == 0) and np.all(f.D == 0)


def test_negative_increment_rejected():
    tree = sample_cascade([0.4, 0.8], 5, seed=0)
    with pytest.raises(ValidationError):
        sample_fields(tree, _paths([[0, 1, 0.5]], [0, 1, 2]), seed=0)


def test_shared_prefix_gives_equal_fields():
    tree = sample_cascade([0.4, 0.8], 6, seed=0)
    f = sample_fields(tree, _paths([[0, 0.7, 0.7]], [0, 0.2, 0.2]), seed=3)
    assert np.all(f.C[0] == f.C[0][:, :1])
    assert np.all(f.D == f.D[:, :1])


def test_field_covariances():
    tree = sample_cascade([0.4, 0.8], 3, seed=0)
    paths = _paths([[0, 0.6, 1.5]], [0, 0.3, 0.9])
    draws = np.array([sample_fields(tree, paths, seed=9, index=k).C[0] for k in range(10_000)])
    same = draws[:, 0, 0]
    other = draws[:, 1, 0]   # alpha ^ beta = 0 with leaf (0, 0)
    sibling = draws[:, 0, 1]  # alpha ^ beta = 1
    m, s = mean_se(same ** 2)
    assert abs(m - 1.5) <= 3 * s
    m, s = mean_se(same * other)
    assert abs(m) <= 3 * s
    m, s = mean_se(same * sibling)
    assert abs(m - 0.6) <= 3 * s


# --- identities -------------------------------------------------------------

def test_zero_fields_give_zero():
    tree = sample_cascade([0.4, 0.8], 8, seed=0)
    f = sample_fields(tree, _paths([[0, 0, 0]], [0, 0, 0]), seed=0)
    assert cascade_log_ch(tree, f, 0) == 0.0
    assert cascade_log_exp(tree, f, 1.5) == 0.0


def test_t_zero_is_zero(ref_spec, ref_params):
    tree = sample_cascade(ref_params.zeta, 8, seed=0)
    f = sample_fields(tree, path_sequences(ref_spec, ref_params), seed=0)
    assert cascade_log_exp(tree, f, 0.0) == 0.0
    with pytest.raises(ValidationError):
        cascade_log_exp(tree, f, -1.0)


def test_zero_model_every_sample(zero_spec, ref_params):
    paths = path_sequences(zero_spec, ref_params)
    for k in range(5):
        tree = sample_cascade(ref_params.zeta, 6, seed=1, index=k)
        f = sample_fields(tree, paths, seed=1, index=k)
        assert cascade_log_ch(tree, f, 0) == 0.0 and cascade_log_exp(tree, f, 2.0) == 0.0


def test_identities_small_budget(ref_spec, ref_params):
    out = cascade_identities_mc(ref_spec, ref_params, 40, 1500, seed=21)
    for chk in list(out["log_ch"].values()) + list(out["log_exp"].values()):
        assert abs(chk.z) <= 3, chk


def test_truncation_bias_shrinks(ref_spec, ref_params):
    for b in truncation_bias(ref_spec, ref_params, 20, 40, 300, seed=2):
        assert b.bias_M < 0 and b.shrinks, b


# --- interpolation ------------------------------------------------------------

def test_phi_zero_model(zero_spec, ref_params):
    est = interpolation_phi(zero_spec, 6, ref_params, samples=3, M=5, seed=0)
    assert np.allclose(est.mean, LOG2, atol=1e-14, rtol=0)


def test_phi_endpoints_small(ref_spec, ref_params):
    from mspk.model import assign_species, effective_spec, free_energy_mc
    from mspk.parisi import evaluate
    N, samples = 6, 400
    est = interpolation_phi(ref_spec, N, ref_params, x=(0.0, 0.5, 1.0), samples=samples, M=12, seed=4)
    ev = evaluate(effective_spec(ref_spec, assign_species(ref_spec, N)), ref_params)
    assert abs(est.mean[0] - (LOG2 + ref_spec.lam @ ev.X0)) <= 3 * est.se[0]
    fe = free_energy_mc(ref_spec, N, samples, seed=4)
    d = est.values[:, 2] - fe.values
    m, s = mean_se(d)
    assert abs(m - ev.correction) <= 3 * s
    assert est.mean[1] - est.mean[0] <= 3 * est.paired_se(0, 1)
    assert est.mean[2] - est.mean[1] <= 3 * est.paired_se(1, 2)


def test_phi_resource_cap(ref_spec, ref_params):
    with pytest.raises(ValidationError, match="cap"):
        interpolation_phi(ref_spec, 12, ref_params, samples=2, M=50, seed=0, cap=10**6)


# --- overlap arrays -----------------------------------------------------------

def test_pair_overlap_law_single_level():
    zeta = 0.5
    params = make_params([zeta], {"a": [0, 1]})
    hits = []
    for k in range(4000):
        tree = sample_cascade([zeta], 200, seed=6, index=k)
        smp = sample_overlap_array(tree, params, 2, seed=6, q_combined=[0, 1], lam=[1.0], index=k)
        off = smp.R[0, 0, 1]
        assert off in (0.0, 1.0)
        hits.append(off == 1.0)
    m, s = mean_se(hits)
    assert abs(m - (1 - zeta)) <= 3 * s


def test_overlap_arrays_structure(ref_spec, ref_params):
    q = combined_sequence(ref_spec, ref_params)
    tree = sample_cascade(ref_params.zeta, 20, seed=1)
    smp = sample_overlap_array(tree, ref_params, 6, seed=1, q_combined=q, lam=ref_spec.lam)
    assert np.all(np.diag(smp.R[0]) == q[-1])
    assert ultrametricity_violation(smp).max_violation == 0.0
    fits = fit_synchronization(smp)
    assert all(f.max_residual <= 1e-12 for f in fits.values())


def test_combined_sequence_must_increase(ref_params):
    tree = sample_cascade(ref_params.zeta, 5, seed=1)
    with pytest.raises(ValidationError):
        sample_overlap_array(tree, ref_params, 3, seed=1, q_combined=[0, 0, 1], lam=[0.5, 0.5])


def test_overlap_law_distance():
    assert overlap_law_distance([0.4, 0.8], [0, 0.4, 1], [0] * 4 + [0.4] * 4 + [1] * 2) == pytest.approx(0.0)
    assert overlap_law_distance([0.5], [0, 1], [1.0] * 10) == pytest.approx(0.5)
