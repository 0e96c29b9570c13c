"""Exact Gibbs replicas of a small two-species system with and without the
perturbation Hamiltonian, and the Ghirlanda-Guerra statistic on them.

Finite systems only approximate the identities; the numbers show the size
of the discrepancy, not a pass/fail verdict.

    python3 demos/gibbs_overlaps.py
"""
from mspk.io import load_model
from mspk.replica_analysis import (
    PerturbationSpec,
    default_weight_grid,
    fit_synchronization,
    gg_delta,
    gibbs_replica_samples,
    make_test_function,
)

spec = load_model("demos/inputs/two_species.json")
N, draws = 12, 300

for label, pspec in (("plain", None), ("perturbed", PerturbationSpec(default_weight_grid(spec.n_species)))):
    sample = gibbs_replica_samples(spec, N, n=4, draws=draws, seed=3, pspec=pspec)
    print(f"{label}: mean R_12 = {sample.R[:, 0, 1].mean():.4f}")
    f = make_test_function("indicator", sample=sample)
    for w in ((1.0, 1.0), (1.0, 0.0)):
        res = gg_delta(sample, f, 3, w, 1)
        print(f"  GG w={w}: |Delta| = {res.value:.4f} +- {res.se:.4f}")
    for s, fit in fit_synchronization(sample).items():
        print(f"  sync {s}: max residual {fit.max_residual:.3f}")
