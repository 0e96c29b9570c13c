"""Check the recursion against cascade Monte Carlo and look at the overlap
structure the cascade produces.

    python3 demos/cascade_checks.py
"""
import numpy as np

from mspk.cascades import cascade_identities_mc, cascade_overlap_samples, truncation_bias
from mspk.io import load_model, load_params
from mspk.replica_analysis import fit_synchronization, ultrametricity_violation

spec = load_model("demos/inputs/two_species.json")
params = load_params("demos/inputs/two_species_params.json")

out = cascade_identities_mc(spec, params, M=60, samples=3000, seed=0)
print("identity                 MC mean      SE         recursion")
for chk in list(out["log_ch"].values()) + list(out["log_exp"].values()):
    print(f"{chk.name:24s} {chk.mean:.6f}  {chk.se:.6f}   {chk.target:.6f}")

print("\nbias of plain truncation (compensated minus plain, same trees):")
for b in truncation_bias(spec, params, 40, 80, 200, seed=1):
    print(f"{b.name:24s} M=40: {b.bias_M:+.4f}   M=80: {b.bias_M2:+.4f}")

sample = cascade_overlap_samples(spec, params, n=4, draws=2000, M=60, seed=2)
print("\nultrametricity violation:", ultrametricity_violation(sample).max_violation)
values, counts = np.unique(np.round(sample.R[:, 0, 1], 12), return_counts=True)
print("law of R_12:", {float(v): round(float(c / counts.sum()), 3) for v, c in zip(values, counts)})
for label, fit in fit_synchronization(sample).items():
    print(f"species {label}: knots {fit.knots.round(3)} -> {fit.fitted.round(3)}, "
          f"residual {fit.max_residual:.1e}, slope {fit.lipschitz:.3f} <= {fit.bound:.3f}")
