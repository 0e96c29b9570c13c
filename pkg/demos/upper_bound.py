"""Minimise the Parisi functional for a two-species model and compare the
result with exact-enumeration free energies at growing N.

    python3 demos/upper_bound.py
"""
import numpy as np

from mspk.io import load_model
from mspk.model import free_energy_mc
from mspk.optimizer import OptimizerConfig, infimum_over_levels

spec = load_model("demos/inputs/two_species.json")
best, per_level = infimum_over_levels(spec, OptimizerConfig(r_max=2, seed=1))

for res in per_level:
    flag = "" if res.converged else "  (evaluation budget reached)"
    print(f"r={res.params.r}: P = {res.value:.8f}{flag}")
print("best zeta:", np.round(best.params.zeta, 4))
for s in spec.species:
    print(f"best q^{s}:", np.round(best.params.q_of(s), 4))

print("\n N   F_N estimate        gap to best P")
for N in (6, 10, 14):
    est = free_energy_mc(spec, N, 200, seed=N)
    print(f"{N:2d}   {est.mean:.5f} +- {est.se:.5f}   {best.value - est.mean:.5f}")
