"""Acceptance battery: ten criteria at full budget.

Each test records one PASS/FAIL line (printed immediately and repeated in
the terminal summary).  Run alone with ``pytest tests/test_acceptance.py -v``;
the whole module takes roughly 16 minutes on one core.
"""
import time

import numpy as np
import pytest

from mspk.cascades import cascade_identities_mc, cascade_overlap_samples, truncation_bias
from mspk.model import free_energy_mc, validate_model
from mspk.optimizer import OptimizerConfig, infimum_over_levels
from mspk.parisi import LOG2, QuadratureConfig, make_params, parisi_functional
from mspk.replica_analysis import ultrametricity_violation
from mspk.verify import adversarial_sample, all_passed, covariance_suite, gg_battery, interpolation_suite, sync_suite

pytestmark = pytest.mark.slow

REF_SPEC = validate_model({"species": ["a", "b"], "lambda": [0.5, 0.5], "delta_sq": [[1.0, 0.5], [0.5, 1.0]]})
REF_PARAMS = make_params([0.4, 0.8], {"a": [0.0, 0.3, 1.0], "b": [0.0, 0.5, 1.0]})
WEAK_SPEC = validate_model({"species": ["a"], "lambda": [1.0], "delta_sq": [[0.09]]})
# log 2 + (1/2) sum_{s,t} delta_sq lam lam for Delta^2 = [[0.09]]
HIGH_TEMPERATURE_VALUE = LOG2 + 0.045
SEED = 20240601


def _record(report, k, passed, detail):
    line = f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    report.append(line)
    return passed


@pytest.fixture(scope="module")
def identities():
    t0 = time.time()
    out = cascade_identities_mc(REF_SPEC, REF_PARAMS, 200, 100_000, SEED)
    bias = truncation_bias(REF_SPEC, REF_PARAMS, 200, 400, 1000, SEED + 1)
    return out, bias, time.time() - t0


@pytest.fixture(scope="module")
def overlap_sample():
    return cascade_overlap_samples(REF_SPEC, REF_PARAMS, 4, 100_000, 100, SEED + 5)


@pytest.fixture(scope="module")
def optimum():
    best, per_level = infimum_over_levels(REF_SPEC, OptimizerConfig(seed=SEED))
    return best, per_level


def test_criterion_01_cascade_log_ch(identities, acceptance_report):
    out, bias, secs = identities
    checks = list(out["log_ch"].values())
    ch_bias = [b for b in bias if b.name.startswith("log_ch")]
    ok = all(abs(c.z) <= 3 for c in checks) and all(b.shrinks for b in ch_bias)
    detail = "; ".join(f"{c.name} mean={c.mean:.6f} target={c.target:.6f} z={c.z:+.2f}" for c in checks)
    detail += "; plain-truncation bias M=200->400: " + ", ".join(
        f"{b.bias_M:+.4f}->{b.bias_M2:+.4f}" for b in ch_bias) + f"; {secs:.0f}s"
    assert _record(acceptance_report, 1, ok, detail)


def test_criterion_02_cascade_log_exp(identities, acceptance_report):
    out, bias, _ = identities
    checks = list(out["log_exp"].values())
    ex_bias = [b for b in bias if b.name.startswith("log_exp")]
    ok = all(abs(c.z) <= 3 for c in checks) and all(b.shrinks for b in ex_bias)
    detail = "; ".join(f"{c.name} mean={c.mean:.6f} target={c.target:.6f} z={c.z:+.2f}" for c in checks)
    detail += "; plain-truncation bias M=200->400: " + ", ".join(
        f"{b.bias_M:+.4f}->{b.bias_M2:+.4f}" for b in ex_bias)
    assert _record(acceptance_report, 2, ok, detail)


def test_criterion_03_upper_bound(optimum, acceptance_report):
    best, _ = optimum
    P = best.value
    gaps = []
    ok = True
    for N in (8, 12, 16):
        est = free_energy_mc(REF_SPEC, N, 500, SEED + N)
        ok &= est.mean <= P + 3 * est.se
        gaps.append((N, P - est.mean, est.se))
    for (_, g1, s1), (_, g2, s2) in zip(gaps, gaps[1:]):
        ok &= g2 <= g1 + 3 * np.hypot(s1, s2)
    detail = f"best P={P:.6f}; " + ", ".join(f"N={N} gap={g:.4f}+-{s:.4f}" for N, g, s in gaps)
    assert _record(acceptance_report, 3, ok, detail)


def test_criterion_04_interpolation(acceptance_report):
    checks = interpolation_suite(REF_SPEC, REF_PARAMS, N=10, samples=10_000, M=50, seed=SEED + 3)
    asserted = [c for c in checks if c.passed is not None]
    ok = all_passed(asserted) and len(asserted) == 12
    est = [c for c in checks if c.name.startswith("phi_estimate")]
    detail = "phi=" + ", ".join(f"{c.value:.5f}+-{c.se:.5f}" for c in est)
    detail += "; " + "; ".join(f"{c.name} {c.value:.5f} vs {c.target:.5f} (3SE={c.tolerance:.5f})"
                              for c in checks if c.name in ("phi(0)", "phi(1)"))
    failed = [c.name for c in asserted if not c.passed]
    if failed:
        detail += f"; failed: {failed}"
    assert _record(acceptance_report, 4, ok, detail)


def test_criterion_05_gg_identities(overlap_sample, acceptance_report):
    checks = gg_battery(overlap_sample, n=3, ps=(1, 2), ws=[(1.0, 1.0), (1.0, 0.0), (0.5, 0.5)])
    ok = all_passed(checks) and len(checks) == 18
    worst = max(checks, key=lambda c: c.value / c.se if c.se > 0 else 0.0)
    detail = (f"{sum(c.passed for c in checks)}/{len(checks)} within 3 SE; worst {worst.name} "
              f"|Delta|={worst.value:.2e} SE={worst.se:.2e}")
    assert _record(acceptance_report, 5, ok, detail)


def test_criterion_06_ultrametricity(overlap_sample, acceptance_report):
    cascade = ultrametricity_violation(overlap_sample).max_violation
    adv = ultrametricity_violation(adversarial_sample()).max_violation
    ok = cascade == 0.0 and abs(adv - 0.8) <= 1e-12
    assert _record(acceptance_report, 6, ok, f"cascade violation={cascade:g}; adversarial={adv:.12f}")


def test_criterion_07_synchronization(acceptance_report):
    checks = sync_suite(REF_SPEC, REF_PARAMS, draws=20_000, n=4, M=100, seed=SEED + 7)
    ok = all_passed(checks)
    detail = "; ".join(f"{c.name}={c.value:.3g}" for c in checks if c.name.startswith(("sync", "ultra")))
    assert _record(acceptance_report, 7, ok, detail)


def test_criterion_08_quadrature(acceptance_report):
    rng = np.random.default_rng(SEED + 8)
    nested = QuadratureConfig(mode="nested")
    worst = 0.0
    for _ in range(50):
        lam = rng.uniform(0.1, 1.0, 2)
        A = rng.uniform(0.0, 1.5, (2, 2))
        spec = validate_model({"species": ["a", "b"], "lambda": (lam / lam.sum()).tolist(),
                               "delta_sq": ((A + A.T) / 2).tolist()})
        r = int(rng.integers(1, 4))
        zeta = np.sort(rng.uniform(0.02, 0.98, r))
        q = {s: [0.0, *np.sort(rng.uniform(0, 1, r - 1)), 1.0] for s in ("a", "b")}
        p = make_params(zeta, q)
        worst = max(worst, abs(parisi_functional(spec, p) - parisi_functional(spec, p, nested)))
    annealed = make_params([1 - 1e-8], {"a": [0.0, 1.0], "b": [0.0, 1.0]})
    ann_err = abs(parisi_functional(REF_SPEC, annealed) - (LOG2 + 0.5 * REF_SPEC.mean_variance()))
    ok = worst <= 1e-6 and ann_err <= 1e-6
    assert _record(acceptance_report, 8, ok, f"max grid-nested gap={worst:.2e}; annealed error={ann_err:.2e}")


def test_criterion_09_single_species(acceptance_report):
    best, _ = infimum_over_levels(WEAK_SPEC, OptimizerConfig(seed=SEED))
    trend = {N: free_energy_mc(WEAK_SPEC, N, 500, SEED + 100 + N) for N in (12, 16, 20)}
    F20 = trend[20]
    ok = abs(best.value - F20.mean) <= 0.01
    # the finite-N estimates approach the high-temperature value from below
    ok &= all(trend[N].mean <= HIGH_TEMPERATURE_VALUE + 3 * trend[N].se for N in trend)
    ok &= trend[20].mean >= trend[12].mean - 3 * np.hypot(trend[12].se, trend[20].se)
    ok &= abs(best.value - HIGH_TEMPERATURE_VALUE) <= 1e-6
    detail = (f"inf P={best.value:.7f}; F_N=" + ", ".join(f"{N}:{e.mean:.5f}+-{e.se:.5f}" for N, e in trend.items())
              + f"; |inf P - F_20|={abs(best.value - F20.mean):.4f}; high-temperature value {HIGH_TEMPERATURE_VALUE:.7f}")
    assert _record(acceptance_report, 9, ok, detail)


def test_criterion_10_covariance(acceptance_report):
    checks = covariance_suite(REF_SPEC, N=50, draws=10_000, pairs=20, seed=SEED + 10, cavity_N=200)
    ok = all_passed(checks)
    detail = "; ".join(f"{c.name}={c.value:.4f} (tol {c.tolerance:.3f})" for c in checks)
    assert _record(acceptance_report, 10, ok, detail)
