"""Command-line entry point.

Every subcommand writes its outputs plus a ``manifest.json`` listing inputs,
resolved configuration, seed and SHA-256 digests of the outputs into
``--out-dir``.  Exit codes: 0 success, 1 verification failure, 2 input error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .io import RunManifest, format_float, load_model, load_params, read_overlaps, write_json, write_overlaps
from .model import ValidationError, free_energy_mc
from .optimizer import OptimizerConfig, infimum_over_levels
from .parisi import QuadratureConfig, evaluate
from .replica_analysis import PerturbationSpec, default_weight_grid, fit_synchronization, gg_delta, \
    gibbs_replica_samples, make_test_function
from .cascades import cascade_overlap_samples
from .verify import SUITES, all_passed, run_suite

log = logging.getLogger("mspk")


def _seed(args) -> int:
    env = os.environ.get("MSPK_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"MSPK_SEED must be an integer, got {env!r}") from None
    return args.seed


def _quad(args) -> QuadratureConfig:
    return QuadratureConfig(args.quad, args.nodes, args.grid_points, args.halfwidth)


def _out(args, name: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _write_csv(path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return Path(path)


# --- subcommands -----------------------------------------------------------------

def cmd_parisi_eval(args, manifest: RunManifest) -> int:
    spec = load_model(args.model)
    params = load_params(args.params)
    ev = evaluate(spec, params, _quad(args))
    doc = {
        "P": ev.P,
        "X0": dict(zip(spec.species, ev.X0)),
        "Q": ev.paths.Q,
        "Qs": dict(zip(spec.species, ev.paths.Qs)),
        "correction": ev.correction,
        "params": params.to_dict(),
    }
    manifest.add_output(write_json(_out(args, "parisi-eval.json"), doc))
    print(format_float(ev.P))
    return 0


def cmd_parisi_opt(args, manifest: RunManifest) -> int:
    spec = load_model(args.model)
    config = OptimizerConfig(args.restarts, args.max_evals, args.xatol, args.fatol, args.r_max,
                             manifest.seed, _quad(args))
    manifest.config["optimizer"] = {k: v for k, v in vars(config).items() if k != "quad"}
    best, per_level = infimum_over_levels(spec, config)
    rows = [(res.params.r, rs, it, val) for res in per_level for rs, it, val in res.trace]
    manifest.add_output(_write_csv(_out(args, "parisi-opt-trace.csv"), ["r", "restart", "iteration", "value"], rows))
    manifest.add_output(_write_csv(_out(args, "parisi-opt-values.csv"), ["r", "value", "converged"],
                                   [(res.params.r, res.value, int(res.converged)) for res in per_level]))
    doc = {
        "best_value": best.value,
        "note": "q^s_r is pinned to 1 at every depth; values are upper bounds, not certified infima",
        "best_params": best.params.to_dict(),
        "per_level": [{"r": res.params.r, "value": res.value, "converged": res.converged,
                       "evaluations": res.evaluations, "params": res.params.to_dict()} for res in per_level],
    }
    manifest.add_output(write_json(_out(args, "parisi-opt.json"), doc))
    print(format_float(best.value))
    return 0


def cmd_free_energy(args, manifest: RunManifest) -> int:
    spec = load_model(args.model)
    est = free_energy_mc(spec, args.N, args.samples, manifest.seed, workers=args.threads)
    doc = {"N": args.N, "samples": args.samples, "mean": est.mean, "se": est.se}
    manifest.add_output(write_json(_out(args, "free-energy.json"), doc))
    print(f"{format_float(est.mean)} +- {format_float(est.se)}")
    return 0


def cmd_verify(args, manifest: RunManifest) -> int:
    spec = load_model(args.model)
    params = load_params(args.params) if args.params else None
    seed = manifest.seed
    options = {
        "cascade": dict(samples=args.samples, M=args.M, seed=seed),
        "gg": dict(draws=args.draws, n=args.n, M=args.M, seed=seed),
        "sync": dict(draws=args.draws, M=args.M, seed=seed),
        "interpolation": dict(N=args.N, samples=args.samples, M=args.M, seed=seed),
        "covariance": dict(N=args.N, draws=args.draws, seed=seed),
    }[args.suite]
    manifest.config["suite_options"] = options
    checks = run_suite(args.suite, spec, params, **options)
    ok = all_passed(checks)
    doc = {"suite": args.suite, "passed": ok, "checks": [c.to_dict() for c in checks]}
    manifest.add_output(write_json(_out(args, f"verify-{args.suite}.json"), doc))
    for c in checks:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[c.passed]
        print(f"{status} {c.name}: value={format_float(c.value)} target={format_float(c.target)} "
              f"tol={format_float(c.tolerance)} {c.note}".rstrip())
    return 0 if ok else 1


def cmd_cascade_sample(args, manifest: RunManifest) -> int:
    spec = load_model(args.model)
    params = load_params(args.params)
    q = None if args.q_combined is None else np.array(args.q_combined, dtype=float)
    sample = cascade_overlap_samples(spec, params, args.n, args.draws, args.M, manifest.seed, q)
    manifest.add_output(write_overlaps(_out(args, "overlaps.csv"), sample))
    print(f"{sample.n_draws} draws of {sample.n_replicas} replicas")
    return 0


def cmd_gibbs_sample(args, manifest: RunManifest) -> int:
    spec = load_model(args.model)
    pspec = None
    if args.perturb:
        pspec = PerturbationSpec(default_weight_grid(spec.n_species), p_max=args.p_max, gamma=args.gamma)
    sample = gibbs_replica_samples(spec, args.N, args.n, args.draws, manifest.seed, pspec)
    manifest.add_output(write_overlaps(_out(args, "overlaps.csv"), sample))
    print(f"{sample.n_draws} draws of {sample.n_replicas} replicas")
    return 0


def cmd_gg_delta(args, manifest: RunManifest) -> int:
    sample = read_overlaps(args.overlaps)
    w = tuple(args.w) if args.w else (1.0,) * len(sample.species)
    f = make_test_function(args.f, sample=sample, threshold=args.threshold)
    r = gg_delta(sample, f, args.n, w, args.p)
    doc = {"statistic": "gg_delta", "value": r.value, "signed": r.signed, "se": r.se,
           "config": {"f": r.f, "n": r.n, "p": r.p, "w": list(r.w)}}
    manifest.add_output(write_json(_out(args, "gg-delta.json"), doc))
    print(f"{format_float(r.value)} +- {format_float(r.se)}")
    return 0


def cmd_sync_fit(args, manifest: RunManifest) -> int:
    sample = read_overlaps(args.overlaps)
    fits = fit_synchronization(sample)
    doc = {"statistic": "sync_fit", "config": {"source": str(args.overlaps)},
           "species": {k: {"knots": f.knots, "fitted": f.fitted, "max_residual": f.max_residual,
                           "lipschitz": f.lipschitz, "bound": f.bound} for k, f in fits.items()}}
    manifest.add_output(write_json(_out(args, "sync-fit.json"), doc))
    for k, f in fits.items():
        print(f"{k}: residual={format_float(f.max_residual)} lipschitz={format_float(f.lipschitz)} "
              f"bound={format_float(f.bound)}")
    return 0


# --- parser -----------------------------------------------------------------

def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="base seed (MSPK_SEED overrides)")
    p.add_argument("--threads", type=int, default=1, help="worker budget; results do not depend on it")
    p.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")


def _add_quad(p):
    p.add_argument("--quad", choices=("grid", "nested"), default="grid")
    p.add_argument("--nodes", type=int, default=40, help="Gauss-Hermite nodes")
    p.add_argument("--grid-points", type=int, default=513)
    p.add_argument("--halfwidth", type=float, default=8.0, help="grid halfwidth in standard deviations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mspk", description="Multi-species spin glass toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parisi-eval", help="evaluate the Parisi functional")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    _add_quad(p)
    _add_common(p)
    p.set_defaults(func=cmd_parisi_eval)

    p = sub.add_parser("parisi-opt", help="minimise the Parisi functional over r = 1..r_max")
    p.add_argument("--model", required=True)
    p.add_argument("--r-max", type=int, default=3)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--max-evals", type=int, default=2000)
    p.add_argument("--xatol", type=float, default=1e-7)
    p.add_argument("--fatol", type=float, default=1e-11)
    _add_quad(p)
    _add_common(p)
    p.set_defaults(func=cmd_parisi_opt)

    p = sub.add_parser("free-energy", help="exact-enumeration Monte Carlo estimate of F_N")
    p.add_argument("--model", required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--samples", type=int, default=100)
    _add_common(p)
    p.set_defaults(func=cmd_free_energy)

    p = sub.add_parser("verify", help="run a verification battery")
    p.add_argument("--model", required=True)
    p.add_argument("--params")
    p.add_argument("--suite", required=True, help=f"one of {', '.join(SUITES)}")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--n", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("cascade-sample", help="overlap arrays from cascades")
    p.add_argument("--model", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--q-combined", type=float, nargs="+", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_cascade_sample)

    p = sub.add_parser("gibbs-sample", help="overlap arrays from exact Gibbs sampling")
    p.add_argument("--model", required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--perturb", action="store_true", help="add the perturbation Hamiltonian")
    p.add_argument("--p-max", type=int, default=2)
    p.add_argument("--gamma", type=float, default=0.3)
    _add_common(p)
    p.set_defaults(func=cmd_gibbs_sample)

    p = sub.add_parser("gg-delta", help="Ghirlanda-Guerra statistic on an overlap CSV")
    p.add_argument("--overlaps", required=True)
    p.add_argument("--f", default="indicator", choices=("const", "indicator", "monomial"))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--w", type=float, nargs="+", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_gg_delta)

    p = sub.add_parser("sync-fit", help="isotonic synchronization fit on an overlap CSV")
    p.add_argument("--overlaps", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_sync_fit)
    return parser


_VERIFY_DEFAULTS = {"cascade": {"M": 200}, "gg": {"M": 100}, "sync": {"M": 100},
                    "interpolation": {"M": 50, "N": 10}, "covariance": {"N": 50}}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        if args.command == "verify":
            if args.suite not in SUITES:
                raise ValidationError(f"unknown suite {args.suite!r}; choose one of {', '.join(SUITES)}")
            for k, v in _VERIFY_DEFAULTS[args.suite].items():
                if getattr(args, k) is None:
                    setattr(args, k, v)
        seed = _seed(args)
        inputs = {k: v for k, v in vars(args).items() if k in ("model", "params", "overlaps") and v}
        config = {k: v for k, v in vars(args).items() if k not in ("func", "out_dir", "verbose")}
        config["seed"] = seed
        manifest = RunManifest(args.command, inputs, config, seed)
        code = args.func(args, manifest)
        manifest.finish()
        write_json(_out(args, "manifest.json"), manifest.to_dict())
        return code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
