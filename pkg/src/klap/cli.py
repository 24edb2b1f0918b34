"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 solver hit the iteration
cap, 3 kernel not identifiable (``identify`` only), 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .core import FiniteDistribution, kl_array
from .empirical import (
    DEFAULT_FLOOR,
    empirical_distribution,
    initial_point,
    recoverability_experiment,
    report_csv,
    sample_clean,
    sample_corrupted,
)
from .errors import KlapError
from .kernels import apply, is_identifiable, support_floor
from .matrix_io import load_kernel, write_atomic
from .oracle import _is_deterministic, marginal_closed_form

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_NONIDENTIFIABLE, EXIT_VERIFY = 0, 1, 2, 3, 4

DEFAULT_OUTPUTS = {
    "trajectory": "trajectory.csv",
    "summary": "summary.json",
    "report": "report.csv",
    "empirical": "empirical.csv",
}


class UsageError(KlapError):
    pass


def _out_path(scn, args, key):
    name = scn.outputs.get(key, DEFAULT_OUTPUTS[key])
    if os.path.isabs(name):
        return name
    return os.path.join(args.out, name)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _need_p_data(scn):
    if scn.p_data is None:
        raise UsageError("this command needs a p_data block")
    return scn.p_data


def _prior(scn, p_data, seed):
    spec = scn.prior_spec
    if spec is None:
        return None, 0, 0.0
    if "weights" in spec:
        return FiniteDistribution(spec["weights"]), 0, 0.0
    M = int(spec["clean_samples"])
    smoothing = float(spec.get("smoothing", 0.0))
    if M <= 0:
        return None, 0, smoothing
    batch = sample_clean(p_data, M, seed)
    return empirical_distribution(batch, p_data.alphabet_size, smoothing), M, smoothing


def build_problem(scn):
    """Resolve a scenario into ``(kernel, q, h, p0, extras)`` for a solve."""
    from .solver import solve  # noqa: F401  (import cycle guard)

    p_data = _need_p_data(scn)
    seed = scn.solver.seed
    kernel = scn.kernel
    h, _, _ = _prior(scn, p_data, seed)
    extras = {"floor": None, "observations": scn.observations["mode"]}
    if scn.observations["mode"] == "samples":
        batch = sample_corrupted(kernel, p_data, int(scn.observations["count"]), seed)
        q = empirical_distribution(batch, kernel.output_size,
                                   float(scn.observations.get("smoothing", 0.0)))
        floor = float((scn.sweep or {}).get("floor", DEFAULT_FLOOR))
        kernel = support_floor(kernel, floor)
        extras["floor"] = floor
    else:
        q = apply(kernel, p_data)
    lam = scn.solver.lam
    if lam > 0 and h is None:
        raise UsageError("a positive lambda or weight needs a prior block")
    injective = is_identifiable(scn.kernel).injective
    p0 = initial_point(h, lam, injective, kernel.input_size, scn.init)
    h_dagger = None
    if scn.observations["mode"] == "exact":
        if injective:
            h_dagger = p_data
        elif _is_deterministic(scn.kernel) and h is not None:
            h_dagger = FiniteDistribution(marginal_closed_form(scn.kernel, q, h))
    return kernel, q, (h if lam > 0 else None), p0, h_dagger, extras


def cmd_solve(args) -> int:
    from .solver import solve

    scn = cfgmod.load(args.config)
    kernel, q, h, p0, h_dagger, extras = build_problem(scn)
    traj = solve(kernel, q, h, scn.solver, p0=p0, h_dagger=h_dagger, reference=scn.p_data)
    final = traj.final_p.weights
    pd = scn.p_data.weights
    last = traj.records[-1]
    summary = {
        "converged": traj.converged,
        "iterations": traj.iterations_run,
        "final_p": [float(v) for v in final],
        "kl_to_pdata": kl_array(pd, final),
        "tv_to_pdata": 0.5 * float(np.abs(pd - final).sum()),
        "final_J_lambda": last.J_lambda,
        "final_residual": last.residual,
        "lambda": scn.solver.lam,
        "weight": scn.solver.weight,
        "gamma": scn.solver.gamma,
        "nu": scn.solver.nu,
        "floor": extras["floor"],
        "observations": extras["observations"],
        "p0_repaired": traj.metadata["p0_repaired"],
        "identifiability": is_identifiable(scn.kernel).to_dict(),
        "kernel": kernel.label,
    }
    tpath = _out_path(scn, args, "trajectory")
    write_atomic(tpath, traj.to_csv())
    write_atomic(_out_path(scn, args, "summary"), _dump_json(summary))
    if args.plot:
        from .plotting import plot_trajectory

        plot_trajectory(traj, os.path.splitext(tpath)[0] + ".png", title=kernel.label)
    state = "converged" if traj.converged else "hit the iteration cap"
    print(f"{state} after {traj.iterations_run} iterations; "
          f"TV to p_data {summary['tv_to_pdata']:.3e}; residual {last.residual:.3e}")
    if not summary["identifiability"]["injective"]:
        print("note: kernel is not identifiable; the result depends on the prior or p0")
    return EXIT_OK if traj.converged else EXIT_NONCONVERGED


def cmd_identify(args) -> int:
    if args.kernel:
        kernel = load_kernel(args.kernel)
    elif args.config:
        kernel = cfgmod.load(args.config).kernel
    else:
        raise UsageError("identify needs --config or --kernel")
    report = is_identifiable(kernel, args.tol)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK if report.injective else EXIT_NONIDENTIFIABLE


def cmd_verify(args) -> int:
    from .verification import report_csv as verify_csv, run_suite

    results = run_suite(args.scale)
    for r in results:
        print(r.line())
    write_atomic(os.path.join(args.out, "verify_report.csv"), verify_csv(results))
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} properties passed")
    return EXIT_OK if ok else EXIT_VERIFY


def sweep_axes(scn):
    """Expand a scenario into the arguments of :func:`recoverability_experiment`."""
    p_data = _need_p_data(scn)
    sw = scn.sweep or {}
    prior = scn.prior_spec
    if prior is not None and "weights" in prior:
        raise UsageError("sweeps build the prior from clean samples; use prior.clean_samples")
    noisy = sw.get("noisy_count", scn.observations.get("count"))
    if noisy is None:
        raise UsageError("a sweep needs sweep.noisy_count or observations.count")
    default_M = int(prior["clean_samples"]) if prior else 0
    return dict(
        kernel=scn.kernel, p_data=p_data,
        clean_counts=sw.get("clean_counts") or [default_M],
        noisy_count=int(noisy),
        lambda_weights=sw.get("weights") or [scn.solver.weight],
        gammas=sw.get("gammas") or [scn.solver.gamma],
        seed=scn.solver.seed,
        smoothing=float(prior.get("smoothing", 0.0)) if prior else 0.0,
        noisy_smoothing=float(scn.observations.get("smoothing", 0.0)),
        floor=float(sw.get("floor", DEFAULT_FLOOR)),
        init=scn.init,
        max_iterations=scn.solver.max_iterations,
        tolerance=scn.solver.fixed_point_tolerance,
    )


def cmd_sweep(args) -> int:
    scn = cfgmod.load(args.config)
    rows = recoverability_experiment(**sweep_axes(scn), jobs=args.jobs)
    rpath = _out_path(scn, args, "report")
    write_atomic(rpath, report_csv(rows))
    if args.plot:
        from .plotting import plot_report

        plot_report(rows, os.path.splitext(rpath)[0] + ".png", title=scn.kernel.label)
    for r in rows:
        print(f"M={r.clean_count} w={r.lambda_weight:g} gamma={r.gamma:g}: "
              f"TV={r.tv_to_pdata:.4e} iterations={r.iterations}")
    return EXIT_OK


def cmd_sample(args) -> int:
    scn = cfgmod.load(args.config)
    p_data = _need_p_data(scn)
    spec = scn.sample
    if spec is None:
        raise UsageError("sample needs a sample block")
    n = int(spec["count"])
    seed = scn.solver.seed
    if spec.get("source", "corrupted") == "clean":
        batch = sample_clean(p_data, n, seed)
        size = p_data.alphabet_size
    else:
        batch = sample_corrupted(scn.kernel, p_data, n, seed)
        size = scn.kernel.output_size
    emp = empirical_distribution(batch, size, float(spec.get("smoothing", 0.0)))
    counts = np.bincount(batch.outcomes, minlength=size)
    lines = ["symbol,count,probability"]
    lines += [f"{i},{int(c)},{format(float(w), '.17g')}" for i, (c, w) in enumerate(zip(counts, emp.weights))]
    write_atomic(_out_path(scn, args, "empirical"), "\n".join(lines) + "\n")
    print(f"drew {n} {batch.source} samples over {size} symbols")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="klap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="scenario JSON file")
        p.add_argument("--out", default=".", help="directory for output files")

    p = sub.add_parser("solve", help="run the solver on one scenario")
    common(p)
    p.add_argument("--plot", action="store_true", help="also render the trajectory figure")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("identify", help="report injectivity of a kernel")
    common(p, config_required=False)
    p.add_argument("--kernel", help="kernel in the plain-text matrix format")
    p.add_argument("--tol", type=float, default=1e-9, help="relative singular-value threshold")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--scale", choices=("quick", "full"), default="quick")
    p.add_argument("--out", default=".", help="directory for verify_report.csv")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="finite-sample recoverability sweep")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--plot", action="store_true", help="also render the sweep figure")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sample", help="draw samples and write their histogram")
    common(p)
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be positive")
    try:
        return args.func(args)
    except KlapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
