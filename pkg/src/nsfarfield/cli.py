"""Scenario runner: parse a config, solve, verify, and write reports.

Subcommands
-----------
kernel-check   run the kernel invariant suite, write envelope constants
simulate       solve the scenario and persist the trajectory
verify         run the configured checks against the trajectory
report         aggregate per-check results into a machine-readable verdict
all            simulate + verify + report

Exit codes: 0 pass, 1 check failure, 2 configuration error, 3 numerical
failure.  Outputs are deterministic for a fixed config and seed: file names
carry the scenario hash, JSON is sorted, and wall-clock time goes only to
``run.log`` which is excluded from any determinism comparison.

Flags mirror the environment variables NSFF_CONFIG, NSFF_OUT, NSFF_THREADS,
NSFF_ONLY (explicit flags win).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import kernels, verify
from .config import CHECK_NAMES, ConfigError, ScenarioConfig, parse_config
from .forcing import (
    ForceModel,
    GaussianBump,
    Indicator,
    SeparableTerm,
    SmoothBump,
    build_initial_data,
    validate_assumptions,
)
from .grid import BoxGrid
from .solver import (
    SolverError,
    SolverOptions,
    Trajectory,
    load_trajectory,
    picard_solve,
    scenario_digest,
)

__all__ = ["main", "build_scenario", "run_scenario", "run_kernel_check"]

EXIT_PASS = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3


def build_scenario(cfg: ScenarioConfig):
    """Materialize (grid, initial data, force, options, hash) from a config."""
    grid = BoxGrid(cfg.dimension, cfg.half_width, cfg.points)
    data = build_initial_data(cfg.dimension, kind=cfg.data_kind,
                              amplitude=cfg.data_amplitude, width=cfg.data_width)
    if cfg.time_profile == "smooth_bump":
        tau = SmoothBump(cfg.time_on, cfg.time_off)
    else:
        tau = Indicator(cfg.time_on, cfg.time_off)
    amp = np.asarray(cfg.force_amplitude)
    d = cfg.dimension
    if cfg.force_kind == "zero" or not np.any(amp):
        force = ForceModel.zero(d)
    elif cfg.force_kind == "gaussian_bump":
        force = ForceModel(d, terms=[SeparableTerm(
            GaussianBump(d, width=cfg.force_width, center=cfg.force_center), tau,
            tuple(amp))])
    elif cfg.force_kind == "dipole_pair":
        sep = np.asarray(cfg.force_separation)
        force = ForceModel(d, terms=[
            SeparableTerm(GaussianBump(d, width=cfg.force_width, center=tuple(sep)),
                          tau, tuple(amp)),
            SeparableTerm(GaussianBump(d, width=cfg.force_width, center=tuple(-sep)),
                          tau, tuple(-amp)),
        ])
    else:  # quadrupole: mean and first moment both vanish
        sep = np.asarray(cfg.force_separation)
        force = ForceModel(d, terms=[
            SeparableTerm(GaussianBump(d, width=cfg.force_width, center=tuple(sep)),
                          tau, tuple(amp)),
            SeparableTerm(GaussianBump(d, width=cfg.force_width, center=tuple(-sep)),
                          tau, tuple(amp)),
            SeparableTerm(GaussianBump(d, width=cfg.force_width), tau, tuple(-2 * amp)),
        ])
    opts = SolverOptions(slices=cfg.slices, tol=cfg.tolerance,
                         max_sweeps=cfg.max_sweeps, refine=cfg.refine)
    digest = scenario_digest(cfg.hash_source())
    return grid, data, force, opts, digest


class _ThreadedFlow(verify.FlowAdapter):
    """FlowAdapter whose far-field batches run on a bounded thread pool.

    Chunks are concatenated in input order, so results are byte-identical to
    the serial evaluation.
    """

    def __init__(self, traj, a, f, opts, threads: int = 1):
        super().__init__(traj, a, f, opts)
        self.threads = max(1, int(threads))

    def velocity(self, x, t: float):
        x = np.asarray(x, dtype=float)
        if self.threads == 1 or x.ndim == 1 or x.shape[0] < 2 * self.threads:
            return super().velocity(x, t)
        from concurrent.futures import ThreadPoolExecutor

        chunks = np.array_split(np.arange(x.shape[0]), self.threads)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            parts = list(pool.map(lambda idx: super(_ThreadedFlow, self).velocity(x[idx], t),
                                  chunks))
        return np.concatenate(parts, axis=0)


def run_kernel_check(out_dir: str, d: int = 2) -> int:
    """Kernel invariant suite; writes envelope constants and a verdict."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(20260808)
    x = rng.normal(size=(64, d)) * 3
    problems = []

    tr = kernels.leading_tensor(x, d)
    if float(np.abs(np.trace(tr, axis1=-2, axis2=-1)).max()) != 0.0:
        problems.append("leading tensor trace not exactly zero")
    for t in (0.25, 1.0, 4.0):
        k = kernels.oseen_kernel(x, t, d)
        scal = t ** (-d / 2.0) * kernels.oseen_kernel(x / math.sqrt(t), 1.0, d)
        if np.abs(k - scal).max() > 1e-12 * np.abs(k).max():
            problems.append(f"scaling relation fails at t={t}")
        trace_err = np.abs(np.trace(k, axis1=-2, axis2=-1)
                           - (d - 1) * kernels.heat_kernel(x, t, d)).max()
        if trace_err > 1e-10 * np.abs(k).max():
            problems.append(f"trace identity fails at t={t}")
    # residual consistency at random points
    for i in range(32):
        t = float(np.exp(rng.uniform(-2, 1)))
        xi = x[i]
        lhs = kernels.oseen_kernel(xi, t, d)
        rhs = kernels.leading_tensor(xi, d) + float(
            np.linalg.norm(xi)) ** (-d) * kernels.psi_residual(xi / math.sqrt(t), d)
        if np.abs(lhs - rhs).max() > 1e-10 * max(1.0, np.abs(lhs).max()):
            problems.append("self-similar decomposition identity fails")
            break

    c_k = kernels.envelope_constant(d)
    c_f = kernels.grad_envelope_constant(d)
    c_l1 = kernels.oseen_l1_gradient_norm(1.0, d)
    verify.write_csv(os.path.join(out_dir, f"kernel_envelopes_d{d}.csv"),
                     ["quantity", "dimension", "constant"],
                     [("oseen_envelope", d, c_k),
                      ("gradient_envelope", d, c_f),
                      ("gradient_l1_at_unit_time", d, c_l1)])
    verify.write_json(os.path.join(out_dir, f"kernel_check_d{d}.json"),
                      {"check": "kernel", "dimension": d, "passed": not problems,
                       "problems": problems,
                       "oseen_envelope_constant": c_k,
                       "gradient_envelope_constant": c_f,
                       "gradient_l1_constant": c_l1})
    for p in problems:
        print(f"kernel-check FAIL: {p}")
    print(f"kernel-check d={d}: {'pass' if not problems else 'FAIL'} "
          f"(envelope constants {c_k:.3g}, {c_f:.3g})")
    return EXIT_PASS if not problems else EXIT_CHECK_FAILURE


def _traj_dir(out_dir: str, digest: str) -> str:
    return os.path.join(out_dir, f"trajectory_{digest}")


def simulate(cfg: ScenarioConfig, out_dir: str) -> Trajectory:
    from .solver import ADMISSION_LIMIT

    grid, data, force, opts, digest = build_scenario(cfg)
    rep = validate_assumptions(force, ADMISSION_LIMIT,
                               points_per_axis=128, time_samples=129)
    traj = picard_solve(data, force, grid, cfg.horizon, opts, scenario_hash=digest)
    os.makedirs(out_dir, exist_ok=True)
    traj.save(_traj_dir(out_dir, digest))
    verify.write_json(os.path.join(out_dir, f"simulate_{digest}.json"), {
        "scenario": cfg.name, "hash": digest,
        "sweeps": len(traj.iteration_log),
        "iteration_log": traj.iteration_log,
        "contractive": traj.contractive,
        "decay_constant": traj.decay_constant(),
        "assumptions": {"epsilon_f1": rep.epsilon_f1, "l1_norm": rep.l1_norm,
                        "c_f3": rep.c_f3, "pass": rep.all_pass},
    })
    return traj


def _load_or_solve(cfg: ScenarioConfig, out_dir: str) -> Trajectory:
    _, _, _, _, digest = build_scenario(cfg)
    tdir = _traj_dir(out_dir, digest)
    if os.path.isdir(tdir):
        return load_trajectory(tdir)
    return simulate(cfg, out_dir)


def _check_profile(cfg, flow, digest, out_dir):
    rep = verify.remainder_extract(flow, np.array(cfg.profile_radii), cfg.profile_time)
    # decay of |u| itself: the -d law for a nonzero-mean force
    dirs = verify._direction_set(flow.d, cfg.window_directions)
    sup = []
    for r in cfg.profile_radii:
        sup.append(float(np.linalg.norm(flow.velocity(r * dirs, cfg.profile_time),
                                        axis=-1).max()))
    sup = np.array(sup)
    if np.all(sup < 1e-30):
        u_fit = None  # zero flow: nothing to fit, trivially consistent
    else:
        u_fit = verify.fit_power_law(np.array(cfg.profile_radii), sup,
                                     "velocity_decay", predicted_exponent=-float(flow.d),
                                     tolerance=0.15)
    if "intercept" in rep.extras:
        log_pred = rep.extras["intercept"] + rep.fitted_exponent * np.log(rep.abscissa)
        residuals = np.abs(np.log(np.maximum(rep.values, 1e-300)) - log_pred)
    else:
        residuals = np.zeros_like(rep.values)
    rows = [(r, v, rep.extras["constant"] * r ** rep.predicted_exponent
             * math.sqrt(cfg.profile_time), res)
            for r, v, res in zip(rep.abscissa, rep.values, residuals)]
    verify.write_csv(os.path.join(out_dir, f"profile_{digest}.csv"),
                     ["abscissa", "value", "prediction", "residual"], rows)
    payload = {
        "check": "profile",
        "passed": bool(rep.passed and (u_fit is None or u_fit.passed)),
        "remainder_exponent": rep.fitted_exponent if math.isfinite(rep.fitted_exponent) else None,
        "remainder_constant": rep.extras["constant"],
        "remainder_constant_variation": rep.extras["constant_variation"],
        "onset_radius": (rep.extras["onset_radius"]
                         if math.isfinite(rep.extras.get("onset_radius", math.inf))
                         else None),
        "velocity_exponent": None if u_fit is None else u_fit.fitted_exponent,
        "velocity_exponent_predicted": -float(flow.d),
    }
    verify.write_json(os.path.join(out_dir, f"profile_{digest}.json"), payload)
    return payload


def _check_window(cfg, flow, digest, out_dir):
    control = not np.any(flow.force_integral(cfg.window_time))
    rep = verify.pointwise_window_check(
        flow, cfg.window_time, np.array(cfg.window_radii),
        n_dirs=cfg.window_directions,
        short_times=cfg.short_times or None, control=control)
    rows = [(float(r), float(rep.lower), float(rep.sphere_floor), float(rep.ratio))
            for r in cfg.window_radii]
    verify.write_csv(os.path.join(out_dir, f"window_{digest}.csv"),
                     ["abscissa", "value", "prediction", "residual"], rows)
    expected_fail = control
    payload = {
        "check": "window", "control_scenario": control,
        "passed": bool((not rep.window_pass and rep.fitted_slope <= -(flow.d + 0.5))
                       if expected_fail else rep.window_pass),
        "lower": rep.lower, "upper": rep.upper, "ratio": rep.ratio,
        "fitted_slope": rep.fitted_slope,
        "sphere_floor": rep.sphere_floor,
        "remainder_fraction": rep.remainder_fraction,
        "short_time": rep.short_time,
    }
    verify.write_json(os.path.join(out_dir, f"window_{digest}.json"), payload)
    return payload


def _check_sweep(cfg, flow, digest, out_dir):
    norms = verify.TrajectoryNorms(flow)
    results = {}
    ok = True
    rows = []
    for alpha, p in cfg.sweep_pairs:
        rep = verify.weighted_norm_sweep(norms, flow.d, alpha, p,
                                         np.array(cfg.sweep_times))
        key = f"alpha{alpha:g}_p{'inf' if math.isinf(p) else f'{p:g}'}"
        results[key] = {"fitted": rep.fitted_exponent,
                        "predicted": rep.predicted_exponent,
                        "passed": rep.passed}
        ok = ok and rep.passed
        for t, v in zip(rep.abscissa, rep.values):
            rows.append((t, v, math.exp(rep.extras["intercept"])
                         * t ** rep.predicted_exponent, rep.residual))
    verify.write_csv(os.path.join(out_dir, f"sweep_{digest}.csv"),
                     ["abscissa", "value", "prediction", "residual"], rows)
    payload = {"check": "sweep", "passed": bool(ok), "fits": results}
    verify.write_json(os.path.join(out_dir, f"sweep_{digest}.json"), payload)
    return payload


def _check_divergence(cfg, flow, digest, out_dir):
    results = {}
    ok = True
    rows = []
    for alpha, p in cfg.divergence_pairs:
        rep = verify.divergence_detect(flow, alpha, p, cfg.divergence_time,
                                       np.array(cfg.divergence_radii))
        key = f"alpha{alpha:g}_p{p:g}"
        results[key] = {"verdict": rep.verdict,
                        "increments": rep.increments.tolist(),
                        "ratios": rep.ratios.tolist()}
        ok = ok and rep.divergent
        for r, inc in zip(rep.radii[1:], rep.increments):
            rows.append((r, inc, rep.increments[0], 0.0))
    verify.write_csv(os.path.join(out_dir, f"divergence_{digest}.csv"),
                     ["abscissa", "value", "prediction", "residual"], rows)
    payload = {"check": "divergence", "passed": bool(ok), "results": results}
    verify.write_json(os.path.join(out_dir, f"divergence_{digest}.json"), payload)
    return payload


def _check_lemlog(cfg, flow, digest, out_dir):
    t0 = min(1.0, cfg.horizon / 2.0)
    ts = [t0 * 0.5**k for k in range(4)]
    xs = [8.0, 16.0, 32.0, 64.0]
    rep = verify.lemlog_check(xs, ts, d=cfg.dimension)
    rows = [(r, ratio, rep.sup_ratio, 0.0)
            for (r, _), ratio in zip(rep.pairs, rep.ratios)]
    verify.write_csv(os.path.join(out_dir, f"lemlog_{digest}.csv"),
                     ["abscissa", "value", "prediction", "residual"], rows)
    payload = {"check": "lemlog", "passed": bool(rep.passed),
               "sup_ratio": rep.sup_ratio, "variation": rep.variation,
               "refinement_shift": rep.refinement_shift}
    verify.write_json(os.path.join(out_dir, f"lemlog_{digest}.json"), payload)
    return payload


def _check_next_order(cfg, flow, digest, out_dir):
    rep = verify.next_order_check(flow, cfg.next_order_time,
                                  np.array(cfg.next_order_radii))
    rows = []
    if rep.fit is not None:
        for r, v, agr in zip(rep.radii, rep.fit.values, rep.agreement):
            rows.append((r, v, math.exp(rep.fit.extras["intercept"])
                         * r ** rep.fit.predicted_exponent, agr))
    verify.write_csv(os.path.join(out_dir, f"next_order_{digest}.csv"),
                     ["abscissa", "value", "prediction", "residual"], rows)
    payload = {"check": "next_order", "passed": bool(rep.passed),
               "degenerate": rep.degenerate, "note": rep.note,
               "fitted_exponent": None if rep.fit is None else rep.fit.fitted_exponent,
               "agreement": None if rep.agreement is None else rep.agreement.tolist()}
    verify.write_json(os.path.join(out_dir, f"next_order_{digest}.json"), payload)
    return payload


_CHECK_RUNNERS = {
    "profile": _check_profile,
    "window": _check_window,
    "sweep": _check_sweep,
    "divergence": _check_divergence,
    "lemlog": _check_lemlog,
    "next_order": _check_next_order,
}


def run_verify(cfg: ScenarioConfig, out_dir: str, only=None, threads: int = 1) -> int:
    grid, data, force, opts, digest = build_scenario(cfg)
    traj = _load_or_solve(cfg, out_dir)
    flow = _ThreadedFlow(traj, data, force, opts, threads=threads)
    selected = [c for c in cfg.checks if only is None or c in only]
    summary = {"scenario": cfg.name, "hash": digest, "checks": {}}
    status = EXIT_PASS
    for check in selected:
        if check == "kernel":
            code = run_kernel_check(out_dir, cfg.dimension)
            summary["checks"]["kernel"] = {"passed": code == EXIT_PASS}
            if code != EXIT_PASS:
                status = max(status, EXIT_CHECK_FAILURE)
            continue
        runner = _CHECK_RUNNERS[check]
        try:
            payload = runner(cfg, flow, digest, out_dir)
        except (SolverError, FloatingPointError) as exc:
            summary["checks"][check] = {"error": f"{type(exc).__name__}: {exc}"}
            print(f"check {check}: NUMERICAL FAILURE ({exc})")
            status = max(status, EXIT_NUMERICAL_FAILURE)
            continue
        except (verify.RegimeError, verify.HypothesisError,
                verify.ValidityRegionError, ValueError) as exc:
            summary["checks"][check] = {"error": f"{type(exc).__name__}: {exc}"}
            print(f"check {check}: ERROR ({exc})")
            status = max(status, EXIT_CHECK_FAILURE)
            continue
        summary["checks"][check] = {"passed": payload.get("passed")}
        print(f"check {check}: {'pass' if payload.get('passed') else 'FAIL'}")
        if not payload.get("passed"):
            status = max(status, EXIT_CHECK_FAILURE)
    verify.write_json(os.path.join(out_dir, f"verify_{digest}.json"), summary)
    return status


def run_report(cfg: ScenarioConfig, out_dir: str) -> int:
    import json

    _, _, _, _, digest = build_scenario(cfg)
    path = os.path.join(out_dir, f"verify_{digest}.json")
    if not os.path.exists(path):
        print(f"no verify summary at {path}; run `verify` first")
        return EXIT_CONFIG_ERROR
    with open(path) as fh:
        summary = json.load(fh)
    all_pass = True
    for check, result in sorted(summary.get("checks", {}).items()):
        if "error" in result:
            print(f"{check}: ERROR {result['error']}")
            all_pass = False
        else:
            print(f"{check}: {'pass' if result.get('passed') else 'FAIL'}")
            all_pass = all_pass and bool(result.get("passed"))
    verdict = {"scenario": summary.get("scenario"), "hash": digest,
               "overall": "pass" if all_pass else "fail",
               "checks": summary.get("checks", {})}
    verify.write_json(os.path.join(out_dir, f"report_{digest}.json"), verdict)
    print(f"overall: {'pass' if all_pass else 'FAIL'}")
    return EXIT_PASS if all_pass else EXIT_CHECK_FAILURE


def run_scenario(cfg: ScenarioConfig, out_dir: str, only=None, threads: int = 1) -> int:
    """simulate + verify + report; partial results are preserved on failure."""
    t0 = time.time()
    try:
        simulate(cfg, out_dir)
    except SolverError as exc:
        print(f"simulate: NUMERICAL FAILURE ({exc})")
        return EXIT_NUMERICAL_FAILURE
    status = run_verify(cfg, out_dir, only=only, threads=threads)
    report_status = run_report(cfg, out_dir)
    with open(os.path.join(out_dir, "run.log"), "a") as fh:
        fh.write(f"run_scenario finished in {time.time() - t0:.1f}s\n")
    return max(status, report_status)


def _build_parser() -> argparse.ArgumentParser:
    env = os.environ
    parser = argparse.ArgumentParser(
        prog="nsfarfield",
        description="far-field asymptotics laboratory for forced Navier-Stokes flows")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", default=env.get("NSFF_CONFIG"),
                       required=needs_config and "NSFF_CONFIG" not in env,
                       help="scenario config file")
        p.add_argument("--out", default=env.get("NSFF_OUT"),
                       help="output directory (default: config output.directory)")
        p.add_argument("--threads", type=int,
                       default=int(env.get("NSFF_THREADS", "0")) or None,
                       help="worker threads for far-field batches")

    kc = sub.add_parser("kernel-check", help="kernel invariant suite")
    kc.add_argument("--out", default=env.get("NSFF_OUT", "out"))
    kc.add_argument("--dimension", type=int, default=2, choices=(2, 3))

    for name in ("simulate", "verify", "report", "all"):
        p = sub.add_parser(name)
        common(p)
        if name in ("verify", "all"):
            p.add_argument("--only", default=env.get("NSFF_ONLY"),
                           help="comma-separated subset of checks")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "kernel-check":
        return run_kernel_check(args.out, args.dimension)

    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"cannot read config: {exc}")
        return EXIT_CONFIG_ERROR
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}")
        return EXIT_CONFIG_ERROR

    out_dir = args.out or cfg.output_directory
    threads = args.threads or cfg.threads
    only = None
    if getattr(args, "only", None):
        only = [c.strip() for c in args.only.split(",") if c.strip()]
        unknown = [c for c in only if c not in CHECK_NAMES]
        if unknown:
            print(f"config error: unknown checks in --only: {', '.join(unknown)}")
            return EXIT_CONFIG_ERROR

    os.makedirs(out_dir, exist_ok=True)
    try:
        if args.command == "simulate":
            simulate(cfg, out_dir)
            return EXIT_PASS
        if args.command == "verify":
            return run_verify(cfg, out_dir, only=only, threads=threads)
        if args.command == "report":
            return run_report(cfg, out_dir)
        return run_scenario(cfg, out_dir, only=only, threads=threads)
    except SolverError as exc:
        print(f"NUMERICAL FAILURE: {exc}")
        return EXIT_NUMERICAL_FAILURE


if __name__ == "__main__":
    sys.exit(main())
