"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 numerical blow-up.  The last
line written to stdout is always ``RESULT key=value ...``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io as bio
from .assimilation import (
    InterpolantSpec, TwinAborted, TwinExperimentConfig, run_twin_experiment,
    verify_interpolant_bound,
)
from .diagnostics import (
    BoundsError, check_absorbing_ball, compute_bounds, monotonicity_check,
)
from .integrator import BlowUpError, integrate
from .model import State, admissible_theta, explicit_reference, random_state

log = logging.getLogger("bfb")

EXIT_OK, EXIT_INVALID, EXIT_BLOWUP = 0, 1, 2


def _result(**kw):
    parts = []
    for k, v in kw.items():
        if isinstance(v, float):
            v = format(v, ".6g")
        elif isinstance(v, bool):
            v = str(v).lower()
        parts.append(f"{k}={v}")
    print("RESULT " + " ".join(parts))


def _load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise bio.ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return bio.parse_config(text)


def build_initial_state(cfg):
    ini = cfg.initial
    grid = cfg.grid
    if ini.kind == "conduction":
        return State.zero(grid)
    if ini.kind == "checkpoint":
        return bio.read_checkpoint(ini.path, expected_grid=grid)
    rng = bio.rng_for(cfg.seed, "initial")
    st = random_state(grid, rng, ini.energy, ini.k0, ini.theta_fraction)
    if ini.kind == "admissible":
        st = State(st.u, admissible_theta(st.theta), st.time)
    return st


def _interp_spec(section):
    return InterpolantSpec(section.interpolant, section.h)


def _cmd_simulate(args):
    cfg = _load_config(args.config)
    state0 = build_initial_state(cfg)
    diag_path = args.diagnostics or cfg.output.diagnostics
    ckpt_path = args.checkpoint or cfg.output.checkpoint
    try:
        traj = integrate(state0, cfg.params, cfg.integration, explicit_reference)
    except BlowUpError as err:
        if diag_path and err.trajectory is not None:
            bio.write_diagnostics(err.trajectory.records, diag_path)
        print(f"error: {err}", file=sys.stderr)
        _result(status="blowup", time=err.time)
        return EXIT_BLOWUP
    if diag_path:
        bio.write_diagnostics(traj.records, diag_path)
    if ckpt_path and (cfg.output.checkpoint_enabled or args.checkpoint):
        bio.write_checkpoint(traj.final_state, ckpt_path, cfg.params)
    last = traj.records[-1]
    _result(status="ok", t=last.time, steps=traj.steps, E=last.energy,
            u_H0=last.u_H0, theta_H1=last.theta_H1,
            exploratory=cfg.params.exploratory)
    return EXIT_OK


def _cmd_assimilate(args):
    cfg = _load_config(args.config)
    if cfg.assimilation is None:
        raise bio.ConfigError(["assimilation.mu: assimilate needs an "
                               "assimilation section"])
    a = cfg.assimilation
    twin = TwinExperimentConfig(a.mu, _interp_spec(a), a.v0_strategy,
                                a.v0_radius, a.cadence, cfg.seed)
    state0 = build_initial_state(cfg)
    diag_path = args.diagnostics or cfg.output.diagnostics
    try:
        res = run_twin_experiment(state0, cfg.params, cfg.integration, twin)
    except TwinAborted as err:
        if diag_path:
            bio.write_diagnostics(err.result.records, diag_path)
        print(f"error: {err}", file=sys.stderr)
        _result(status="blowup", time=err.time)
        return EXIT_BLOWUP
    if diag_path:
        bio.write_diagnostics(res.records, diag_path)
    if args.observations:
        bio.write_observations(res.observations, args.observations, cfg.params)
    fit = res.fit
    _result(status="ok", t=res.times[-1], e_H0_initial=res.e_H0[0],
            e_H0_final=res.e_H0[-1], e_Hm1_final=res.e_Hm1[-1],
            rate=fit.rate if fit else "none",
            r2=fit.r_squared if fit else "none")
    return EXIT_OK


def _cmd_verify_bounds(args):
    cfg = _load_config(args.config)
    try:
        bounds = compute_bounds(cfg.params)
    except BoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        _result(status="invalid", reason="gamma2_undefined"
                if cfg.params.alpha == 1 else "alpha_out_of_range")
        return EXIT_INVALID
    print(f"gamma0={bounds.gamma0:.10g} gamma1={bounds.gamma1:.10g} "
          f"gamma2={bounds.gamma2} r_grad={bounds.r_grad}")
    # recomputed Young constant; reported alongside, never checked against
    print(f"gamma0_alt={bounds.gamma0_alt:.10g} "
          f"gamma1_alt={bounds.gamma1_alt:.10g} r_grad_alt={bounds.r_grad_alt}")
    if not args.diagnostics:
        _result(status="ok", gamma1=bounds.gamma1,
                r_grad=bounds.r_grad if bounds.r_grad is not None else "none")
        return EXIT_OK
    records = bio.read_diagnostics(args.diagnostics)
    rep = check_absorbing_ball(records, bounds, window=args.window,
                               rel_tol=args.rel_tol)
    _result(status="ok" if rep.passed else "fail", passed=rep.passed,
            energy_max=rep.energy_max, gamma1=rep.gamma1,
            envelope_worst=rep.envelope_worst,
            grad_max=rep.grad_max,
            r_grad=rep.r_grad if rep.r_grad is not None else "none")
    return EXIT_OK if rep.passed else EXIT_INVALID


def _cmd_verify_properties(args):
    from .spectral import build_grid
    ok = True
    mins = {}
    for alpha in args.alpha:
        delta, passed = monotonicity_check(alpha, args.samples, args.seed)
        mins[alpha] = delta
        good = passed and delta <= 2.0 ** (-2 * alpha) + 1e-12
        print(f"monotonicity alpha={alpha:g}: min R={delta:.12g} "
              f"bound={2.0 ** (-2 * alpha):.12g} {'PASS' if good else 'FAIL'}")
        ok &= good
    grid = build_grid(args.n, args.n, args.n, 1.0)
    spec = InterpolantSpec("modal", args.h)
    worst, passed = verify_interpolant_bound(spec, grid, args.trials, args.seed)
    print(f"interpolant modal h={args.h:g}: worst={worst:.12g} "
          f"c0={spec.c0:.12g} {'PASS' if passed else 'FAIL'}")
    ok &= passed
    _result(status="ok" if ok else "fail", passed=ok,
            interpolant_worst=worst,
            **{f"mono_min_{a:g}": d for a, d in mins.items()})
    return EXIT_OK if ok else EXIT_INVALID


def _cmd_checkpoint_info(args):
    h = bio.read_header(args.path)
    kind = "state" if h.kind == bio.KIND_STATE else "observations"
    par = ",".join("E" if p.value > 0 else "O" for p in h.parities)
    print(f"kind={kind} version={h.version} grid={h.nx}x{h.ny}x{h.nz} "
          f"L={h.L:g} dealias={h.dealias_fraction:.6g} parities={par} "
          f"records={h.n_records} params_hash={h.params_hash.hex()[:16]}")
    _result(status="ok", kind=kind, nx=h.nx, ny=h.ny, nz=h.nz,
            records=h.n_records)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="bfb", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="reference run")
    s.add_argument("--config", required=True)
    s.add_argument("--diagnostics")
    s.add_argument("--checkpoint")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("assimilate", help="twin experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--diagnostics")
    s.add_argument("--observations", help="write the observation stream here")
    s.set_defaults(func=_cmd_assimilate)

    s = sub.add_parser("verify-bounds",
                       help="bound constants and absorbing-ball check")
    s.add_argument("--config", required=True)
    s.add_argument("--diagnostics")
    s.add_argument("--window", type=float)
    s.add_argument("--rel-tol", type=float, default=0.05)
    s.set_defaults(func=_cmd_verify_bounds)

    s = sub.add_parser("verify-properties",
                       help="monotonicity and interpolant property suites")
    s.add_argument("--alpha", type=float, nargs="+", default=[1.5, 2.0, 3.0])
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--n", type=int, default=16, help="grid size per direction")
    s.add_argument("--h", type=float, default=0.25)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_verify_properties)

    s = sub.add_parser("checkpoint-info", help="print a checkpoint header")
    s.add_argument("path")
    s.set_defaults(func=_cmd_checkpoint_info)
    return p


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        if code:
            _result(status="invalid", reason="usage")
            return EXIT_INVALID
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except bio.ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        _result(status="invalid", errors=len(exc.violations))
        return EXIT_INVALID
    except (bio.CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        _result(status="invalid")
        return EXIT_INVALID


def main():
    sys.exit(cli_main())
