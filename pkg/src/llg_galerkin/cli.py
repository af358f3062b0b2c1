"""Command line front end.

    llg-galerkin run <config>
    llg-galerkin sweep <config> --schedule <file> [--jobs N]
    llg-galerkin check {IDENTITIES,DEMAG,WEAKFORM,ALL}
    llg-galerkin demag-kernel <config> --cache <path>

Exit status: 0 ok, 1 failed check, 2 bad usage or input, 3 numerical failure.
"""

import argparse
import json
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .config import from_dict, parse_config, serialize, to_dict, with_overrides
from .diagnostics import EnergyLedger, l2_dissipation_defect, q_increase
from .errors import NumericalFailure, ParseError, ValidationError
from .grid import Field, build_basis
from .io import write_snapshot, write_vtk

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

# tolerances reported in summary.json
TOLERANCES = {
    "l2_dissipation_defect": 1e-6,
    "max_modulus_excess": 1e-3,
    "q_increase": 1e-8,
    "vol_identity_defect": 1e-5,
}


class UsageError(Exception):
    pass


def _error_record(exc):
    rec = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("line", "column", "key"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    return rec


def _log(args, msg):
    if not args.quiet:
        print(msg)


def _load_kernel(cfg, domain):
    if not cfg.model.demag:
        return None
    from .demag import build_kernel, load_kernel, save_kernel

    path = cfg.model.demag_cache
    if path and os.path.exists(path):
        return load_kernel(path, domain)
    kernel = build_kernel(domain)
    if path:
        save_kernel(kernel, path)
    return kernel


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------

def _checks(out, T):
    from .solver import vol_identity_defect

    led = out.ledger
    rows = {"max_modulus_excess": max(0.0, float(led.column("max_modulus").max()) - 1.0)}
    if len(led) >= 2:
        rows["l2_dissipation_defect"] = l2_dissipation_defect(led)
        rows["q_increase"] = q_increase(led)
        rows["vol_identity_defect"] = vol_identity_defect(out)
    return [{"name": k, "value": v, "tol": TOLERANCES[k], "passed": bool(v <= TOLERANCES[k])}
            for k, v in rows.items()]


def execute_run(cfg, out_dir, quiet=True, vtk=None):
    """Run one configuration, writing ledger, snapshots and summary to ``out_dir``."""
    from .solver import Dynamics, RunOutput, evolve, initial_state

    domain = cfg.build_domain()
    basis = cfg.build_basis(domain)
    model = cfg.build_model(domain)
    stepper = cfg.build_stepper()
    kernel = _load_kernel(cfg, domain)
    u0 = Field(domain, cfg.build_initial(domain))
    os.makedirs(os.path.join(out_dir, "snapshots"), exist_ok=True)
    with open(os.path.join(out_dir, "config.toml"), "w") as fh:
        fh.write(serialize(cfg))

    vtk = cfg.run.vtk if vtk is None else vtk
    every = cfg.run.output_every

    def snapshot(i, state):
        values = basis.synthesize_array(state.c)
        stem = os.path.join(out_dir, "snapshots", f"u_{i:06d}")
        write_snapshot(stem + ".llgf", values, state.time)
        if vtk:
            write_vtk(stem + ".vtk", values, domain, state.time)

    state = initial_state(u0, basis, model, kernel)
    ledger = EnergyLedger(meta={"epsilon": model.epsilon, "alpha": model.alpha, "beta": model.beta})
    history = []
    snapshot(0, state)
    T = cfg.run.T
    nsteps = [0]

    def callback(i, st):
        nsteps[0] = i
        if (every and i % every == 0) or abs(st.time - T) <= 1e-12 * max(1.0, T):
            snapshot(i, st)

    start = time.perf_counter()
    try:
        final = evolve(state, stepper, T, ledger, history, warn=True, callback=callback)
    finally:
        ledger.to_csv(os.path.join(out_dir, "ledger.csv"))
    elapsed = time.perf_counter() - start

    out = RunOutput(basis, model, stepper, np.array([h[0] for h in history]),
                    np.stack([h[1] for h in history]), np.stack([h[2] for h in history]), ledger)
    u = basis.synthesize_array(final.c)
    checks = _checks(out, T)
    summary = {
        "t_final": final.time,
        "steps": nsteps[0],
        "n": basis.n,
        "scheme": stepper.scheme.value,
        "dt": stepper.dt,
        "cfl_limit": Dynamics(basis, model, kernel).cfl_limit(),
        "final": {
            "l2_sq": ledger.last("l2_sq"),
            "grad_l2_sq": ledger.last("grad_l2_sq"),
            "energy_total": ledger.last("energy_total"),
            "max_modulus": ledger.last("max_modulus"),
            "mean_unit_defect": float(np.mean(1.0 - np.sum(u * u, axis=0))),
        },
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
        "elapsed_s": elapsed,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def cmd_run(args):
    cfg = with_overrides(parse_config(args.config), seed=args.seed, output_dir=args.output)
    out_dir = cfg.run.output_dir
    os.makedirs(out_dir, exist_ok=True)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            summary = execute_run(cfg, out_dir)
        except NumericalFailure as exc:
            with open(os.path.join(out_dir, "error.json"), "w") as fh:
                json.dump(_error_record(exc), fh, indent=2)
            raise
        finally:
            for w in caught:
                print(f"warning: {w.message}", file=sys.stderr)
    for c in summary["checks"]:
        _log(args, f"{c['name']:<24} {c['value']:.3e}  tol {c['tol']:.0e}  {'ok' if c['passed'] else 'FAIL'}")
    _log(args, f"wrote {out_dir}")
    return EXIT_OK


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

def read_schedule(path):
    """``(n, eps[, dt])`` entries from a TOML ``entries = [[n, eps], ...]``
    file or from whitespace-separated lines (``#`` starts a comment)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError:
        data = None
    if data is not None and "entries" in data:
        raw = data["entries"]
    else:
        raw = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                raw.append([float(tok) for tok in line.replace(",", " ").split()])
            except ValueError:
                raise ParseError(f"{path}: cannot read schedule entry {line!r}", line=lineno, column=1) from None
    entries = []
    for item in raw:
        if len(item) not in (2, 3) or float(item[0]) != int(item[0]):
            raise ValidationError(f"schedule entries are (n, eps[, dt]), got {item}", key="schedule")
        entries.append((int(item[0]),) + tuple(float(v) for v in item[1:]))
    return entries


def _sweep_entry(payload):
    cfg_dict, n, eps, dt, out_dir = payload
    cfg = from_dict(cfg_dict)
    cfg = replace(cfg, basis=replace(cfg.basis, n=n), model=replace(cfg.model, epsilon=eps),
                  stepper=replace(cfg.stepper, dt=dt), run=replace(cfg.run, output_dir=out_dir))
    from .solver import initial_state, evolve

    domain = cfg.build_domain()
    basis = cfg.build_basis(domain)
    model = cfg.build_model(domain)
    stepper = cfg.build_stepper()
    kernel = _load_kernel(cfg, domain)
    state = initial_state(Field(domain, cfg.build_initial(domain)), basis, model, kernel)
    ledger = EnergyLedger(meta={"epsilon": eps, "alpha": model.alpha, "beta": model.beta})
    history = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        evolve(state, stepper, cfg.run.T, ledger, history)
    os.makedirs(out_dir, exist_ok=True)
    ledger.to_csv(os.path.join(out_dir, "ledger.csv"))
    write_snapshot(os.path.join(out_dir, "u_final.llgf"), basis.synthesize_array(history[-1][1]), history[-1][0])
    return (np.array([h[0] for h in history]), np.stack([h[1] for h in history]),
            np.stack([h[2] for h in history]), ledger.rows, [str(w.message) for w in caught])


def cmd_sweep(args):
    from .solver import RunOutput, StepperConfig, _normalize_schedule, summarize

    cfg = with_overrides(parse_config(args.config), seed=args.seed, output_dir=args.output)
    entries = _normalize_schedule(read_schedule(args.schedule), StepperConfig(cfg.stepper.scheme, cfg.stepper.dt))
    root = cfg.run.output_dir
    os.makedirs(root, exist_ok=True)
    base = to_dict(cfg)
    payloads = [(base, n, eps, dt, os.path.join(root, f"entry_{k:02d}")) for k, (n, eps, dt) in enumerate(entries)]
    if args.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_entry, payloads))
    else:
        results = [_sweep_entry(p) for p in payloads]
    domain = cfg.build_domain()
    runs = []
    for (n, eps, dt), (times, coeffs, rates, rows, msgs) in zip(entries, results):
        for m in msgs:
            print(f"warning: n={n} eps={eps:g}: {m}", file=sys.stderr)
        model = replace(cfg, model=replace(cfg.model, epsilon=eps)).build_model(domain)
        ledger = EnergyLedger(list(rows), {"epsilon": eps, "alpha": model.alpha})
        stepper = StepperConfig(cfg.stepper.scheme, dt)
        runs.append(RunOutput(build_basis(domain, n), model, stepper, times, coeffs, rates, ledger))
    rep = summarize(runs, entries)
    report = {
        "entries": [
            {"n": n, "epsilon": eps, "dt": dt, "mean_unit_defect": ud, "vol_identity_defect": vd}
            for (n, eps, dt), ud, vd in zip(entries, rep.unit_defects, rep.vol_defects)
        ],
        "cauchy": [{"i": i, "j": j, "l2_spacetime": v} for (i, j), v in rep.cauchy],
    }
    with open(os.path.join(root, "sweep_report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    _log(args, f"{'n':>5} {'eps':>10} {'dt':>10} {'mean(1-|u|^2)':>15} {'vol defect':>12}")
    for e in report["entries"]:
        _log(args, f"{e['n']:>5} {e['epsilon']:>10.4g} {e['dt']:>10.4g} "
                   f"{e['mean_unit_defect']:>15.6e} {e['vol_identity_defect']:>12.3e}")
    if report["cauchy"]:
        _log(args, "Cauchy differences ||u_i - u_j|| in L2(space-time):")
        for c in report["cauchy"]:
            _log(args, f"  {c['i']} {c['j']}  {c['l2_spacetime']:.6e}")
    return EXIT_OK


# --------------------------------------------------------------------------
# check and demag-kernel
# --------------------------------------------------------------------------

def cmd_check(args):
    from . import acceptance

    suite = args.suite.upper()
    if suite not in acceptance.SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(acceptance.SUITES)}")
    ok = True
    for crit in acceptance.SUITES[suite]:
        start = time.perf_counter()
        rows = acceptance.evaluate(crit)
        ok &= acceptance.criterion_passed(rows)
        for r in rows:
            print(acceptance.format_row(r))
        _log(args, f"      ({time.perf_counter() - start:.1f} s)")
    print(f"{suite}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_demag_kernel(args):
    from .demag import build_kernel, operator_norm_probe, save_kernel

    cfg = parse_config(args.config)
    domain = cfg.build_domain()
    start = time.perf_counter()
    kernel = build_kernel(domain)
    save_kernel(kernel, args.cache)
    _log(args, f"kernel for {domain.resolution} built in {time.perf_counter() - start:.2f} s -> {args.cache}")
    if not args.quiet:
        p = operator_norm_probe(kernel, trials=2, power_iters=20, seed=args.seed or 0)
        print(f"operator norm probe {p.probe:.4f}, power iteration {p.power:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=1, help="parallel sweep entries")
    common.add_argument("--output", default=None, help="output directory (overrides run.output_dir)")
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides run.seed)")
    common.add_argument("--quiet", action="store_true", help="only print warnings and errors")

    parser = _Parser(prog="llg-galerkin", description="Galerkin LLG and harmonic map heat flow solver")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("run", parents=[common], help="evolve one configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", parents=[common], help="run an (n, eps[, dt]) schedule")
    p.add_argument("config")
    p.add_argument("--schedule", required=True)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("check", parents=[common], help="run an acceptance suite")
    p.add_argument("suite", help="IDENTITIES, DEMAG, WEAKFORM or ALL")
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("demag-kernel", parents=[common], help="precompute a demag kernel cache")
    p.add_argument("config")
    p.add_argument("--cache", required=True)
    p.set_defaults(func=cmd_demag_kernel)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return EXIT_NUMERICAL
    except (ParseError, ValidationError, ValueError, OSError) as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
