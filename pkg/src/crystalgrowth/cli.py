"""Command-line front end.

Every command writes its artifacts under ``--out`` (nothing is written when
it is omitted), prints a one-line summary, and records a manifest that can
be fed back through ``--config`` to rerun it.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .analysis import (CombClassifier, classify_comb, estimate_dtilde, estimate_speeds,
                       fit_tail)
from .engine import CoupleSpec, OrderMonitor, run_coupled, run_gillespie, run_poisson
from .exact import (build_truncated, enumerate_comb_set, mu_n2, region_verdict,
                    solve_stationary, transience_constant, v2, v2_inf, vitesse_threshold)
from .model import Boundary, Configuration, RateTriple
from .sweep import SweepSpec, run_sweep
from .utils import check_beta, replica_seed


class CliError(Exception):
    pass


# -- argument helpers ----------------------------------------------------------

def _floats(text):
    return [float(p) for p in str(text).split(",") if p.strip()]


def _grid(text):
    """``a:b:step`` (inclusive of b up to rounding) or a comma list."""
    text = str(text)
    if ":" in text:
        a, b, step = (float(p) for p in text.split(":"))
        k = int(np.floor((b - a) / step + 1e-9))
        return [round(a + i * step, 12) for i in range(k + 1)]
    return _floats(text)


def _initial(args):
    boundary = Boundary.parse(args.boundary)
    if getattr(args, "init", None):
        cfg = Configuration.parse(args.init) if ":" in args.init else \
            Configuration(tuple(int(v) for v in _floats(args.init)), boundary)
        if args.n is not None and cfg.n != args.n:
            raise CliError(f"--init has {cfg.n} sites but --n is {args.n}")
        return cfg
    if args.n is None:
        raise CliError("need --n or --init")
    return Configuration.zeros(args.n, boundary)


def _beta(args):
    if args.beta is None:
        raise CliError("--beta B0,B1,B2 is required")
    try:
        return check_beta(args.beta)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _out_path(args, name):
    if not args.out:
        return None
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not serialisable: {type(v).__name__}")


# -- commands ------------------------------------------------------------------

def cmd_simulate(args, outputs):
    beta = _beta(args)
    cfg0 = _initial(args)
    k = max(1, int(args.snapshots))
    schedule = np.linspace(args.horizon / k, args.horizon, k)
    engine = run_gillespie if args.engine == "gillespie" else run_poisson
    traj = engine(beta, cfg0, args.horizon, schedule=schedule, seed=args.seed)
    csv_path = _out_path(args, "trajectory.csv")
    if csv_path:
        json_path = _out_path(args, "trajectory.json")
        traj.write(csv_path, json_path)
        outputs += [csv_path, json_path]
    final = traj.final
    return (f"simulate n={cfg0.n} beta={beta} T={args.horizon:g} events={traj.event_count} "
            f"mean speed={final.mean() / args.horizon:.6g}")


def cmd_couple(args, outputs):
    beta = _beta(args)
    cfg0 = _initial(args)
    mode = args.mode
    if mode == "attractive":
        upper = Configuration.parse(args.init_upper) if args.init_upper else \
            Configuration(tuple(h + 1 for h in cfg0.heights), cfg0.boundary)
        parts = [(beta, cfg0), (beta, upper)]
    elif mode == "sites":
        m = args.m if args.m is not None else cfg0.n + 2
        if m < cfg0.n:
            raise CliError("--m must be at least the number of sites")
        bigger = Configuration(cfg0.heights + (0,) * (m - cfg0.n), cfg0.boundary)
        parts = [(beta, cfg0), (beta, bigger)]
    else:
        if args.beta_prime is None:
            raise CliError("--beta-prime is required for --mode rates")
        bp = check_beta(args.beta_prime)
        if not all(beta[k] <= bp[l] for k in range(3) for l in range(k, 3)):
            raise CliError("rates coupling requires beta_k <= beta'_l for k <= l")
        parts = [(beta, cfg0), (bp, cfg0)]
    try:
        spec = CoupleSpec(parts, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    k = max(1, int(args.snapshots))
    mon = OrderMonitor([(0, 1)])
    trajs = run_coupled(spec, args.horizon, np.linspace(args.horizon / k, args.horizon, k), mon)
    report = {"mode": mode, "events": mon.events, "violations": mon.violations,
              "participants": [t.metadata() for t in trajs]}
    path = _out_path(args, "couple.json")
    if path:
        for i, t in enumerate(trajs):
            p = _out_path(args, f"participant_{i}.csv")
            t.to_csv(p)
            outputs.append(p)
        _write_json(path, report)
        outputs.append(path)
    return f"couple mode={mode} events={mon.events} violations={mon.violations}"


def cmd_speed(args, outputs):
    beta = _beta(args)
    cfg0 = _initial(args)
    est = estimate_speeds(beta, cfg0, args.horizon, args.replicas, args.seed,
                          engine=args.engine, threads=args.threads)
    path = _out_path(args, "speed.json")
    if path:
        _write_json(path, json.loads(est.to_json()))
        outputs.append(path)
    return (f"speed mean={est.mean_speed:.6g} per-site={np.round(est.speeds, 6).tolist()} "
            f"max gap/se={est.agreement:.3g}")


def cmd_tail(args, outputs):
    beta = _beta(args)
    cfg0 = _initial(args)
    horizons = _floats(args.horizons) if args.horizons else \
        [args.horizon / 10, args.horizon / 3, args.horizon]
    fit = fit_tail(beta, cfg0, args.coordinate, horizons, range(1, args.kmax + 1),
                   args.replicas, args.seed, threads=args.threads)
    path = _out_path(args, "tail.json")
    if path:
        _write_json(path, json.loads(fit.to_json()))
        outputs.append(path)
    return f"tail alpha={fit.alpha:.4g} tight={fit.tight} status={fit.status}"


def cmd_comb(args, outputs):
    beta = _beta(args)
    case = args.case
    try:
        if args.speeds:
            m = classify_comb(_floats(args.speeds), beta, case, args.tol)
            report = {"matched": m.matched, "nearest": m.nearest, "deviation": m.deviation,
                      "tol": m.tol, "case": case}
            summary = f"comb match={m.matched} deviation={m.deviation:.4g}"
        else:
            cfg0 = _initial(args)
            clf = CombClassifier(beta=beta.as_tuple(), case=case, tol=args.tol).fit(cfg0.n)
            speeds = np.array([
                run_poisson(beta, cfg0, args.horizon, seed=replica_seed(args.seed, r)).final
                for r in range(args.replicas)]) / args.horizon
            labels = clf.predict(speeds)
            dev = clf.transform(speeds).min(axis=1)
            report = {"case": case, "tol": clf.tol_, "combs": clf.combs_,
                      "speeds": speeds, "match_index": labels, "deviation": dev,
                      "matched": int((labels >= 0).sum()), "replicas": args.replicas}
            summary = f"comb matched {int((labels >= 0).sum())}/{args.replicas} (tol {clf.tol_:.4g})"
    except ValueError as exc:
        raise CliError(str(exc)) from None
    path = _out_path(args, "comb.json")
    if path:
        _write_json(path, report)
        outputs.append(path)
    return summary


def cmd_dtilde(args, outputs):
    beta = _beta(args)
    if args.n is None:
        raise CliError("--n is required")
    grid = _grid(args.grid) if args.grid else None
    horizons = _floats(args.horizons) if args.horizons else [100.0, 300.0, 1000.0, 3000.0]
    est = estimate_dtilde(args.n, beta.beta1, beta.beta0, grid, horizons, args.replicas,
                          args.seed, threads=args.threads)
    path = _out_path(args, "dtilde.json")
    if path:
        _write_json(path, json.loads(est.to_json()))
        outputs.append(path)
    return f"dtilde n={args.n} d_hat={est.d_hat:g} bracket={list(est.bracket)} flag={est.flag}"


def cmd_exact(args, outputs):
    raw = _floats(args.beta) if args.beta else None
    if raw is None or len(raw) != 3:
        raise CliError("--beta B0,B1,B2 is required")
    b0, b1, b2 = raw
    result = {}
    try:
        if args.v2:
            result["v2"] = v2(b0, b1)
        if args.v2_inf:
            result["v2_inf"] = v2_inf(b1, b2)
        if args.mu is not None:
            result["mu"] = mu_n2(b0, b1, args.mu)
        if args.vitesse is not None:
            result["vitesse_threshold"] = vitesse_threshold(b0, b2, args.vitesse)
        if args.transience_b:
            result["transience_B"] = transience_constant(b0, b2)
        if args.case:
            if args.n is None:
                raise CliError("--n is required with --case")
            result["comb_set"] = [list(v) for v in enumerate_comb_set(args.n, raw, args.case)]
        if args.solve:
            n = args.n or 2
            sol = solve_stationary(build_truncated(n, RateTriple(b0, b1, b2), args.truncation))
            result["throughput"] = sol.throughput.tolist()
            result["residual"] = sol.residual
            result["boundary_mass"] = sol.boundary_mass
            result["certified"] = sol.certified
            p = _out_path(args, "stationary.csv")
            if p:
                sol.to_csv(p)
                outputs.append(p)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if not result:
        raise CliError("nothing to compute; pass --v2, --v2-inf, --mu, --vitesse, "
                       "--transience-b, --case or --solve")
    path = _out_path(args, "exact.json")
    if path:
        _write_json(path, result)
        outputs.append(path)
    if len(result) == 1 and isinstance(next(iter(result.values())), float):
        return repr(next(iter(result.values())))
    return json.dumps(result, default=_json_default)


def cmd_verdict(args, outputs):
    raw = _floats(args.beta) if args.beta else None
    if raw is None or len(raw) != 3:
        raise CliError("--beta B0,B1,B2 is required")
    if args.n is None:
        raise CliError("--n is required")
    try:
        v = region_verdict(args.n, raw)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    path = _out_path(args, "verdict.json")
    if path:
        _write_json(path, v.to_dict())
        outputs.append(path)
    return v.to_json(sort_keys=True)


def cmd_sweep(args, outputs):
    if args.n is None:
        raise CliError("--n is required")
    if not (args.beta1_grid and args.beta2_grid):
        raise CliError("--beta1-grid and --beta2-grid are required")
    output = _out_path(args, "sweep.csv")
    try:
        spec = SweepSpec(n=args.n, beta1_grid=_grid(args.beta1_grid),
                         beta2_grid=_grid(args.beta2_grid), horizon=args.horizon,
                         replicas=args.replicas, estimators=tuple(args.estimators.split(",")),
                         seed=args.seed, output=output, box_radius=args.box_radius,
                         threads=args.threads)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    results = run_sweep(spec)
    if output:
        outputs += [output, os.path.splitext(output)[0] + ".manifest.json"]
    counts = {}
    for r in results:
        counts[r.label] = counts.get(r.label, 0) + 1
    return f"sweep {len(results)} points " + " ".join(f"{k}={v}" for k, v in sorted(counts.items()))


COMMANDS = {
    "simulate": cmd_simulate, "couple": cmd_couple, "speed": cmd_speed, "tail": cmd_tail,
    "comb": cmd_comb, "dtilde": cmd_dtilde, "exact": cmd_exact, "verdict": cmd_verdict,
    "sweep": cmd_sweep,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with flag values (or a manifest)")
    common.add_argument("--beta", help="rates B0,B1,B2")
    common.add_argument("--n", type=int)
    common.add_argument("--init", help="initial heights, e.g. zero:1,1,0,1,1")
    common.add_argument("--boundary", default="zero",
                        choices=[b.value for b in Boundary])
    common.add_argument("--horizon", type=float, default=1000.0)
    common.add_argument("--replicas", type=int, default=20)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=1)

    parser = argparse.ArgumentParser(prog="crystalgrowth",
                                     description="Crystal growth Markov model laboratory")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common])
    p.add_argument("--snapshots", type=int, default=1)
    p.add_argument("--engine", choices=["poisson", "gillespie"], default="poisson")

    p = sub.add_parser("couple", parents=[common])
    p.add_argument("--mode", choices=["attractive", "sites", "rates"], default="attractive")
    p.add_argument("--init-upper")
    p.add_argument("--m", type=int)
    p.add_argument("--beta-prime")
    p.add_argument("--snapshots", type=int, default=1)

    p = sub.add_parser("speed", parents=[common])
    p.add_argument("--engine", choices=["poisson", "gillespie"], default="poisson")

    p = sub.add_parser("tail", parents=[common])
    p.add_argument("--coordinate", type=int, default=1)
    p.add_argument("--horizons")
    p.add_argument("--kmax", type=int, default=10)

    p = sub.add_parser("comb", parents=[common])
    p.add_argument("--case", choices=["e1", "e2", "e3"], required=False)
    p.add_argument("--tol", type=float)
    p.add_argument("--speeds")

    p = sub.add_parser("dtilde", parents=[common])
    p.add_argument("--grid", help="candidate speeds a:b:step or list")
    p.add_argument("--horizons")

    p = sub.add_parser("exact", parents=[common])
    p.add_argument("--v2", action="store_true")
    p.add_argument("--v2-inf", action="store_true")
    p.add_argument("--mu", type=int)
    p.add_argument("--vitesse", type=float, metavar="EPS")
    p.add_argument("--transience-b", action="store_true")
    p.add_argument("--case", choices=["e1", "e2", "e3"])
    p.add_argument("--solve", action="store_true")
    p.add_argument("--truncation", type=int, default=30)

    sub.add_parser("verdict", parents=[common])

    p = sub.add_parser("sweep", parents=[common])
    p.add_argument("--beta1-grid")
    p.add_argument("--beta2-grid")
    p.add_argument("--estimators", default="recurrence")
    p.add_argument("--box-radius", type=int, default=5)
    return parser


_RUNTIME_KEYS = {"config", "command", "out", "threads"}


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if "config" in cfg and "command" in cfg:
            if cfg["command"] != args.command:
                raise CliError(f"config is for command {cfg['command']!r}")
            cfg = cfg["config"]
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**{k: v for k, v in cfg.items() if k not in _RUNTIME_KEYS})
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    command = argv[0] if argv else None
    try:
        args = _parse(argv)
        command = args.command
        outputs = []
        summary = COMMANDS[command](args, outputs)
        if args.out:
            config = {k: v for k, v in vars(args).items() if k not in _RUNTIME_KEYS}
            manifest = _out_path(args, f"{command}.manifest.json")
            outputs.append(manifest)
            _write_json(manifest, {"command": command, "config": config, "seed": args.seed,
                                   "tool_version": __version__, "outputs": outputs})
        print(summary)
        return 0
    except (CliError, ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc), "command": command, "type": type(exc).__name__}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
