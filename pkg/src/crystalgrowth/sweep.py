"""Phase-diagram sweeps over ``(beta1, beta2)`` at ``beta0 = 1``.

Every grid point gets the theorem-based verdict plus optional empirical
statistics. Points are seeded from their parameters, so refining a grid
never changes existing rows, and the output table is resumable.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .analysis import fit_tail, shape_path, estimate_speeds
from .engine import run_poisson
from .exact import region_verdict
from .utils import child_seed, parallel_map, stable_hash

__all__ = ["SweepSpec", "PointResult", "recurrence_statistics", "run_sweep",
           "load_table", "write_table", "COLUMNS"]

COLUMNS = ["n", "beta1", "beta2", "verdict", "cond_prior", "cond_a", "cond_b", "cond_c",
           "comb_case", "transience_B", "returns", "last_return", "occupation", "alpha_hat",
           "speed_mean", "status"]

ESTIMATORS = ("recurrence", "tail", "speed")


@dataclass
class SweepSpec:
    n: int
    beta1_grid: list
    beta2_grid: list
    horizon: float = 1000.0
    replicas: int = 10
    estimators: tuple = ("recurrence",)
    seed: int = 0
    output: str | None = None
    box_radius: int = 5
    threads: int = 1

    def __post_init__(self):
        self.beta1_grid = [float(b) for b in self.beta1_grid]
        self.beta2_grid = [float(b) for b in self.beta2_grid]
        for name in ("beta1_grid", "beta2_grid"):
            g = getattr(self, name)
            if not g or any(b <= 0 for b in g):
                raise ValueError(f"{name} must be a non-empty list of positive rates")
            if any(b >= c for b, c in zip(g, g[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        self.estimators = tuple(self.estimators)
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise ValueError(f"unknown estimators {sorted(bad)}; choose from {ESTIMATORS}")
        if self.n < 2:
            raise ValueError("sweeps need n >= 2")

    def points(self):
        return [(self.n, b1, b2) for b1 in self.beta1_grid for b2 in self.beta2_grid]

    def to_dict(self):
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        d.pop("threads")
        return d


@dataclass
class PointResult:
    n: int
    beta1: float
    beta2: float
    verdict: object                   # RegionVerdict, or a label when loaded from disk
    returns: int | None = None
    last_return: float | None = None
    occupation: float | None = None
    returns_stopped: bool | None = None
    alpha_hat: float | None = None
    speed_mean: float | None = None
    wall_time: float | None = None
    status: str = "ok"
    flags: dict = field(default_factory=dict)

    @property
    def key(self):
        return (self.n, self.beta1, self.beta2)

    @property
    def label(self):
        return self.verdict if isinstance(self.verdict, str) else self.verdict.label

    def row(self):
        v = self.verdict
        if isinstance(v, str):
            f = self.flags
        else:
            f = {"cond_prior": v.cond_prior, "cond_a": v.cond_a, "cond_b": v.cond_b,
                 "cond_c": v.cond_c, "comb_case": v.comb_case, "transience_B": v.transience_B}
        return {
            "n": str(self.n),
            "beta1": _fmt(self.beta1),
            "beta2": _fmt(self.beta2),
            "verdict": self.label,
            "cond_prior": _fmt(f.get("cond_prior")),
            "cond_a": _fmt(f.get("cond_a")),
            "cond_b": _fmt(f.get("cond_b")),
            "cond_c": _fmt(f.get("cond_c")),
            "comb_case": f.get("comb_case") or "",
            "transience_B": _fmt(f.get("transience_B")),
            "returns": _fmt(self.returns),
            "last_return": _fmt(self.last_return),
            "occupation": _fmt(self.occupation),
            "alpha_hat": _fmt(self.alpha_hat),
            "speed_mean": _fmt(self.speed_mean),
            "status": self.status,
        }


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse(text, kind):
    if text == "":
        return None
    if kind is bool:
        return text == "true"
    return kind(text)


def recurrence_statistics(traj, box_radius=5):
    """Returns of the shape to zero and box occupation, at event resolution.

    ``traj`` is a path-recorded Trajectory, or a ``(times, shapes, horizon)``
    triple. A return is an entry into the zero shape from a nonzero one.
    """
    if isinstance(traj, tuple):
        times, shapes, horizon = traj
    else:
        times, shapes = shape_path(traj)
        horizon = traj.horizon
    times = np.asarray(times, dtype=float)
    shapes = np.asarray(shapes)
    zero = np.all(shapes == 0, axis=1) if shapes.shape[1] else np.ones(len(times), bool)
    entries = np.flatnonzero(zero[1:] & ~zero[:-1]) + 1
    ends = np.append(times[1:], horizon)
    dur = np.clip(ends, None, horizon) - np.clip(times, None, horizon)
    inbox = np.all(np.abs(shapes) <= box_radius, axis=1) if shapes.shape[1] else np.ones(len(times), bool)
    occupation = float(dur[inbox].sum() / horizon)
    last = float(times[entries[-1]]) if len(entries) else None
    return {
        "returns": int(len(entries)),
        "last_return": last,
        "occupation": occupation,
        "returns_stopped": last is None or last < horizon / 2,
    }


def point_seed(seed, n, beta1, beta2):
    return stable_hash(int(seed), int(n), float(beta1), float(beta2))


def _run_point(args):
    spec, (n, b1, b2) = args
    start = time.perf_counter()
    beta = (1.0, b1, b2)
    verdict = region_verdict(n, beta)
    res = PointResult(n=n, beta1=b1, beta2=b2, verdict=verdict)
    seed = point_seed(spec.seed, n, b1, b2)
    try:
        cfg0 = (0,) * n
        if "recurrence" in spec.estimators:
            tr = run_poisson(beta, cfg0, spec.horizon, seed=child_seed(seed, 0), record_path=True)
            st = recurrence_statistics(tr, spec.box_radius)
            res.returns = st["returns"]
            res.last_return = st["last_return"]
            res.occupation = st["occupation"]
            res.returns_stopped = st["returns_stopped"]
        if "tail" in spec.estimators:
            H = spec.horizon
            fit = fit_tail(beta, cfg0, 1, (H / 10, H / 3, H), range(1, 11), spec.replicas,
                           child_seed(seed, 1))
            res.alpha_hat = None if math.isnan(fit.alpha) else fit.alpha
        if "speed" in spec.estimators:
            sp = estimate_speeds(beta, cfg0, spec.horizon, spec.replicas, child_seed(seed, 2))
            res.speed_mean = sp.mean_speed
    except Exception as exc:  # recorded per point, the sweep goes on
        res.status = f"error: {type(exc).__name__}: {exc}"
    res.wall_time = time.perf_counter() - start
    return res


def write_table(results, path):
    rows = sorted(results, key=lambda r: r.key)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.row())
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_table(path):
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            flags = {
                "cond_prior": _parse(rec["cond_prior"], bool),
                "cond_a": _parse(rec["cond_a"], bool),
                "cond_b": _parse(rec["cond_b"], bool),
                "cond_c": _parse(rec["cond_c"], bool),
                "comb_case": rec["comb_case"] or None,
                "transience_B": _parse(rec["transience_B"], float),
            }
            out.append(PointResult(
                n=int(rec["n"]), beta1=float(rec["beta1"]), beta2=float(rec["beta2"]),
                verdict=rec["verdict"], returns=_parse(rec["returns"], int),
                last_return=_parse(rec["last_return"], float),
                occupation=_parse(rec["occupation"], float),
                alpha_hat=_parse(rec["alpha_hat"], float),
                speed_mean=_parse(rec["speed_mean"], float),
                status=rec["status"], flags=flags))
    return out


def _write_manifest(spec, path):
    manifest = {"spec": spec.to_dict(), "seed": spec.seed, "version": __version__,
                "columns": COLUMNS}
    with open(os.path.splitext(path)[0] + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_sweep(spec):
    """Evaluate every grid point; skip points already present in ``spec.output``.

    Returns the full list of PointResult sorted by ``(n, beta1, beta2)``.
    The table is rewritten after each completed point.
    """
    done = {}
    if spec.output and os.path.exists(spec.output):
        done = {r.key: r for r in load_table(spec.output)}
    todo = [p for p in spec.points() if p not in done]
    if spec.output:
        _write_manifest(spec, spec.output)
    results = dict(done)
    if spec.threads and spec.threads > 1:
        for res in parallel_map(_run_point, [(spec, p) for p in todo], spec.threads):
            results[res.key] = res
        if spec.output:
            write_table(results.values(), spec.output)
    else:
        for p in todo:
            res = _run_point((spec, p))
            results[res.key] = res
            if spec.output:
                write_table(results.values(), spec.output)
    if spec.output and not todo:
        write_table(results.values(), spec.output)
    wanted = set(spec.points())
    return sorted((r for k, r in results.items() if k in wanted), key=lambda r: r.key)
