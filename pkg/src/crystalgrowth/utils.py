"""Input validation, seed derivation and replica fan-out."""
from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .model import Boundary, Configuration, RateTriple


def check_beta(beta):
    """Coerce ``beta`` (triple, sequence or ``"b0,b1,b2"``) to a RateTriple."""
    if isinstance(beta, RateTriple):
        return beta
    if isinstance(beta, str):
        return RateTriple.parse(beta)
    values = tuple(beta)
    if len(values) != 3:
        raise ValueError(f"beta must have three components, got {values!r}")
    return RateTriple(*values)


def check_configuration(cfg, n=None, boundary=None):
    """Coerce ``cfg`` to a Configuration.

    Accepts a Configuration, its canonical text form, a height sequence, or
    None together with ``n`` (the all-zero start).
    """
    if cfg is None:
        if n is None:
            raise ValueError("need either an initial configuration or n")
        return Configuration.zeros(int(n), boundary or Boundary.ZERO)
    if isinstance(cfg, Configuration):
        out = cfg
    elif isinstance(cfg, str):
        out = Configuration.parse(cfg)
    else:
        out = Configuration(tuple(int(h) for h in cfg), boundary or Boundary.ZERO)
    if n is not None and out.n != n:
        raise ValueError(f"configuration has {out.n} sites, expected {n}")
    return out


def check_horizon(horizon):
    horizon = float(horizon)
    if not np.isfinite(horizon) or horizon <= 0:
        raise ValueError(f"horizon must be positive and finite, got {horizon!r}")
    return horizon


def check_schedule(schedule, horizon):
    """Sorted snapshot times in ``[0, horizon]``; defaults to ``[horizon]``."""
    if schedule is None:
        return np.array([horizon])
    sched = np.sort(np.atleast_1d(np.asarray(schedule, dtype=float)))
    if sched.size and (sched[0] < 0 or sched[-1] > horizon):
        raise ValueError("snapshot times must lie in [0, horizon]")
    return sched


def as_seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        raise ValueError("a seed is required for reproducible runs")
    return np.random.SeedSequence(int(seed))


def child_seed(seed, *key):
    """Deterministic child of ``seed`` addressed by an integer key path."""
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in key))


def replica_seed(seed, r):
    return child_seed(seed, r)


def seed_repr(seed):
    ss = as_seed_sequence(seed)
    if not ss.spawn_key:
        return int(ss.entropy)
    return {"entropy": int(ss.entropy), "spawn_key": [int(k) for k in ss.spawn_key]}


def stable_hash(*parts):
    """64-bit integer from the text of ``parts``; stable across processes."""
    text = "|".join(repr(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def parallel_map(fn, items, threads=1):
    """``[fn(x) for x in items]`` in item order, optionally across processes."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    threads = min(int(threads), os.cpu_count() or 1, len(items))
    chunk = max(1, len(items) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
