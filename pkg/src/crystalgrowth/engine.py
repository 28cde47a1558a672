"""Event-driven simulation of the crystal process.

``run_poisson`` realises the dynamics from three independent Poisson
sub-streams per site with intensities ``b0, b1 - b0, b2 - b1`` (the sorted
rates); an event of sub-stream ``k`` at site ``j`` deposits iff the current
rate of ``j`` is at least ``b_k``. ``run_gillespie`` samples the generator
directly and serves as an independent oracle. ``run_coupled`` drives several
processes from one stream family, which is how the monotone couplings are
realised.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .model import Boundary, Configuration, RateTriple
from .utils import (as_seed_sequence, check_beta, check_configuration, check_horizon,
                    check_schedule, child_seed, seed_repr)

__all__ = [
    "StreamFamily",
    "Trajectory",
    "CoupleSpec",
    "OrderMonitor",
    "run_poisson",
    "run_gillespie",
    "run_coupled",
    "derive_aux_process",
]

# events per merged chunk, roughly
_CHUNK_EVENTS = 1 << 16
_FIRST_BLOCK = 8
_MAX_BLOCK = 4096


class _SubStream:
    """One homogeneous Poisson stream with i.i.d. exponential gaps.

    Gaps and marks are drawn in blocks whose sizes follow a fixed schedule, so
    the realised event sequence does not depend on how callers slice time.
    """

    def __init__(self, rate, seed):
        self.rate = float(rate)
        self._rng = np.random.default_rng(seed)
        self._block = _FIRST_BLOCK
        self._times = np.empty(0)
        self._marks = np.empty(0)
        self._last = 0.0

    def _refill(self):
        size = self._block
        self._block = min(2 * size, _MAX_BLOCK)
        gaps = self._rng.standard_exponential(size) / self.rate
        marks = self._rng.random(size)
        times = self._last + np.cumsum(gaps)
        self._last = times[-1]
        self._times = np.concatenate([self._times, times])
        self._marks = np.concatenate([self._marks, marks])

    def take(self, t_end):
        """Pop all pending events with time < t_end."""
        if self.rate <= 0:
            return self._times[:0], self._marks[:0]
        while self._last < t_end:
            self._refill()
        k = int(np.searchsorted(self._times, t_end, side="left"))
        out = self._times[:k], self._marks[:k]
        self._times = self._times[k:]
        self._marks = self._marks[k:]
        return out


class StreamFamily:
    """Per-site, per-level Poisson sub-streams derived from one seed.

    Sub-stream ``(j, k)`` (0-based site, level ``k`` in 0..2) has intensity
    ``levels[k] - levels[k-1]`` and its own seed ``child_seed(seed, j, k)``, so a
    family with fewer sites sees exactly the first sites of a larger one.
    Each event also carries a position, uniform on ``[levels[k-1], levels[k])``;
    over the superposed site stream positions are uniform on ``[0, levels[2])``.
    """

    def __init__(self, levels, n, seed):
        levels = tuple(float(b) for b in levels)
        if len(levels) != 3 or not 0 < levels[0] <= levels[1] <= levels[2]:
            raise ValueError(f"levels must be sorted positive rates, got {levels!r}")
        self.levels = levels
        self.n = int(n)
        self.seed = as_seed_sequence(seed)
        lows = (0.0, levels[0], levels[1])
        self.intensities = tuple(hi - lo for lo, hi in zip(lows, levels))
        self._lows = lows
        self._streams = [
            [_SubStream(self.intensities[k], child_seed(self.seed, j, k)) for k in range(3)]
            for j in range(self.n)
        ]

    @classmethod
    def for_rates(cls, beta, n, seed):
        return cls(check_beta(beta).levels, n, seed)

    def chunks(self, horizon):
        """Yield ``(times, sites, levels, positions)`` in event order up to horizon.

        Exact time ties are ordered by ``(site, level)``.
        """
        width = _CHUNK_EVENTS / max(self.n * self.levels[2], 1e-300)
        start = 0.0
        while start < horizon:
            end = min(start + width, horizon)
            last = end >= horizon
            parts_t, parts_s, parts_l, parts_p = [], [], [], []
            for j, row in enumerate(self._streams):
                for k, stream in enumerate(row):
                    # the final window is closed on the right
                    t, m = stream.take(np.nextafter(end, np.inf) if last else end)
                    if t.size:
                        parts_t.append(t)
                        parts_s.append(np.full(t.size, j, dtype=np.int64))
                        parts_l.append(np.full(t.size, k, dtype=np.int64))
                        parts_p.append(self._lows[k] + m * self.intensities[k])
            if parts_t:
                times = np.concatenate(parts_t)
                sites = np.concatenate(parts_s)
                levels = np.concatenate(parts_l)
                pos = np.concatenate(parts_p)
                order = np.lexsort((levels, sites, times))
                yield times[order], sites[order], levels[order], pos[order]
            start = end


@dataclass
class Trajectory:
    """Snapshots of one run, plus optionally the list of accepted deposits."""

    beta: RateTriple
    initial: Configuration
    horizon: float
    schedule: np.ndarray
    snapshots: np.ndarray
    event_count: int
    deposits: np.ndarray
    seed: object = None
    engine: str = "poisson"
    path_times: np.ndarray | None = field(default=None, repr=False)
    path_sites: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self):
        return self.initial.n

    @property
    def final(self):
        """Heights at the horizon."""
        return np.asarray(self.initial.heights, dtype=np.int64) + self.deposits

    @property
    def has_path(self):
        return self.path_times is not None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"site_{j + 1}" for j in range(self.n)])
            for t, row in zip(self.schedule, self.snapshots):
                w.writerow([repr(float(t))] + [int(v) for v in row])

    def metadata(self):
        return {
            "beta": list(self.beta.as_tuple()),
            "boundary": self.initial.boundary.value,
            "initial": str(self.initial),
            "seed": self.seed,
            "horizon": self.horizon,
            "event_count": int(self.event_count),
            "engine": self.engine,
        }

    def write(self, csv_path, json_path=None):
        self.to_csv(csv_path)
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(self.metadata(), fh, indent=2, sort_keys=True)


def _prepare(beta, cfg0, horizon, schedule):
    beta = check_beta(beta)
    cfg0 = check_configuration(cfg0)
    horizon = check_horizon(horizon)
    sched = check_schedule(schedule, horizon)
    return beta, cfg0, horizon, sched


def run_poisson(beta, cfg0, horizon, schedule=None, seed=0, record_path=False):
    """Simulate one trajectory by the Poisson construction."""
    beta, cfg0, horizon, sched = _prepare(beta, cfg0, horizon, schedule)
    n = cfg0.n
    family = StreamFamily.for_rates(beta, n, seed)
    heights = np.array(cfg0.heights, dtype=np.int64)
    deposits = np.zeros(n, dtype=np.int64)
    snapshots = np.empty((sched.size, n), dtype=np.int64)
    rates = np.array(beta.as_tuple())
    thresholds = np.array(family.levels)
    boundary = cfg0.boundary.code
    pos = 0
    count = 0
    path_t, path_s = [], []
    dummy_t = np.empty(0)
    dummy_s = np.empty(0, dtype=np.int64)
    for times, sites, levels, _ in family.chunks(horizon):
        count += times.size
        if record_path:
            buf_t = np.empty(times.size)
            buf_s = np.empty(times.size, dtype=np.int64)
            pos, used = _kernel.process_chunk(times, sites, levels, heights, boundary, rates,
                                              thresholds, sched, pos, snapshots, buf_t, buf_s,
                                              0, deposits)
            path_t.append(buf_t[:used])
            path_s.append(buf_s[:used])
        else:
            pos, _ = _kernel.process_chunk(times, sites, levels, heights, boundary, rates,
                                           thresholds, sched, pos, snapshots, dummy_t, dummy_s,
                                           -1, deposits)
    snapshots[pos:] = heights
    traj = Trajectory(beta=beta, initial=cfg0, horizon=horizon, schedule=sched,
                      snapshots=snapshots, event_count=count, deposits=deposits,
                      seed=seed_repr(seed), engine="poisson")
    if record_path:
        traj.path_times = np.concatenate(path_t) if path_t else np.empty(0)
        traj.path_sites = np.concatenate(path_s) if path_s else np.empty(0, dtype=np.int64)
    return traj


def run_gillespie(beta, cfg0, horizon, schedule=None, seed=0, record_path=False):
    """Simulate one trajectory by direct sampling of the jump chain.

    Holding times are exponential with the total rate, the receiving site is
    chosen proportionally to its rate.
    """
    beta, cfg0, horizon, sched = _prepare(beta, cfg0, horizon, schedule)
    n = cfg0.n
    boundary = cfg0.boundary.code
    rng = np.random.default_rng(as_seed_sequence(seed))
    heights = np.array(cfg0.heights, dtype=np.int64)
    b = beta.as_tuple()
    rates = [b[v] for v in _kernel.neighbor_counts(heights, boundary)]
    x = list(cfg0.heights)
    deposits = [0] * n
    snapshots = np.empty((sched.size, n), dtype=np.int64)
    pos = 0
    count = 0
    path_t, path_s = [], []
    t = 0.0
    periodic = cfg0.boundary is Boundary.PERIODIC
    while True:
        total = sum(rates)
        t += rng.standard_exponential() / total
        if t > horizon:
            break
        while pos < sched.size and sched[pos] < t:
            snapshots[pos] = x
            pos += 1
        u = rng.random() * total
        j = 0
        acc = rates[0]
        while acc <= u and j < n - 1:
            j += 1
            acc += rates[j]
        x[j] += 1
        deposits[j] += 1
        count += 1
        if record_path:
            path_t.append(t)
            path_s.append(j)
        for i in (j - 1, j, j + 1):
            if periodic:
                i %= n
            elif not 0 <= i < n:
                continue
            rates[i] = b[_count_py(x, i, boundary)]
    snapshots[pos:] = x
    traj = Trajectory(beta=beta, initial=cfg0, horizon=horizon, schedule=sched,
                      snapshots=snapshots, event_count=count,
                      deposits=np.array(deposits, dtype=np.int64),
                      seed=seed_repr(seed), engine="gillespie")
    if record_path:
        traj.path_times = np.array(path_t, dtype=float)
        traj.path_sites = np.array(path_s, dtype=np.int64)
    return traj


def _count_py(x, i, boundary):
    n = len(x)
    h = x[i]
    v = 0
    if i > 0:
        v += x[i - 1] > h
    elif boundary == 1:
        v += x[n - 1] > h
    elif boundary == 2:
        v += 1
    if i < n - 1:
        v += x[i + 1] > h
    elif boundary == 1:
        v += x[0] > h
    elif boundary >= 2:
        v += 1
    return v


# -- coupling ------------------------------------------------------------------

@dataclass
class CoupleSpec:
    """Processes to be driven by one shared stream family.

    ``participants`` is a list of ``(beta, initial configuration)``; processes
    with fewer sites use the streams of their own site indices only.
    """

    participants: list
    seed: object = 0

    def __post_init__(self):
        parts = []
        for beta, cfg in self.participants:
            beta = check_beta(beta)
            if not beta.is_monotone:
                raise ValueError(f"coupling needs beta0 <= beta1 <= beta2, got {beta}")
            parts.append((beta, check_configuration(cfg)))
        if not parts:
            raise ValueError("need at least one participant")
        self.participants = parts

    @property
    def n(self):
        return max(cfg.n for _, cfg in self.participants)

    @property
    def dominating_levels(self):
        levels = np.max([b.levels for b, _ in self.participants], axis=0)
        return tuple(float(v) for v in levels)


class OrderMonitor:
    """Counts violations of ``X_a <= X_b`` (on the common sites) per event.

    ``pairs`` lists participant index pairs ``(a, b)``.
    """

    def __init__(self, pairs):
        self.pairs = [tuple(p) for p in pairs]
        self.violations = 0
        self.events = 0

    def __call__(self, t, states):
        self.events += 1
        for a, b in self.pairs:
            xa, xb = states[a], states[b]
            m = min(len(xa), len(xb))
            for i in range(m):
                if xa[i] > xb[i]:
                    self.violations += 1
                    break


def run_coupled(spec, horizon, schedule=None, monitor=None):
    """Run all participants of ``spec`` on one stream family.

    A participant with rates ``beta`` accepts an event at site ``j`` with
    position ``p`` iff ``p < beta[V_j]``. Marginally each participant is a
    crystal process with its own rates. ``monitor(t, states)`` is called after
    every event, states being the list of height lists.
    """
    horizon = check_horizon(horizon)
    sched = check_schedule(schedule, horizon)
    family = StreamFamily(spec.dominating_levels, spec.n, spec.seed)
    parts = spec.participants
    states = [list(cfg.heights) for _, cfg in parts]
    bounds = [cfg.boundary.code for _, cfg in parts]
    rates = [b.as_tuple() for b, _ in parts]
    sizes = [cfg.n for _, cfg in parts]
    snaps = [np.empty((sched.size, n), dtype=np.int64) for n in sizes]
    deposits = [np.zeros(n, dtype=np.int64) for n in sizes]
    pos = 0
    count = 0
    for times, sites, _, positions in family.chunks(horizon):
        for t, j, p in zip(times.tolist(), sites.tolist(), positions.tolist()):
            while pos < sched.size and sched[pos] < t:
                for q, x in enumerate(states):
                    snaps[q][pos] = x
                pos += 1
            count += 1
            for q, x in enumerate(states):
                if j < sizes[q] and p < rates[q][_count_py(x, j, bounds[q])]:
                    x[j] += 1
                    deposits[q][j] += 1
            if monitor is not None:
                monitor(t, states)
    out = []
    for q, (beta, cfg) in enumerate(parts):
        snaps[q][pos:] = states[q]
        out.append(Trajectory(beta=beta, initial=cfg, horizon=horizon, schedule=sched,
                              snapshots=snaps[q], event_count=count, deposits=deposits[q],
                              seed=seed_repr(spec.seed), engine="coupled"))
    return out


def derive_aux_process(beta):
    """Rates ``(beta0, beta1, beta1)`` of the auxiliary process."""
    beta = check_beta(beta)
    return RateTriple(beta.beta0, beta.beta1, beta.beta1)
