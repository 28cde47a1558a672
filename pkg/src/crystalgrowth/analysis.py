"""Statistical estimators over simulated trajectories.

The estimators follow the scikit-learn conventions: constructor arguments are
stored verbatim (so ``get_params``/``set_params``/``clone`` work), ``fit``
runs the simulations and stores results in trailing-underscore attributes,
including a typed ``result_`` record. Module-level functions wrap them for
one-shot use.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .engine import derive_aux_process, run_gillespie, run_poisson
from .exact import enumerate_comb_set
from .model import Boundary, Shape, shape_neighbor_count
from .utils import (check_beta, check_configuration, check_horizon, parallel_map,
                    replica_seed, seed_repr)

__all__ = [
    "SpeedEstimate", "TailFit", "CombMatch", "DtildeEstimate", "OccupationTable",
    "SpeedEstimator", "TailEstimator", "CombClassifier", "DtildeEstimator",
    "estimate_speeds", "fit_tail", "classify_comb", "estimate_dtilde",
    "empirical_shape_distribution", "shape_path", "throughput_from_occupation",
    "wilson_interval",
]

_ENGINES = {"poisson": run_poisson, "gillespie": run_gillespie}


def _check_fitted(est, attr="result_"):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


def _report(obj):
    def conv(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        if isinstance(v, dict):
            return {str(k): conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v
    return {k: conv(v) for k, v in asdict(obj).items()}


# -- replica helpers -----------------------------------------------------------

def _final_heights(r, beta, cfg0, horizon, seed, engine):
    return _ENGINES[engine](beta, cfg0, horizon, seed=replica_seed(seed, r)).final


def _snapshots(r, beta, cfg0, horizon, schedule, seed):
    return run_poisson(beta, cfg0, horizon, schedule=schedule, seed=replica_seed(seed, r)).snapshots


# -- speeds --------------------------------------------------------------------

@dataclass
class SpeedEstimate:
    speeds: np.ndarray
    stderr: np.ndarray
    replicas: int
    horizon: float
    agreement: float
    seed: object = None

    @property
    def mean_speed(self):
        return float(np.mean(self.speeds))

    def to_json(self, **kw):
        return json.dumps(_report(self), **kw)


class SpeedEstimator(BaseEstimator):
    """Per-site growth speeds ``X_T(j) / T`` averaged over replicas.

    Parameters
    ----------
    beta : rate triple
    horizon : float
        Final time ``T``; speeds use the endpoint only.
    replicas : int
    seed : int
        Replica ``r`` uses the child seed ``(seed, r)``.
    engine : {"poisson", "gillespie"}
    threads : int
        Worker processes; results do not depend on it.
    """

    def __init__(self, beta=(1.0, 1.0, 1.0), horizon=1000.0, replicas=20, seed=0,
                 engine="poisson", threads=1):
        self.beta = beta
        self.horizon = horizon
        self.replicas = replicas
        self.seed = seed
        self.engine = engine
        self.threads = threads

    def fit(self, X, y=None):
        """``X`` is the initial configuration (or a height sequence)."""
        beta = check_beta(self.beta)
        cfg0 = check_configuration(X)
        T = check_horizon(self.horizon)
        if self.engine not in _ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.replicas < 1:
            raise ValueError("need at least one replica")
        job = partial(_final_heights, beta=beta, cfg0=cfg0, horizon=T, seed=self.seed,
                      engine=self.engine)
        finals = np.array(parallel_map(job, range(self.replicas), self.threads), dtype=float)
        self.per_replica_ = finals / T
        self.speeds_ = self.per_replica_.mean(axis=0)
        if self.replicas > 1:
            self.stderr_ = self.per_replica_.std(axis=0, ddof=1) / np.sqrt(self.replicas)
        else:
            self.stderr_ = np.full(cfg0.n, np.inf)
        self.agreement_ = _max_gap_in_se(self.speeds_, self.stderr_)
        self.result_ = SpeedEstimate(speeds=self.speeds_, stderr=self.stderr_,
                                     replicas=self.replicas, horizon=T,
                                     agreement=self.agreement_, seed=seed_repr(self.seed))
        return self

    def predict(self, X=None):
        _check_fitted(self)
        return self.speeds_


def _max_gap_in_se(speeds, se):
    n = len(speeds)
    worst = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            comb = np.hypot(se[a], se[b])
            gap = abs(speeds[a] - speeds[b])
            worst = max(worst, gap / comb if comb > 0 else (np.inf if gap else 0.0))
    return float(worst)


def estimate_speeds(beta, cfg0, horizon, replicas, seed, engine="poisson", threads=1):
    est = SpeedEstimator(beta=beta, horizon=horizon, replicas=replicas, seed=seed,
                         engine=engine, threads=threads)
    return est.fit(cfg0).result_


# -- exponential tails ---------------------------------------------------------

@dataclass
class TailFit:
    coordinate: int
    k_grid: np.ndarray
    horizons: np.ndarray
    probs: np.ndarray          # (len(horizons), len(k_grid))
    log_probs: np.ndarray
    slopes: np.ndarray         # per-horizon decay rates (positive = decaying)
    alpha: float               # common decay rate
    intercepts: np.ndarray
    r2: float
    stable: bool
    tight: bool
    status: str
    replicas: int = 0
    seed: object = None

    def to_json(self, **kw):
        return json.dumps(_report(self), **kw)


def _decay_fit(ks, logp):
    """Least-squares decay rate of ``log p`` against ``k``; NaN if < 2 points."""
    ok = np.isfinite(logp)
    if ok.sum() < 2:
        return np.nan, np.nan
    slope, intercept = np.polyfit(ks[ok], logp[ok], 1)
    return -slope, intercept


class TailEstimator(BaseEstimator):
    """Exponential tail of ``|x(j) - x(j+1)|`` across several horizons.

    A tail counts as exponentially tight when the common decay rate is
    positive, every horizon shows a positive decay rate, and the largest
    per-horizon rate is at most ``stability_ratio`` times the smallest.
    """

    def __init__(self, beta=(1.0, 2.0, 3.0), coordinate=1, horizons=(100.0, 300.0, 1000.0),
                 k_grid=tuple(range(1, 11)), replicas=500, seed=0, stability_ratio=3.0,
                 threads=1):
        self.beta = beta
        self.coordinate = coordinate
        self.horizons = horizons
        self.k_grid = k_grid
        self.replicas = replicas
        self.seed = seed
        self.stability_ratio = stability_ratio
        self.threads = threads

    def fit(self, X, y=None):
        beta = check_beta(self.beta)
        cfg0 = check_configuration(X)
        n = cfg0.n
        j = int(self.coordinate)
        n_coords = n if cfg0.boundary is Boundary.PERIODIC else n - 1
        if not 1 <= j <= n_coords:
            raise ValueError(f"shape coordinate {j} out of range 1..{n_coords}")
        horizons = np.sort(np.asarray(self.horizons, dtype=float))
        ks = np.asarray(self.k_grid, dtype=float)
        job = partial(_snapshots, beta=beta, cfg0=cfg0, horizon=float(horizons[-1]),
                      schedule=horizons, seed=self.seed)
        snaps = np.array(parallel_map(job, range(self.replicas), self.threads))
        right = snaps[:, :, j % n]
        absdiff = np.abs(snaps[:, :, j - 1] - right)          # (R, H)
        probs = (absdiff[:, :, None] >= ks[None, None, :]).mean(axis=0)
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        logp[probs == 0] = -np.inf
        slopes = np.empty(len(horizons))
        intercepts = np.empty(len(horizons))
        for h in range(len(horizons)):
            slopes[h], intercepts[h] = _decay_fit(ks, logp[h])

        # common slope, one intercept per horizon
        rows, ys = [], []
        for h in range(len(horizons)):
            for i, k in enumerate(ks):
                if np.isfinite(logp[h, i]):
                    row = np.zeros(len(horizons) + 1)
                    row[h] = 1.0
                    row[-1] = k
                    rows.append(row)
                    ys.append(logp[h, i])
        usable = [np.isfinite(logp[h]).sum() >= 2 for h in range(len(horizons))]
        if not all(usable):
            status = "tail too light to fit"
            alpha, r2 = np.nan, np.nan
        else:
            A, yv = np.array(rows), np.array(ys)
            coef, *_ = np.linalg.lstsq(A, yv, rcond=None)
            alpha = float(-coef[-1])
            resid = yv - A @ coef
            ss_tot = float(((yv - yv.mean()) ** 2).sum())
            r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
            intercepts = coef[:-1]
            status = "ok"
        positive = bool(np.all(np.nan_to_num(slopes, nan=0.0) > 0))
        if positive:
            stable = bool(slopes.max() <= self.stability_ratio * slopes.min())
        else:
            stable = False
        tight = status == "ok" and alpha > 0 and positive and stable
        self.probs_ = probs
        self.alpha_ = alpha
        self.tight_ = tight
        self.result_ = TailFit(coordinate=j, k_grid=ks, horizons=horizons, probs=probs,
                               log_probs=logp, slopes=slopes, alpha=alpha,
                               intercepts=np.asarray(intercepts), r2=r2, stable=stable,
                               tight=tight, status=status, replicas=self.replicas,
                               seed=seed_repr(self.seed))
        return self


def fit_tail(beta, cfg0, j, horizons, k_grid, replicas, seed, threads=1, stability_ratio=3.0):
    est = TailEstimator(beta=beta, coordinate=j, horizons=tuple(horizons),
                        k_grid=tuple(k_grid), replicas=replicas, seed=seed,
                        stability_ratio=stability_ratio, threads=threads)
    return est.fit(cfg0).result_


# -- comb classification -------------------------------------------------------

@dataclass
class CombMatch:
    observed: np.ndarray
    matched: tuple | None
    deviation: float
    nearest: tuple
    case: str
    tol: float

    @property
    def is_match(self):
        return self.matched is not None


class CombClassifier(BaseEstimator):
    """Nearest admissible comb vector in the sup norm.

    ``fit`` enumerates the comb set for ``(n, beta, case)``; ``predict`` maps
    each row of observed speeds to the index of its nearest element, or -1 if
    that element is farther than ``tol`` in some coordinate. ``tol=None`` means
    ``0.05 * max(beta)``.
    """

    def __init__(self, beta=(2.0, 3.0, 1.0), case="e1", tol=None):
        self.beta = beta
        self.case = case
        self.tol = tol

    def fit(self, X, y=None):
        """``X`` is the number of sites, or speed rows whose width gives it."""
        n = int(X) if np.isscalar(X) else np.atleast_2d(X).shape[1]
        beta = check_beta(self.beta).as_tuple()
        combs = enumerate_comb_set(n, beta, self.case)
        if not combs:
            raise ValueError(f"empty comb set for n={n}, case {self.case}")
        self.n_sites_ = n
        self.combs_ = np.array(combs, dtype=float)
        self.tol_ = 0.05 * max(beta) if self.tol is None else float(self.tol)
        return self

    def transform(self, X):
        """Sup-norm distance from each row to each comb element."""
        _check_fitted(self, "combs_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_sites_:
            raise ValueError(f"expected {self.n_sites_} speeds per row, got {X.shape[1]}")
        return np.abs(X[:, None, :] - self.combs_[None, :, :]).max(axis=2)

    def predict(self, X):
        dev = self.transform(X)
        best = dev.argmin(axis=1)          # first minimiser on ties
        best[dev[np.arange(len(best)), best] > self.tol_] = -1
        return best

    def match(self, speeds):
        speeds = np.asarray(speeds, dtype=float)
        dev = self.transform(speeds)[0]
        i = int(dev.argmin())
        nearest = tuple(float(v) for v in self.combs_[i])
        ok = dev[i] <= self.tol_
        return CombMatch(observed=speeds, matched=nearest if ok else None,
                         deviation=float(dev[i]), nearest=nearest, case=self.case,
                         tol=self.tol_)


def classify_comb(speeds, beta, case, tol=None):
    speeds = np.asarray(speeds, dtype=float)
    clf = CombClassifier(beta=beta, case=case, tol=tol).fit(len(speeds))
    return clf.match(speeds)


# -- threshold of the auxiliary process ----------------------------------------

def wilson_interval(successes, trials, confidence=0.95):
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(
        confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class DtildeEstimate:
    n: int
    beta0: float
    beta1: float
    d_grid: np.ndarray
    horizons: np.ndarray
    probs: np.ndarray          # (len(d_grid), len(horizons))
    decay: np.ndarray          # regression decay rate per d
    decay_lower: np.ndarray    # conservative lower endpoint per d
    significant: np.ndarray
    d_hat: float
    bracket: tuple
    flag: str
    replicas: int = 0
    seed: object = None

    @property
    def width(self):
        return self.bracket[1] - self.bracket[0]

    def to_json(self, **kw):
        return json.dumps(_report(self), **kw)


def _right_edge(r, beta, n, horizons, seed):
    tr = run_poisson(beta, (0,) * n, float(horizons[-1]), schedule=horizons,
                     seed=replica_seed(seed, r))
    return tr.snapshots[:, n - 1]


class DtildeEstimator(BaseEstimator):
    """Bracket for the large-deviation threshold of the auxiliary process.

    For each candidate speed ``d`` the right-edge probabilities
    ``P(X(n)_t >= d t)`` are estimated at every horizon with Wilson intervals.
    The decay in ``t`` is significantly positive when
    ``(log L(t_first) - log U(t_last)) / (t_last - t_first) > 0``. The estimate
    is the smallest such grid point; the bracket runs from the grid point
    below it.
    """

    def __init__(self, n=1, beta1=3.0, beta0=1.0, d_grid=None,
                 horizons=(100.0, 300.0, 1000.0, 3000.0), replicas=1000, seed=0,
                 confidence=0.95, threads=1):
        self.n = n
        self.beta1 = beta1
        self.beta0 = beta0
        self.d_grid = d_grid
        self.horizons = horizons
        self.replicas = replicas
        self.seed = seed
        self.confidence = confidence
        self.threads = threads

    def fit(self, X=None, y=None):
        b0, b1 = float(self.beta0), float(self.beta1)
        if b1 < b0:
            raise ValueError("need beta1 >= beta0")
        n = int(self.n)
        if n < 1:
            raise ValueError("n must be >= 1")
        horizons = np.sort(np.asarray(self.horizons, dtype=float))
        if len(horizons) < 3:
            raise ValueError("need at least three horizons to witness decay")
        if self.d_grid is None:
            d_grid = np.round(np.arange(b0 - 0.1 * b0, b1 + 0.1 * b0 + 1e-9, 0.05 * b0), 10)
        else:
            d_grid = np.sort(np.asarray(self.d_grid, dtype=float))
        aux = derive_aux_process((b0, b1, b1))
        R = int(self.replicas)
        if b1 == b0:
            edge = None
        else:
            job = partial(_right_edge, beta=aux, n=n, horizons=horizons, seed=self.seed)
            edge = np.array(parallel_map(job, range(R), self.threads))   # (R, H)

        probs = np.zeros((len(d_grid), len(horizons)))
        decay = np.full(len(d_grid), np.nan)
        lower = np.full(len(d_grid), np.nan)
        significant = np.zeros(len(d_grid), bool)
        if edge is not None:
            for i, d in enumerate(d_grid):
                hits = (edge >= d * horizons[None, :]).sum(axis=0)
                p = hits / R
                probs[i] = p
                logp = np.log(np.clip(p, 0.5 / R, None))
                decay[i] = -np.polyfit(horizons, logp, 1)[0]
                lo_first, _ = wilson_interval(hits[0], R, self.confidence)
                _, hi_last = wilson_interval(hits[-1], R, self.confidence)
                if lo_first > 0:
                    lower[i] = (np.log(lo_first) - np.log(hi_last)) / (horizons[-1] - horizons[0])
                    significant[i] = lower[i] > 0

        if b1 == b0:
            d_hat, bracket, flag = b0, (b0, b0), "degenerate"
        elif significant.any():
            i = int(np.argmax(significant))
            d_hat = float(d_grid[i])
            below = float(d_grid[i - 1]) if i > 0 else b0
            flag = "ok"
            if d_hat > b1:
                d_hat, flag = b1, "upper endpoint"
            if d_hat < b0:
                d_hat, flag = b0, "lower endpoint"
            bracket = (min(max(below, b0), d_hat), d_hat)
        else:
            d_hat, bracket, flag = b1, (float(d_grid[-1]) if len(d_grid) else b0, b1), "upper endpoint"
            bracket = (min(bracket[0], b1), b1)
        self.d_hat_ = d_hat
        self.bracket_ = bracket
        self.result_ = DtildeEstimate(n=n, beta0=b0, beta1=b1, d_grid=d_grid, horizons=horizons,
                                      probs=probs, decay=decay, decay_lower=lower,
                                      significant=significant, d_hat=d_hat, bracket=bracket,
                                      flag=flag, replicas=R, seed=seed_repr(self.seed))
        return self


def estimate_dtilde(n, beta1, beta0, d_grid, horizons, replicas, seed, threads=1):
    est = DtildeEstimator(n=n, beta1=beta1, beta0=beta0, d_grid=d_grid,
                          horizons=tuple(horizons), replicas=replicas, seed=seed,
                          threads=threads)
    return est.fit().result_


# -- occupation of shapes --------------------------------------------------------

def shape_path(traj):
    """Shapes after each accepted deposit of a path-recorded trajectory.

    Returns ``(times, shapes)`` with ``times[0] = 0`` holding the initial
    shape; shapes have ``n - 1`` columns (``n`` for periodic boundaries).
    """
    if not traj.has_path:
        raise ValueError("trajectory was run without record_path=True")
    x0 = np.asarray(traj.initial.heights, dtype=np.int64)
    periodic = traj.initial.boundary is Boundary.PERIODIC
    n = len(x0)
    m = n if periodic else n - 1
    h0 = x0[:-1] - x0[1:]
    if periodic:
        h0 = np.append(h0, x0[-1] - x0[0])
    sites = traj.path_sites
    steps = np.zeros((len(sites), m), dtype=np.int64)
    rows = np.arange(len(sites))
    if periodic:
        np.add.at(steps, (rows, sites % m), 1)
        np.add.at(steps, (rows, (sites - 1) % m), -1)
    else:
        up = sites < n - 1
        np.add.at(steps, (rows[up], sites[up]), 1)
        dn = sites > 0
        np.add.at(steps, (rows[dn], sites[dn] - 1), -1)
    shapes = np.vstack([h0[None, :], h0[None, :] + np.cumsum(steps, axis=0)])
    times = np.concatenate([[0.0], traj.path_times])
    return times, shapes


def _occupation(times, shapes, start, stop):
    # time spent in each shape on [start, stop]
    ends = np.append(times[1:], np.inf)
    lo = np.clip(times, start, stop)
    hi = np.clip(ends, start, stop)
    dur = hi - lo
    keep = dur > 0
    uniq, inv = np.unique(shapes[keep], axis=0, return_inverse=True)
    weights = np.bincount(inv.ravel(), weights=dur[keep], minlength=len(uniq))
    return {tuple(int(v) for v in u): float(w) for u, w in zip(uniq, weights)}


def _tv(p, q):
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


@dataclass
class OccupationTable:
    """Time-weighted shape frequencies after burn-in."""

    frequencies: dict
    burn_in: float
    horizon: float
    drift: float
    converged: bool
    events: int = 0
    seed: object = None

    def __getitem__(self, shape):
        return self.frequencies.get(tuple(shape), 0.0)

    def __len__(self):
        return len(self.frequencies)

    def items(self):
        return self.frequencies.items()

    def total(self):
        return float(sum(self.frequencies.values()))

    def tv_to(self, other):
        """Total variation distance to a mapping shape -> probability."""
        return _tv(self.frequencies, dict(other))


def empirical_shape_distribution(beta, cfg0, burn_in=None, horizon=1000.0, seed=0,
                                 drift_tol=0.05):
    """Occupation-time estimate of the stationary shape law.

    ``drift`` is the total variation between the occupation measures of the
    two halves of ``[burn_in, horizon]``; a large value means the frequencies
    still move with the horizon and no stationary law is being seen.
    """
    horizon = check_horizon(horizon)
    burn_in = horizon / 2 if burn_in is None else float(burn_in)
    if not 0 <= burn_in < horizon:
        raise ValueError("burn_in must lie in [0, horizon)")
    traj = run_poisson(beta, cfg0, horizon, seed=seed, record_path=True)
    times, shapes = shape_path(traj)
    span = horizon - burn_in
    freq = {k: v / span for k, v in _occupation(times, shapes, burn_in, horizon).items()}
    mid = burn_in + span / 2
    first = {k: v / (span / 2) for k, v in _occupation(times, shapes, burn_in, mid).items()}
    second = {k: v / (span / 2) for k, v in _occupation(times, shapes, mid, horizon).items()}
    drift = _tv(first, second)
    return OccupationTable(frequencies=freq, burn_in=burn_in, horizon=horizon, drift=drift,
                           converged=drift <= drift_tol, events=len(traj.path_times),
                           seed=seed_repr(seed))


def throughput_from_occupation(table, beta, boundary=Boundary.ZERO):
    """``sum_h sum_j beta_{V_j(h)} pi(h)`` for an occupation table."""
    beta = check_beta(beta)
    total = 0.0
    for h, p in table.items():
        shape = Shape(h, boundary)
        total += p * sum(beta[shape_neighbor_count(shape, j)] for j in range(1, shape.n + 1))
    return total
