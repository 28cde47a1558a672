"""Closed forms, comb sets, truncated stationary solves and region predicates."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import Boundary, RateTriple, Shape, shape_neighbor_count

__all__ = [
    "NotErgodicError",
    "v2",
    "v2_inf",
    "mu_n2",
    "comb_case",
    "enumerate_comb_set",
    "TruncatedChain",
    "StationarySolve",
    "build_truncated",
    "solve_stationary",
    "RegionVerdict",
    "region_verdict",
    "transience_constant",
    "vitesse_threshold",
]


class NotErgodicError(ValueError):
    """Raised when a closed form is requested outside its ergodic range."""


def v2(beta0, beta1):
    """Growth rate of the two-site process with zero boundary."""
    if not beta1 > beta0:
        raise NotErgodicError("not ergodic at these parameters (need beta1 > beta0)")
    return 2.0 * beta0 * beta1 / (beta0 + beta1)


def v2_inf(beta1, beta2):
    """Growth rate of the two-site process with infinite boundary."""
    if not beta2 > beta1:
        raise NotErgodicError("not ergodic at these parameters (need beta2 > beta1)")
    return 2.0 * beta1 * beta2 / (beta1 + beta2)


def mu_n2(beta0, beta1, i):
    """Reversible (stationary) law of the two-site shape at ``i``."""
    if not beta1 > beta0:
        raise NotErgodicError("not ergodic at these parameters (need beta1 > beta0)")
    return (beta1 - beta0) / (beta1 + beta0) * (beta0 / beta1) ** abs(i)


# -- comb sets -----------------------------------------------------------------

COMB_CASES = ("e1", "e2", "e3")


def comb_case(beta):
    """Which comb set describes the limit when ``beta2 < beta0``, else None."""
    b0, b1, b2 = beta
    if not b2 < b0:
        return None
    if b1 >= b0:
        return "e1"
    if b1 > b2:
        return "e2"
    return "e3"


def _check_case(beta, case):
    case = str(case).lower()
    if case not in COMB_CASES:
        raise ValueError(f"unknown comb case {case!r}")
    actual = comb_case(beta)
    if actual != case:
        orderings = {
            "e1": "beta2 < beta0 <= beta1",
            "e2": "beta2 < beta1 < beta0",
            "e3": "beta1 <= beta2 < beta0",
        }
        raise ValueError(f"case {case} requires {orderings[case]}; got beta={tuple(beta)}")
    return case


def _blocks_separated(n, single, double, sep):
    # all (a_1, sep, a_2, ..., sep, a_k) of length n, k >= 1, a_i in {single, double}
    out = []

    def rec(prefix, remaining):
        for block in (single, double):
            if len(block) == remaining:
                out.append(prefix + block)
            elif len(block) + 1 < remaining:
                rec(prefix + block + (sep,), remaining - len(block) - 1)

    if n >= 1:
        rec((), n)
    return out


def _e3_vectors(n, beta):
    b0, b1, b2 = beta
    # limit value when beta1 == beta2 is beta1; the formula is continuous there
    w = 2.0 * b1 * b2 / (b1 + b2)
    out = []
    for left, right in itertools.product(((b1,), ()), repeat=2):
        core_len = n - len(left) - len(right)
        if core_len < 1:
            continue
        if core_len == 1:
            out.append(left + (b0,) + right)
            continue
        # (b0, a_1, b0, ..., a_k, b0) with k >= 1
        for inner in _blocks_separated(core_len - 2, (b2,), (w, w), b0):
            out.append(left + (b0,) + inner + (b0,) + right)
    return out


def _e2_vectors(n, beta):
    out = []
    for idx in itertools.product((0, 1, 2), repeat=n):
        if idx[0] == 2 or idx[-1] == 2:
            continue
        if any(a == b for a, b in zip(idx, idx[1:])):
            continue
        out.append(tuple(beta[i] for i in idx))
    return out


def enumerate_comb_set(n, beta, case):
    """All admissible limiting speed vectors of length ``n``.

    Returned as a list in a fixed enumeration order, without duplicates.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    beta = tuple(float(b) for b in beta)
    case = _check_case(beta, case)
    b0, b1, b2 = beta
    if case == "e1":
        w = 2.0 * b0 * b1 / (b0 + b1)
        vectors = _blocks_separated(n, (b0,), (w, w), b2)
    elif case == "e2":
        vectors = _e2_vectors(n, beta)
    else:
        vectors = _e3_vectors(n, beta)
    return list(dict.fromkeys(vectors))


# -- truncated generator -------------------------------------------------------

@dataclass
class TruncatedChain:
    """Shape process confined to ``[-M, M]^(n-1)``, moves leaving the box dropped."""

    n: int
    beta: RateTriple
    M: int
    states: np.ndarray          # (S, n-1) integer shapes
    generator: sp.csr_matrix    # (S, S), rows sum to zero
    site_rates: np.ndarray      # (S, n) beta_{V_j(h)}

    @property
    def size(self):
        return len(self.states)

    def index(self, h):
        h = np.asarray(h)
        return int(np.ravel_multi_index(tuple(h + self.M), (2 * self.M + 1,) * (self.n - 1)))


@dataclass
class StationarySolve:
    chain: TruncatedChain
    pi: np.ndarray
    residual: float
    boundary_mass: float
    throughput: np.ndarray
    converged: bool
    certified: bool = field(default=False)

    def spread(self):
        """Relative spread of the per-site throughputs."""
        return float((self.throughput.max() - self.throughput.min()) / self.throughput.mean())

    def to_csv(self, path):
        m = self.chain.n - 1
        header = ",".join([f"h_{i + 1}" for i in range(m)] + ["pi"])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for h, p in zip(self.chain.states, self.pi):
                fh.write(",".join(str(int(v)) for v in h) + "," + repr(float(p)) + "\n")


def build_truncated(n, beta, M):
    if n not in (2, 3):
        raise ValueError("truncated solves are provided for n in {2, 3}")
    if M < 2:
        raise ValueError("truncation radius M must be >= 2")
    if not isinstance(beta, RateTriple):
        beta = RateTriple(*beta)
    m = n - 1
    side = 2 * M + 1
    grids = np.meshgrid(*([np.arange(-M, M + 1)] * m), indexing="ij")
    states = np.stack([g.ravel() for g in grids], axis=1)
    S = len(states)

    # V_j(h) under zero boundary, vectorised
    rates = np.empty((S, n))
    betas = np.array(beta.as_tuple())
    for j in range(n):
        left = states[:, j - 1] > 0 if j > 0 else np.zeros(S, bool)
        right = states[:, j] < 0 if j < m else np.zeros(S, bool)
        rates[:, j] = betas[left.astype(int) + right.astype(int)]

    rows, cols, vals = [], [], []
    idx = np.arange(S)
    for j in range(n):
        f = np.zeros(m, dtype=int)
        if j < m:
            f[j] += 1
        if j > 0:
            f[j - 1] -= 1
        target = states + f
        inside = np.all(np.abs(target) <= M, axis=1)
        tgt_idx = np.ravel_multi_index(tuple((target[inside] + M).T), (side,) * m)
        rows.append(idx[inside])
        cols.append(tgt_idx)
        vals.append(rates[inside, j])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    Q = sp.coo_matrix((vals, (rows, cols)), shape=(S, S)).tocsr()
    out = np.asarray(Q.sum(axis=1)).ravel()
    Q = (Q - sp.diags(out)).tocsr()
    return TruncatedChain(n=n, beta=beta, M=M, states=states, generator=Q, site_rates=rates)


def solve_stationary(chain, tol=1e-10, max_refine=5, boundary_tol=1e-8):
    """Solve ``pi Q = 0, sum(pi) = 1`` with one balance row replaced by the
    normalisation, followed by iterative refinement."""
    Q = chain.generator
    S = chain.size
    A = Q.T.tolil()
    A[S - 1, :] = np.ones(S)
    A = A.tocsc()
    b = np.zeros(S)
    b[S - 1] = 1.0
    lu = spla.splu(A)
    pi = lu.solve(b)
    QT = Q.T.tocsr()

    def resid(p):
        return float(max(np.abs(QT @ p).max(), abs(p.sum() - 1.0)))

    r = resid(pi)
    for _ in range(max_refine):
        if r <= tol:
            break
        pi = pi + lu.solve(b - A @ pi)
        r = resid(pi)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    r = resid(pi)
    near = np.any(np.abs(chain.states) >= chain.M - 1, axis=1)
    mass = float(pi[near].sum())
    throughput = pi @ chain.site_rates
    return StationarySolve(chain=chain, pi=pi, residual=r, boundary_mass=mass,
                           throughput=throughput, converged=r <= tol,
                           certified=r <= tol and mass < boundary_tol)


# -- verdicts ------------------------------------------------------------------

def transience_constant(beta0, beta2):
    """The explicit ``B`` above which ``beta1`` makes the shape transient for n >= 5."""
    if not beta0 < beta2 < 2 * beta0:
        raise ValueError("B is defined for beta0 < beta2 < 2*beta0")
    return max(beta0 * beta2 / (2 * beta0 - beta2),
               27 * beta0 ** 2 * beta2 / ((3 * beta0 - beta2) * (beta2 - beta0)))


def vitesse_threshold(beta0, beta2, eps):
    """Smallest ``beta1`` guaranteeing ``v3 >= 3*beta0 - eps``."""
    if not beta2 > beta0:
        raise ValueError("need beta2 > beta0")
    if not 0 < eps < 3 * beta0:
        raise ValueError("need 0 < eps < 3*beta0")
    return 27 * beta0 ** 2 * beta2 / (eps * (beta2 - beta0))


VERDICTS = ("ergodic-proved", "transient-proved", "comb-transient", "undecided")


@dataclass
class RegionVerdict:
    n: int
    beta: tuple
    cond_prior: bool
    cond_ams: bool
    cond_corollary_h3: bool
    cond_two_site: bool
    cond_a: bool
    cond_b: bool
    cond_c: bool
    in_domain_d: bool
    comb_case: str | None
    transience_applicable: bool
    transience_B: float | None
    thresholds: dict
    label: str
    reasons: list

    def to_dict(self):
        return {
            "n": self.n,
            "beta": list(self.beta),
            "label": self.label,
            "reasons": list(self.reasons),
            "cond_prior": self.cond_prior,
            "cond_ams": self.cond_ams,
            "cond_corollary_h3": self.cond_corollary_h3,
            "cond_two_site": self.cond_two_site,
            "cond_a": self.cond_a,
            "cond_b": self.cond_b,
            "cond_c": self.cond_c,
            "in_domain_d": self.in_domain_d,
            "comb_case": self.comb_case,
            "transience_applicable": self.transience_applicable,
            "transience_B": self.transience_B,
            "thresholds": dict(self.thresholds),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def region_verdict(n, beta):
    """Evaluate every ergodicity / transience criterion at ``(n, beta)``.

    Conditions (a) and (b) cover all sizes ``k <= m + 2`` when they hold at
    ``m``; both get easier as ``m`` decreases, so they are evaluated at
    ``m = max(2, n - 2)``. Condition (c) does not depend on the size.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    b0, b1, b2 = (float(b) for b in beta)
    RateTriple(b0, b1, b2)
    m = max(2, n - 2)
    in_d = b0 < b2 < b1
    thr_a = m * b0
    thr_b = ((m - 1) * b1 + b0) / m
    thr_c = 4.0 * math.sqrt(2.0) * math.sqrt(b1 * b0)
    thr_prior = (n - 1) ** 2 * b0

    cond_prior = n >= 2 and b1 > thr_prior and b2 > thr_prior
    cond_ams = n >= 2 and b0 < b1 <= b2
    cond_h3 = n == 3 and b1 > b0 and b2 > b0
    cond_two = n == 2 and b1 > b0
    cond_a = n >= 2 and in_d and b2 > thr_a
    cond_b = n >= 2 and in_d and b2 > thr_b
    cond_c = n >= 2 and in_d and b2 > thr_c
    case = comb_case((b0, b1, b2)) if n >= 2 else None

    B = None
    if b0 < b2 < 2 * b0:
        B = transience_constant(b0, b2)
    trans = n >= 5 and B is not None and b1 > B

    reasons = []
    for flag, name in ((cond_two, "two-site"), (cond_ams, "ams"), (cond_h3, "corollary-h3"),
                       (cond_prior, "prior"), (cond_a, "a"), (cond_b, "b"), (cond_c, "c")):
        if flag:
            reasons.append(name)
    ergodic = bool(reasons)
    if trans:
        reasons.append("transience")
    if case is not None and not ergodic:
        reasons.append(f"comb-{case}")

    if ergodic:
        label = "ergodic-proved"
    elif trans:
        label = "transient-proved"
    elif case is not None and not (n == 2 and case == "e1"):
        # n = 2 in case (i) with beta1 == beta0 is null recurrent, not transient
        label = "comb-transient"
    else:
        label = "undecided"
    if ergodic and (trans or label != "ergodic-proved"):
        raise AssertionError("inconsistent verdict")  # pragma: no cover

    thresholds = {
        "m": m,
        "prior": thr_prior,
        "a": thr_a,
        "b": thr_b,
        "c": thr_c,
    }
    return RegionVerdict(
        n=n, beta=(b0, b1, b2), cond_prior=cond_prior, cond_ams=cond_ams,
        cond_corollary_h3=cond_h3, cond_two_site=cond_two, cond_a=cond_a, cond_b=cond_b,
        cond_c=cond_c, in_domain_d=in_d, comb_case=case, transience_applicable=trans,
        transience_B=B, thresholds=thresholds, label=label, reasons=reasons,
    )
