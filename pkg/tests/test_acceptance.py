"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import math
from collections import Counter

import numpy as np
import pytest

from crystalgrowth.analysis import (CombClassifier, empirical_shape_distribution,
                                    estimate_dtilde, estimate_speeds, shape_path)
from crystalgrowth.engine import (CoupleSpec, OrderMonitor, run_coupled, run_gillespie,
                                  run_poisson)
from crystalgrowth.exact import (build_truncated, enumerate_comb_set, mu_n2, region_verdict,
                                 solve_stationary, v2, vitesse_threshold)
from crystalgrowth.model import Configuration
from crystalgrowth.utils import replica_seed


def tv(a, b):
    ca, cb = Counter(a), Counter(b)
    na, nb = sum(ca.values()), sum(cb.values())
    return 0.5 * sum(abs(ca[k] / na - cb[k] / nb) for k in set(ca) | set(cb))


def test_c01_two_site_speed(report):
    target = v2(1, 3)
    worst = 0.0
    for x in (0.5, 2.0):
        est = estimate_speeds((1, 3, x), (0, 0), 5000.0, 50, seed=101)
        worst = max(worst, float(np.max(np.abs(est.speeds / target - 1))))
    ok = worst <= 0.02
    report("C1 n=2 speed", ok, f"max rel. error {worst:.4%} (tol 2%)")
    assert ok


def test_c02_two_site_stationary_law(report):
    occ = empirical_shape_distribution((1, 3, 2), (0, 0), burn_in=100.0, horizon=40000.0,
                                       seed=102)
    mu = {(i,): mu_n2(1, 3, i) for i in range(-80, 81)}
    d = occ.tv_to(mu)
    sol = solve_stationary(build_truncated(2, (1, 3, 2), 30))
    err = max(abs(p - mu_n2(1, 3, int(h[0]))) for h, p in zip(sol.chain.states, sol.pi))
    ok = occ.events >= 1e5 and d <= 0.02 and err <= 1e-8
    report("C2 n=2 stationary law", ok,
           f"TV {d:.4f} over {occ.events} events; solver max error {err:.2e}")
    assert ok


def test_c03_engine_equivalence(report):
    beta, cfg0, R = (1, 2, 3), (0, 0, 0), 100_000
    a = np.array([run_poisson(beta, cfg0, 1.0, seed=replica_seed(103, r)).final
                  for r in range(R)])
    b = np.array([run_gillespie(beta, cfg0, 1.0, seed=replica_seed(203, r)).final
                  for r in range(R)])
    d = tv(a.sum(axis=1).tolist(), b.sum(axis=1).tolist())
    rel = float(np.max(np.abs(a.mean(axis=0) / b.mean(axis=0) - 1)))
    ok = d <= 0.01 and rel <= 0.01
    report("C3 engine equivalence", ok, f"TV(total) {d:.4f}; per-site mean gap {rel:.3%}")
    assert ok


def _random_monotone(rng):
    return tuple(np.sort(rng.uniform(0.2, 4.0, 3)).round(3))


def test_c04_coupling_exactness(report):
    rng = np.random.default_rng(104)
    totals = {"attractive": [0, 0], "sites": [0, 0], "rates": [0, 0]}
    for i in range(1000):
        # same rates, ordered starts
        beta = _random_monotone(rng)
        n = int(rng.integers(2, 7))
        x0 = rng.integers(0, 4, n)
        y0 = x0 + rng.integers(0, 3, n)
        parts = [(beta, tuple(x0)), (beta, tuple(y0))]
        mon = OrderMonitor([(0, 1)])
        run_coupled(CoupleSpec(parts, seed=i), 10.0, monitor=mon)
        totals["attractive"][0] += mon.violations
        totals["attractive"][1] += mon.events
        # fewer sites under more sites, equal prefix
        m = int(rng.integers(n, n + 4))
        big = tuple(x0) + tuple(rng.integers(0, 4, m - n))
        mon = OrderMonitor([(0, 1)])
        run_coupled(CoupleSpec([(beta, tuple(x0)), (beta, big)], seed=10_000 + i), 10.0,
                    monitor=mon)
        totals["sites"][0] += mon.violations
        totals["sites"][1] += mon.events
        # beta_k <= beta'_l for k <= l, same start
        bp = tuple(np.sort(np.array(beta) + rng.uniform(0, 2, 3)).round(3))
        assert all(beta[k] <= bp[l] for k in range(3) for l in range(k, 3))
        mon = OrderMonitor([(0, 1)])
        run_coupled(CoupleSpec([(beta, tuple(x0)), (bp, tuple(x0))], seed=20_000 + i), 10.0,
                    monitor=mon)
        totals["rates"][0] += mon.violations
        totals["rates"][1] += mon.events
    ok = all(v == 0 for v, _ in totals.values())
    detail = "; ".join(f"{k}: {v} violations / {e} events" for k, (v, e) in totals.items())
    report("C4 coupling exactness", ok, detail)
    assert ok


COMB_PROTOCOL = [
    ("(i)", (2, 3, 1), 5, "e1"),
    ("(ii)", (3, 2, 1), 4, "e2"),
    ("(iii)", (3, 1, 2), 5, "e3"),
]


@pytest.mark.parametrize("tag,beta,n,case", COMB_PROTOCOL)
def test_c05_comb_limits(report, tag, beta, n, case):
    T, R = 2000.0, 20
    clf = CombClassifier(beta=beta, case=case).fit(n)
    speeds = np.array([run_poisson(beta, (0,) * n, T, seed=replica_seed(105, r)).final
                       for r in range(R)]) / T
    hits = int((clf.predict(speeds) >= 0).sum())
    strict = int((clf.transform(speeds).min(axis=1) <= 0.05).sum())
    ok = hits >= 18
    report(f"C5 comb {tag}", ok,
           f"{hits}/{R} within {clf.tol_:g} per coordinate "
           f"(info: {strict}/{R} within absolute 0.05)")
    assert ok


def test_c06_three_site_throughput(report):
    sol = solve_stationary(build_truncated(3, (1, 2, 3), 40))
    v = float(sol.throughput.mean())
    est = estimate_speeds((1, 2, 3), (0, 0, 0), 5000.0, 20, seed=106)
    mc = float(est.speeds.mean())
    ok = sol.spread() <= 1e-6 and sol.boundary_mass < 1e-8 and abs(mc / v - 1) <= 0.01
    report("C6 v3 site independence", ok,
           f"spread {sol.spread():.1e}; boundary mass {sol.boundary_mass:.1e}; "
           f"solver {v:.6f} vs MC {mc:.4f}")
    assert ok


def test_c07_vitesse(report):
    thr = vitesse_threshold(1, 2, 1)
    sol = solve_stationary(build_truncated(3, (1, thr, 2), 60))
    v = float(sol.throughput.min())
    ok = math.isclose(thr, 54) and v >= 2
    report("C7 vitesse", ok, f"threshold {thr:g}; min site throughput {v:.4f} "
                            f"(boundary mass {sol.boundary_mass:.1e})")
    assert ok


def test_c08_dtilde(report):
    horizons = (100.0, 300.0, 1000.0, 3000.0)
    ests = [estimate_dtilde(n, 3.0, 1.0, None, horizons, 1000, seed=108) for n in (1, 2, 3)]
    d = [e.d_hat for e in ests]
    w = [e.width for e in ests]
    # grid points carry binary rounding, hence the tiny slack
    lo, hi = ests[0].bracket
    single = 0.95 - 1e-9 <= lo <= d[0] <= hi <= 1.05 + 1e-9
    mono = all(d[i + 1] >= d[i] - max(w[i], w[i + 1]) for i in range(2))
    inside = all(1.0 <= x <= 3.0 for x in d)
    ok = single and mono and inside
    report("C8 d-tilde estimator", ok,
           "d_hat " + ", ".join(f"n={n}: {x:g} {tuple(e.bracket)}"
                                for n, x, e in zip((1, 2, 3), d, ests)))
    assert ok


def test_c09_transience_demo(report):
    beta, x0, T, R = (1, 60, 1.5), Configuration((1, 1, 0, 1, 1)), 500.0, 50
    rates = []
    for r in range(R):
        tr = run_poisson(beta, x0, T, seed=replica_seed(109, r), record_path=True)
        _, h = shape_path(tr)
        # hole at site 3 survives: strictly below both neighbours throughout
        if np.all(h[:, 1] > 0) and np.all(h[:, 2] < 0):
            x = tr.final
            rates.append((min(x[1], x[3]) - x[2]) / T)
    frac = len(rates) / R
    mean = float(np.mean(rates)) if rates else float("nan")
    oracle = v2(1, 60) - 1.5
    ok = frac > 0 and 0.3 <= mean <= 0.6
    report("C9 transience demo", ok,
           f"survivors {len(rates)}/{R}; mean depth rate {mean:.4f} (oracle {oracle:.3f})")
    assert ok


def _independent_flags(n, b0, b1, b2):
    m = max(2, n - 2)
    in_d = b0 < b2 < b1
    out = {
        "cond_prior": n >= 2 and min(b1, b2) > (n - 1) ** 2 * b0,
        "cond_a": n >= 2 and in_d and b2 > m * b0,
        "cond_b": n >= 2 and in_d and m * b2 > (m - 1) * b1 + b0,
        "cond_c": n >= 2 and in_d and b2 ** 2 > 32 * b1 * b0,
    }
    if b2 >= b0:
        out["comb_case"] = None
    elif b0 <= b1:
        out["comb_case"] = "e1"
    elif b2 < b1:
        out["comb_case"] = "e2"
    else:
        out["comb_case"] = "e3"
    if b0 < b2 < 2 * b0:
        B = max(b0 * b2 / (2 * b0 - b2), 27 * b0 * b0 * b2 / ((3 * b0 - b2) * (b2 - b0)))
        out["transience"] = n >= 5 and b1 > B
    else:
        out["transience"] = False
    return out


def test_c10_verdict_predicates(report):
    rng = np.random.default_rng(110)
    mismatches, exclusivity = 0, 0
    for _ in range(10_000):
        n = int(rng.integers(2, 12))
        b0 = float(rng.uniform(0.2, 3))
        # mix broad draws with draws near the interesting boundaries
        if rng.random() < 0.5:
            b1, b2 = (float(v) for v in rng.uniform(0.05, 80, 2))
        else:
            b1 = float(b0 * rng.uniform(0.5, 80))
            b2 = float(b0 * rng.uniform(0.3, 2.2))
        v = region_verdict(n, (b0, b1, b2))
        ref = _independent_flags(n, b0, b1, b2)
        got = {"cond_prior": v.cond_prior, "cond_a": v.cond_a, "cond_b": v.cond_b,
               "cond_c": v.cond_c, "comb_case": v.comb_case,
               "transience": v.transience_applicable}
        mismatches += got != ref
        ergodic_reason = any(r in v.reasons for r in ("prior", "a", "b", "c", "ams",
                                                      "corollary-h3", "two-site"))
        labels = (v.label == "ergodic-proved",
                  v.label in ("transient-proved", "comb-transient"))
        if sum(labels) > 1 or labels[0] != ergodic_reason:
            exclusivity += 1
        if ergodic_reason and (v.transience_applicable or
                               (v.comb_case is not None and v.label != "ergodic-proved")):
            exclusivity += 1
    ok = mismatches == 0 and exclusivity == 0
    report("C10 verdict predicates", ok,
           f"{mismatches} flag mismatches, {exclusivity} exclusivity violations in 10000 points")
    assert ok
