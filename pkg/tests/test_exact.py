import itertools
import json
import math
import re

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from crystalgrowth.exact import (NotErgodicError, build_truncated, comb_case,
                                 enumerate_comb_set, mu_n2, region_verdict, solve_stationary,
                                 transience_constant, v2, v2_inf, vitesse_threshold)
from crystalgrowth.model import Shape, shape_neighbor_count, shape_step


def test_closed_forms():
    assert v2(1, 3) == pytest.approx(1.5)
    assert v2_inf(3, 6) == pytest.approx(4.0)
    assert mu_n2(1, 3, 0) == pytest.approx(0.5)
    total = sum(mu_n2(1, 3, i) for i in range(-200, 201))
    assert total == pytest.approx(1.0, abs=1e-14)
    assert v2(1, 1 + 1e-9) == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(NotErgodicError, match="not ergodic"):
        v2(2, 2)
    with pytest.raises(NotErgodicError, match="not ergodic"):
        mu_n2(3, 1, 0)
    with pytest.raises(NotErgodicError, match="not ergodic"):
        v2_inf(3, 3)


def test_comb_examples():
    assert enumerate_comb_set(5, (2, 3, 1), "e1") == [(2, 1, 2, 1, 2), (2.4, 2.4, 1, 2.4, 2.4)]
    assert enumerate_comb_set(3, (2, 3, 1), "e1") == [(2, 1, 2)]
    assert set(enumerate_comb_set(2, (3, 2, 1), "e2")) == {(3, 2), (2, 3)}
    assert set(enumerate_comb_set(2, (3, 1, 2), "e3")) == {(1, 3), (3, 1)}


def test_comb_case_ordering():
    assert comb_case((2, 3, 1)) == "e1"
    assert comb_case((2, 2, 1)) == "e1"
    assert comb_case((3, 2, 1)) == "e2"
    assert comb_case((3, 1, 2)) == "e3"
    assert comb_case((3, 1, 1)) == "e3"
    assert comb_case((1, 2, 3)) is None
    with pytest.raises(ValueError, match="beta2 < beta0 <= beta1"):
        enumerate_comb_set(4, (1, 2, 3), "e1")


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10))
def test_comb_cases_partition_beta2_below_beta0(b0, b1, b2):
    case = comb_case((b0, b1, b2))
    assert (case is None) == (not b2 < b0)


def brute_e1(n, beta):
    # strings over A (beta0 block), W (half of a v2 pair), S (separator)
    b0, b1, b2 = beta
    w = 2 * b0 * b1 / (b0 + b1)
    pat = re.compile(r"^(A|WW)(S(A|WW))*$")
    val = {"A": b0, "W": w, "S": b2}
    out = set()
    for s in itertools.product("AWS", repeat=n):
        s = "".join(s)
        if pat.match(s):
            out.add(tuple(val[c] for c in s))
    return out


def brute_e3(n, beta):
    b0, b1, b2 = beta
    w = 2 * b1 * b2 / (b1 + b2)
    pat = re.compile(r"^L?B((T|WW)B)*R?$")
    val = {"L": b1, "R": b1, "B": b0, "T": b2, "W": w}
    out = set()
    for s in itertools.product("LRBTW", repeat=n):
        s = "".join(s)
        if pat.match(s):
            out.add(tuple(val[c] for c in s))
    return out


def dp_e2_count(n):
    # sequences over {0,1,2}, no equal neighbours, ends != 2
    ways = {0: 1, 1: 1, 2: 0}
    for _ in range(n - 1):
        ways = {i: sum(c for k, c in ways.items() if k != i) for i in range(3)}
    return ways[0] + ways[1]


@pytest.mark.parametrize("n", range(1, 9))
def test_e1_against_regex(n):
    beta = (2.0, 3.0, 1.0)
    got = enumerate_comb_set(n, beta, "e1")
    assert len(got) == len(set(got))
    assert set(got) == brute_e1(n, beta)


@pytest.mark.parametrize("n", range(1, 8))
def test_e3_against_regex(n):
    beta = (3.0, 1.0, 2.0)
    assert set(enumerate_comb_set(n, beta, "e3")) == brute_e3(n, beta)


@pytest.mark.parametrize("n", range(1, 9))
def test_e2_count_dp(n):
    got = enumerate_comb_set(n, (3.0, 2.0, 1.0), "e2")
    assert len(got) == dp_e2_count(n)
    for v in got:
        assert v[0] != 1.0 and v[-1] != 1.0
        assert all(a != b for a, b in zip(v, v[1:]))


def test_e3_sizes():
    assert len(enumerate_comb_set(5, (3, 1, 2), "e3")) == 4


def independent_generator(n, beta, M):
    states = list(itertools.product(range(-M, M + 1), repeat=n - 1))
    index = {s: i for i, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for s in states:
        h = Shape(s)
        for j in range(1, n + 1):
            t = shape_step(h, j).diffs
            if t in index:
                Q[index[s], index[t]] += beta[shape_neighbor_count(h, j)]
    Q -= np.diag(Q.sum(axis=1))
    return states, Q


@pytest.mark.parametrize("n,beta,M", [(2, (1, 3, 2), 4), (3, (1, 2, 3), 3), (3, (2, 1, 3), 3)])
def test_generator_matches_model_moves(n, beta, M):
    chain = build_truncated(n, beta, M)
    states, Q = independent_generator(n, beta, M)
    assert chain.size == (2 * M + 1) ** (n - 1)
    assert [tuple(s) for s in chain.states] == states
    assert np.allclose(chain.generator.toarray(), Q)


def test_solver_against_dense_null_space():
    chain = build_truncated(3, (1, 2, 3), 4)
    sol = solve_stationary(chain)
    ns = scipy.linalg.null_space(chain.generator.toarray().T)
    assert ns.shape[1] == 1
    ref = ns[:, 0] / ns[:, 0].sum()
    assert np.allclose(sol.pi, ref, atol=1e-12)


def test_two_site_solve_matches_mu():
    sol = solve_stationary(build_truncated(2, (1, 3, 5), 30))
    i = sol.chain.states[:, 0]
    mu = np.array([mu_n2(1, 3, k) for k in i])
    # truncation removes the tail beyond 30, renormalising the rest
    mu /= mu.sum()
    assert np.max(np.abs(sol.pi - mu)) < 1e-8
    assert np.allclose(sol.throughput, 1.5, atol=1e-6)
    # detailed balance of the reversible two-site chain
    Q = sol.chain.generator.toarray()
    flux = sol.pi[:, None] * Q
    off = ~np.eye(len(Q), dtype=bool)
    assert np.max(np.abs(flux - flux.T)[off]) < 1e-12


def test_three_site_solve_certified():
    sol = solve_stationary(build_truncated(3, (1, 2, 3), 40))
    assert sol.residual <= 1e-10
    assert sol.boundary_mass < 1e-8
    assert sol.certified
    assert sol.spread() < 1e-6
    assert np.all(sol.pi >= 0) and sol.pi.sum() == pytest.approx(1.0)


def test_null_control_boundary_mass_persists():
    masses = [solve_stationary(build_truncated(3, (1, 1, 1), M)).boundary_mass for M in (10, 20, 40)]
    assert all(m > 0.05 for m in masses)
    assert not solve_stationary(build_truncated(3, (1, 1, 1), 20)).certified


def test_stationary_csv(tmp_path):
    sol = solve_stationary(build_truncated(3, (1, 2, 3), 3))
    sol.to_csv(tmp_path / "pi.csv")
    lines = (tmp_path / "pi.csv").read_text().splitlines()
    assert lines[0] == "h_1,h_2,pi"
    assert len(lines) == 1 + 49
    assert sum(float(r.split(",")[-1]) for r in lines[1:]) == pytest.approx(1.0)


def test_truncation_preconditions():
    with pytest.raises(ValueError):
        build_truncated(4, (1, 2, 3), 5)
    with pytest.raises(ValueError):
        build_truncated(2, (1, 2, 3), 1)


def test_vitesse_threshold():
    assert vitesse_threshold(1, 2, 1) == pytest.approx(54)
    assert vitesse_threshold(1, 1 + 1e-9, 1) > 1e9
    with pytest.raises(ValueError):
        vitesse_threshold(1, 1, 1)
    with pytest.raises(ValueError):
        vitesse_threshold(1, 2, 3)


def test_transience_constant_diverges_at_both_ends():
    assert transience_constant(1, 1.5) == pytest.approx(54)
    assert transience_constant(1, 1 + 1e-7) > 1e6
    assert transience_constant(1, 2 - 1e-7) > 1e6
    with pytest.raises(ValueError):
        transience_constant(1, 2)


def test_verdict_examples():
    v = region_verdict(3, (1, 2, 1.5))
    assert v.label == "ergodic-proved" and v.in_domain_d
    v = region_verdict(7, (1, 10, 9))
    assert not v.cond_c
    assert v.thresholds["c"] == pytest.approx(4 * math.sqrt(2) * math.sqrt(10))
    v = region_verdict(5, (1, 60, 1.5))
    assert v.label == "transient-proved"
    assert v.transience_B == pytest.approx(54)
    d = json.loads(v.to_json())
    assert d["label"] == "transient-proved" and d["transience_B"] == pytest.approx(54)
    assert region_verdict(4, (3, 2, 1)).label == "comb-transient"
    assert region_verdict(2, (1, 3, 0.5)).label == "ergodic-proved"


@settings(max_examples=300, deadline=None)
@given(st.integers(2, 12), st.floats(0.1, 100), st.floats(0.1, 100))
def test_condition_c_is_size_free(n, b1, b2):
    v = region_verdict(n, (1.0, b1, b2))
    if v.cond_c:
        for m in (2, 3, 5, 9, 20):
            assert region_verdict(m, (1.0, b1, b2)).label == "ergodic-proved"
