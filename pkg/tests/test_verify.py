import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudocal.errors import ConfigError, GuardError
from pseudocal.graphcore import Graph, character, sample_null
from pseudocal.pseudomoments import MultilinearPoly, PEParams, pe_apply
from pseudocal.verify import (
    all_graphs, anchor_poly, calibration_average, calibration_identity_test, check_constraints,
    concentration_test, default_c_scan, fk_calibration_gap, fk_counts, fk_square_value, fk_negativity_witness,
    normalization_trend, orbit_size, orbit_sum, planted_square_mean,
)

seeds = st.integers(min_value=0, max_value=2**32)


def test_constraints_on_complete_graph_fk():
    p = PEParams(12, 3, 1, 2)
    rep = check_constraints(Graph.complete(12), p, backend="fk")
    assert rep.normalization == 1
    assert rep.size_ratio == pytest.approx(1)
    assert rep.clique_zero_checked == 0 and rep.clique_zero_violations == 0
    assert rep.psd


def test_constraints_on_a_null_graph():
    p = PEParams.from_exponent(20, 0.3, 2, 4)
    rep = check_constraints(sample_null(20, 3), p)
    assert rep.clique_zero_violations == 0 and rep.clique_zero_checked > 0
    assert set(rep.to_record()) >= {"normalization", "size_ratio", "min_eigenvalue", "psd"}


def test_constraints_skip_eigen():
    rep = check_constraints(sample_null(10, 0), PEParams(10, 2, 2, 4), eigen=False)
    assert rep.min_eigenvalue is None and rep.psd is None


def test_normalization_trend_shape():
    out = normalization_trend(30, [0.2, 0.4], 2, 4, trials=3)
    assert set(out["deviation"]) == {0.2, 0.4}
    assert isinstance(out["monotone"], bool)


def test_calibration_examples():
    assert calibration_average(PEParams(4, 2, 2, 4), (1, 2)) == Fraction(1, 4)
    assert calibration_average(PEParams(4, 2, 2, 4), ()) == 1
    assert calibration_identity_test(PEParams(5, Fraction(5, 2), 2, 5), (0, 2, 4))


def test_calibration_guards():
    with pytest.raises(ConfigError):
        calibration_identity_test(PEParams(4, 2, 1, 3), (0,))
    with pytest.raises(GuardError):
        next(all_graphs(6))


def test_all_graphs_count():
    assert sum(1 for _ in all_graphs(4)) == 64


@given(seeds, st.sampled_from([1, 2]), st.integers(5, 9))
@settings(max_examples=20, deadline=None)
def test_fk_counts_match_polynomial_evaluation(seed, ell, n):
    G = sample_null(n, seed)
    p = PEParams(n, Fraction(5, 2), 2, 4)
    q = p.q
    i = seed % n
    poly = anchor_poly(G, i, ell)
    x = MultilinearPoly.var(i)
    c = fk_counts(G, i, ell)
    assert c.value("x", q) == pe_apply(x, G, p, "fk")
    assert c.value("xp", q) == pe_apply(x * poly, G, p, "fk")
    assert c.value("pp", q) == pe_apply(poly * poly, G, p, "fk")


@pytest.mark.parametrize("ell", [1, 2])
def test_fk_counts_on_complete_graph(ell):
    n = 11
    G = Graph.complete(n)
    p = PEParams(n, 3, 2, 4)
    poly = anchor_poly(G, 0, ell)
    assert fk_counts(G, 0, ell).value("pp", p.q) == pe_apply(poly * poly, G, p, "fk")


def test_fk_counts_ell_one_closed_form():
    # complete graph, every g_j = +1: p^2 = sum x_j + 2 sum_{j<k} x_j x_k
    n = 30
    m = n - 1
    q = Fraction(2, n)
    c = fk_counts(Graph.complete(n), 0, 1)
    assert c.value("pp", q) == m * q + 2 * math.comb(m, 2) * 2 * q**2
    assert c.value("xp", q) == m * 2 * q**2


def test_fk_counts_guards():
    with pytest.raises(ConfigError):
        fk_counts(sample_null(5, 0), 0, 3)
    with pytest.raises(GuardError):
        fk_counts(sample_null(401, 0), 0, 1)


def test_fk_square_value_is_the_expanded_square():
    G = sample_null(8, 2)
    p = PEParams(8, 2, 2, 4)
    C = Fraction(3, 4)
    poly = anchor_poly(G, 1, 2)
    f = MultilinearPoly.var(1) * MultilinearPoly.constant(C * p.omega**2) - poly
    assert fk_square_value(fk_counts(G, 1, 2), p.omega, 8, C) == pe_apply(f * f, G, p, "fk")


def test_fk_negativity_witness_fields():
    out = fk_negativity_witness(60, Fraction(6), seed=3)
    assert [r["C"] for r in out["curve"]] == default_c_scan()
    assert out["value"] == min(r["value"] for r in out["curve"])
    assert out["negative"] == (out["value"] < 0)
    with pytest.raises(ConfigError):
        fk_negativity_witness(60, 6, ell=1)


def test_fk_square_small_omega_is_positive():
    assert not fk_negativity_witness(150, Fraction(150**0.2).limit_denominator(1000), seed=0)["negative"]


def test_planted_square_at_full_clique():
    n = 9
    for ell in (1, 2):
        assert planted_square_mean(n, n, ell, 4) == (n - 1) ** (2 * ell)


def test_gap_rejects_bad_input():
    with pytest.raises(ConfigError):
        fk_calibration_gap(50, [0.2, 0.4, 0.6, 0.8], ell=3)
    with pytest.raises(ConfigError):
        fk_calibration_gap(50, [0.2, 0.4], ell=1)


def test_gap_small_run():
    out = fk_calibration_gap(200, [0.2, 0.4, 0.6, 0.8], ell=1, trials=10)
    assert len(out["records"]) == 4
    assert abs(out["slope_fk"] - 1) < 0.3
    assert out["expected_planted"] == 3 and out["predicted_crossing"] == 0.5


def orbit_sum_bruteforce(edges, G):
    verts = sorted({v for e in edges for v in e})
    images = set()
    for f in itertools.permutations(range(G.n), len(verts)):
        m = dict(zip(verts, f))
        images.add(frozenset(tuple(sorted((m[u], m[v]))) for u, v in edges))
    return sum(character(G, T) for T in images), len(images)


@pytest.mark.parametrize("edges", [[(0, 1)], [(0, 1), (1, 2)], [(0, 1), (1, 2), (0, 2)],
                                   [(0, 1), (2, 3)], [(0, 1), (1, 2), (2, 3)]])
def test_orbit_sum_matches_bruteforce(edges):
    G = sample_null(7, 11)
    total, size = orbit_sum_bruteforce(edges, G)
    assert orbit_sum(edges, G) == total
    assert orbit_size(edges, 7) == size


def test_empty_template():
    assert orbit_sum([], sample_null(10, 0)) == 1
    assert orbit_size([], 10) == 1


def test_concentration_triangle():
    out = concentration_test([(0, 1), (1, 2), (0, 2)], 100, trials=200)
    assert out["pass_rate"] >= 0.99
    assert out["t"] == 3 and len(out["sums"]) == 200


def test_concentration_single_edge():
    n = 60
    out = concentration_test([(0, 1)], n, trials=50, seed=1)
    assert out["max_abs"] <= n * math.log(n) ** 3
    assert out["pass_rate"] == 1.0


def test_template_size_guard():
    with pytest.raises(ConfigError):
        orbit_sum([(0, 1), (2, 3), (3, 4)], sample_null(8, 0))
