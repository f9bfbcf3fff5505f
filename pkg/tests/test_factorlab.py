import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudocal.errors import GuardError
from pseudocal.factorlab import (
    LocalTriple, RecursionStep, build_E0_and_xi0, build_L, build_M, build_Q0, c0, coefficient_bound_check,
    d_matrix, dense_L, dense_Q, factor_identity_residual, gamma, middle_shapes, outer_choice,
    preimages, preimages_bruteforce, primed_types, ribbon_catalog, shape_ribbon, spectral_report,
    termination_check, verify_factor_identity, verify_recursion_step,
)
from pseudocal.graphcore import Graph, sample_null, support
from pseudocal.pseudomoments import PEParams, build_moment_matrix, evaluate_calibrated, index_sets
from pseudocal.ribbons import Ribbon, middle_condition, separating_factorization
from pseudocal.shapes import Shape

P6 = PEParams(6, Fraction(3, 2), 2, 4)
SHAPES = middle_shapes(2, 4)
seeds = st.integers(min_value=0, max_value=2**32)


def ribbon_sum_empty_ends(G, p):
    """Sum of q^|V| chi_W over all edge sets on at most tau vertices: the (∅, ∅) middle entry."""
    pairs = list(itertools.combinations(range(p.n), 2))
    total = Fraction(0)
    for k in range(len(pairs) + 1):
        for W in itertools.combinations(pairs, k):
            V = support(W)
            if len(V) > p.tau:
                continue
            if not middle_condition(Ribbon((), (), W), (), ()):
                continue
            chi = 1
            for u, v in W:
                chi *= G.sign(u, v)
            total += chi * p.q ** len(V)
    return total


def test_middle_shape_catalogue_size():
    assert len(SHAPES) == 556


def test_q0_vanishes_off_cliques():
    for s in range(3):
        G = sample_null(6, s)
        Q = build_Q0(G, P6).evaluate(P6.q)
        for k, S in enumerate(index_sets(6, 2)):
            if not G.is_clique(S):
                assert all(v == 0 for v in Q[k]) and all(v == 0 for v in Q[:, k])


def test_q0_empty_entry_matches_ribbon_enumeration():
    p = PEParams(5, Fraction(3, 2), 2, 4)
    G = sample_null(5, 8)
    val = build_Q0(G, p).evaluate(p.q)[0, 0]
    assert val == ribbon_sum_empty_ends(G, p)
    assert val == evaluate_calibrated((), G, p)


def test_l_diagonal_is_close_to_scale():
    p = PEParams.from_exponent(40, 0.3, 2, 4)
    L = dense_L(sample_null(40, 2), p)
    scale = np.array([float(p.q) ** (len(S) / 2) for S in index_sets(40, 2)])
    assert np.allclose(np.diag(L) / scale, 1, atol=0.1)


def test_dense_matrices_match_catalogue():
    G = sample_null(6, 5)
    assert np.allclose(dense_L(G, P6), np.array(build_L(G, P6).evaluate(P6.q), dtype=float))
    assert np.allclose(dense_Q(G, P6), np.array(build_Q0(G, P6).evaluate(P6.q), dtype=float))


@pytest.mark.parametrize("seed", range(3))
def test_factor_identity_small(seed):
    G = sample_null(6, seed)
    assert factor_identity_residual(G, P6).is_zero()
    assert np.array_equal(build_M(G, P6).evaluate(P6.q), build_moment_matrix(G, P6, mode="exact").entries)


def test_factor_identity_report_shape():
    rep = verify_factor_identity([sample_null(5, 1)], PEParams(5, Fraction(3, 2), 2, 4))
    assert rep["max_abs_residual"] == "0" and rep["moment_matrix_mismatches"] == 0
    assert set(rep) >= {"identity", "scale", "graphs_tested", "elapsed"}


def test_no_size_error_when_threshold_covers_everything():
    p = PEParams(4, Fraction(3, 2), 2, 4)
    for s in range(4):
        E0, xi0 = build_E0_and_xi0(sample_null(4, s), p)
        assert xi0.is_zero()


def test_overlap_error_vanishes_at_empty_ends():
    for s in range(3):
        E0, _ = build_E0_and_xi0(sample_null(6, s), P6)
        assert E0.entry((), ()) == {}


def test_guard():
    with pytest.raises(GuardError):
        build_M(sample_null(9, 0), PEParams(9, 2, 2, 4))


def test_c0_is_the_middle_indicator():
    c = c0()
    bad = Shape(3, [(0, 1)], [0], [2])          # disconnected ends: separator is empty, not the ends
    good = Shape(2, [(0, 1)], [0], [1])
    assert c.of_shape(bad) == () and c.of_shape(good) == (1,)
    assert c.of_shape(Shape(3, [(0, 2)], [0], [2])) == ()   # isolated vertex makes the middle improper


@given(st.sampled_from(SHAPES))
@settings(max_examples=40, deadline=None)
def test_outer_choice_does_not_matter(U):
    c = c0()
    assert gamma(outer_choice(U, 2, "trivial"), c, 2) == gamma(outer_choice(U, 2, "alternative"), c, 2)


def check_preimages(U):
    P = outer_choice(U, 2, "trivial").to_triple()
    fast = preimages(P, 2)
    assert len(set(fast)) == len(fast)
    assert set(fast) == set(preimages_bruteforce(P, 2))
    for t in fast[:: max(1, len(fast) // 200)]:
        assert separating_factorization(t, check=False) == P


@given(st.sampled_from([U for U in SHAPES if U.t <= 3]))
@settings(max_examples=25, deadline=None)
def test_preimages_match_bruteforce(U):
    check_preimages(U)


def test_preimages_of_a_four_clique():
    check_preimages(Shape(4, itertools.combinations(range(4), 2), [0, 1], [0, 1]))


def test_primed_type_count_at_n6():
    types = list(primed_types(6, 2, 4))
    assert len(types) == 11910


def test_recursion_step_small():
    p = PEParams(4, Fraction(3, 2), 2, 4)
    step = RecursionStep(c0(), 4, 2, 4)
    assert not step.mismatches
    for s in range(3):
        assert verify_recursion_step(c0(), sample_null(4, s), p, step)


def test_second_recursion_step(coefficients):
    c1, c2 = coefficients[1], coefficients[2]
    step = RecursionStep(c1, 5, 2, 4, cprime=c2)
    assert not step.mismatches
    for s in range(2):
        assert step.residual(sample_null(5, s)).is_zero()


def test_termination(coefficients):
    rep = termination_check(2, 4, [sample_null(6, s) for s in range(3)], n=6, seq=coefficients)
    assert all(rep["final_step_zero"])
    assert rep["next_coefficient_zero"]
    assert rep["min_end_sum"]["c4"] == 4


@pytest.mark.parametrize("i", [1, 2, 3, 4])
def test_coefficient_bound(coefficients, i):
    rep = coefficient_bound_check(coefficients[i], i)
    assert rep["violations"] == [] and rep["negative_coefficients"] == 0


def test_d_matrix_diagonal():
    G = Graph.complete(4)
    D = d_matrix(G, 2)
    idx = index_sets(4, 2)
    assert D[idx.index((0, 1)), idx.index((0, 1))] == 0.5
    assert D[idx.index((2,)), idx.index((2,))] == 0.25


def test_spectral_report_small_omega():
    # at n = 24 the singleton block is still negative; by n = 50 it has cleared D
    p = PEParams.from_exponent(50, 0.05, 2, 4)
    reps = [spectral_report(sample_null(50, s), p) for s in range(4)]
    assert all(r["Q0_dominates_D"] for r in reps)
    assert all(r["min_eig_LL"] > 0 for r in reps)


def test_spectral_report_guard():
    with pytest.raises(GuardError):
        spectral_report(sample_null(61, 0), PEParams(61, 2, 2, 4))
