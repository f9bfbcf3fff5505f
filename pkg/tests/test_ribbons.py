import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudocal.graphcore import Graph, support
from pseudocal.ribbons import (
    FactorTriple, Ribbon, canonical_factorization, check_conditions, leftmost_separator,
    min_separators_bruteforce, precedes, random_ribbon, random_valid_triple, recompose,
    repeated_vertices, rightmost_separator, separating_factorization, separator_size,
    tradeoff_quantities,
)

seeds = st.integers(min_value=0, max_value=2**32)

# vertex names for the worked example
a, b, c, g, h, i, j, k, x, y, z = range(11)


def worked_example():
    W = [(a, g), (a, h), (b, h), (g, i), (h, i), (i, j), (j, z), (j, k), (k, x), (k, y)]
    return Ribbon({a, b, c}, {c, x, y, z}, W)


def test_worked_example_separators():
    R = worked_example()
    assert separator_size(R) == 2
    assert leftmost_separator(R) == {c, i}
    assert rightmost_separator(R) == {c, j}


def test_equal_ends_are_their_own_separator():
    R = Ribbon({1, 2}, {1, 2}, [(1, 5), (5, 2)])
    assert leftmost_separator(R) == rightmost_separator(R) == {1, 2}


@given(seeds)
@settings(max_examples=80, deadline=None)
def test_extreme_separators_match_partial_order(seed):
    R = random_ribbon(np.random.default_rng(seed), n_vertices=9)
    mins = min_separators_bruteforce(R)
    L, Rt = leftmost_separator(R), rightmost_separator(R)
    assert L in mins and Rt in mins
    assert all(precedes(R, L, Q) for Q in mins)
    flipped = Ribbon(R.J, R.I, R.W)
    assert all(precedes(flipped, Rt, Q) for Q in mins)


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_partial_order_axioms(seed):
    R = random_ribbon(np.random.default_rng(seed), n_vertices=8)
    mins = min_separators_bruteforce(R)
    for Q in mins:
        assert precedes(R, Q, Q)
    for P, Q in itertools.permutations(mins, 2):
        assert not (precedes(R, P, Q) and precedes(R, Q, P))
    for P, Q, T in itertools.permutations(mins, 3):
        if precedes(R, P, Q) and precedes(R, Q, T):
            assert precedes(R, P, T)


def test_single_edge_factorization():
    t = canonical_factorization(Ribbon({1}, {2}, [(1, 2)]))
    assert t.S_l == {1} and t.S_r == {2}
    assert t.middle.W == {(1, 2)}
    assert not t.left.W and not t.right.W


def test_edgeless_equal_ends_factorization():
    S = {3, 4}
    t = canonical_factorization(Ribbon(S, S))
    trivial = Ribbon(S, S)
    assert t.left == t.middle == t.right == trivial


def test_edges_inside_separators_go_to_the_middle():
    R = Ribbon({0, 1}, {0, 1}, [(0, 1), (1, 2), (0, 2)])
    t = canonical_factorization(R)
    assert (0, 1) in t.middle.W


@given(seeds)
@settings(max_examples=100, deadline=None)
def test_canonical_factorization_properties(seed):
    R = random_ribbon(np.random.default_rng(seed), n_vertices=8)
    t = canonical_factorization(R)
    rep = check_conditions(t)
    assert rep.c1 and rep.c2 and rep.c3 and rep.c4
    assert len(R.V) == len(t.left.V) + len(t.middle.V) + len(t.right.V) - len(t.S_l) - len(t.S_r)
    back = recompose(t)
    assert back == R
    assert canonical_factorization(back) == t


def test_shared_interior_vertex_breaks_disjointness():
    left = Ribbon({0}, {0})
    middle = Ribbon({0}, {1}, [(0, 2), (2, 1)])
    right = Ribbon({1}, {3, 4}, [(1, 3), (1, 4), (2, 3)])
    t = FactorTriple(left, middle, right, {0}, {1})
    rep = check_conditions(t)
    assert rep.c1 and rep.c2 and rep.c3star and not rep.c4
    assert repeated_vertices(t) == {0, 1, 2}
    tp = separating_factorization(t)
    assert tradeoff_quantities(t, tp)["intersections"] == 1


def test_separating_factorization_rejects_disjoint_triples():
    t = canonical_factorization(Ribbon({1}, {2}, [(1, 2)]))
    with pytest.raises(ValueError):
        separating_factorization(t)


@given(seeds, st.booleans())
@settings(max_examples=80, deadline=None)
def test_separating_factorization_properties(seed, proper):
    t = random_valid_triple(np.random.default_rng(seed), proper_middle=proper)
    tp = separating_factorization(t)
    q = tradeoff_quantities(t, tp)
    assert q["sep_increase"] >= 1
    assert q["sep_increase"] + q["lost_paths"] + q["new_isolated"] <= q["intersections"]
    assert tp.middle.Z - t.middle.Z <= repeated_vertices(t)
    # the product of characters only depends on the XOR of the edge sets
    edges = sorted(t.left.W | t.middle.W | t.right.W)
    n = max(max(support(edges), default=0), *(t.left.V | t.middle.V | t.right.V)) + 1
    for mask in range(min(1 << len(edges), 256)):
        G = Graph.from_edges(n, [e for bit, e in enumerate(edges) if mask >> bit & 1])
        assert t.chi(G) == tp.chi(G)


def test_ribbon_record_round_trip():
    R = Ribbon({1}, {2, 3}, [(1, 4), (4, 2)], {7})
    assert Ribbon.from_record(R.to_record()) == R
    assert not R.is_proper
