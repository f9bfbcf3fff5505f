import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudocal.errors import ConfigError, GuardError
from pseudocal.graphcore import sample_null
from pseudocal.ribbons import Ribbon, random_ribbon
from pseudocal.shapes import (
    Shape, assemble_graphical, diagonal_edge, graphical_entry_bruteforce, norm_scaling_experiment,
    shape_of, single_edge, spectral_norm, two_path,
)

seeds = st.integers(min_value=0, max_value=2**32)


def test_shape_of_single_edge():
    U = shape_of(Ribbon({3}, {7}, [(3, 7)]))
    assert U == Shape(2, [(0, 1)], [0], [1])


def test_shape_of_trivial_ribbon():
    assert shape_of(Ribbon({5}, {5})) == Shape(1, [], [0], [0])


def test_isolated_vertices_become_shape_vertices():
    U = shape_of(Ribbon({1}, {4}, [(1, 4)], {2}))
    assert U.t == 3 and U.min_outside_degree() == 0


@given(seeds, st.data())
@settings(max_examples=100, deadline=None)
def test_shape_is_invariant_under_order_preserving_maps(seed, data):
    R = random_ribbon(np.random.default_rng(seed), n_vertices=7)
    targets = sorted(data.draw(st.sets(st.integers(0, 40), min_size=7, max_size=7)))
    f = dict(zip(range(7), targets))
    assert shape_of(R.relabel(f)) == shape_of(R)


def test_shape_statistics():
    assert (single_edge().p, single_edge().r, single_edge().predicted_exponent()) == (1, 0, 0.5)
    assert two_path().predicted_exponent() == 1.0
    assert diagonal_edge().predicted_exponent() == 0.0
    assert Shape.from_record(two_path().to_record()) == two_path()


def test_single_edge_matrix_is_signed_adjacency():
    G = sample_null(15, 4)
    assert np.array_equal(assemble_graphical(single_edge(), G), G.signs)


def test_trivial_shape_gives_identity():
    G = sample_null(9, 0)
    assert np.array_equal(assemble_graphical(Shape(1, [], [0], [0]), G), np.eye(9))


def random_shape(rng):
    t = int(rng.integers(2, 5))
    edges = [e for e in itertools.combinations(range(t), 2) if rng.random() < 0.5]
    A = [v for v in range(t) if rng.random() < 0.4][:2]
    B = [v for v in range(t) if rng.random() < 0.4][:2]
    return Shape(t, edges, A, B)


@pytest.mark.parametrize("k", range(10))
def test_dense_assembly_matches_bruteforce(k):
    rng = np.random.default_rng(100 + k)
    U = random_shape(rng)
    G = sample_null(7, k)
    M = assemble_graphical(U, G)
    rows = list(itertools.combinations(range(7), len(U.A)))
    cols = list(itertools.combinations(range(7), len(U.B)))
    for r, c in [(rows[int(rng.integers(len(rows)))], cols[int(rng.integers(len(cols)))]) for _ in range(12)]:
        assert M[rows.index(r), cols.index(c)] == graphical_entry_bruteforce(U, G, r, c)


def test_dense_guard():
    with pytest.raises(GuardError):
        assemble_graphical(Shape(7, [], [0], [1]), sample_null(8, 0))


def test_norm_methods_on_simple_matrices():
    assert spectral_norm(np.eye(10)) == pytest.approx(1)
    assert spectral_norm(np.ones((12, 12))) == pytest.approx(12)
    assert spectral_norm(np.ones((12, 12)), "power") == pytest.approx(12, rel=1e-8)
    with pytest.raises(ValueError):
        spectral_norm(np.array([[np.nan]]))


@given(seeds, st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_trace_estimate_brackets_the_norm(seed, ell):
    M = np.random.default_rng(seed).standard_normal((20, 14))
    est = spectral_norm(M, "trace", ell)
    true = spectral_norm(M)
    assert est <= true * (1 + 1e-9)
    assert true <= est * 14 ** (1 / (2 * ell)) * (1 + 1e-9)


def test_power_matches_eigensolve():
    M = assemble_graphical(single_edge(), sample_null(60, 2))
    assert spectral_norm(M, "power") == pytest.approx(spectral_norm(M), rel=1e-6)


def test_adjacency_norm_scales_like_sqrt_n():
    ratios = [spectral_norm(sample_null(500, s).signs) / np.sqrt(500) for s in range(20)]
    assert all(1 <= r <= 3 for r in ratios)


def test_norm_scaling_rejects_short_grid():
    with pytest.raises(ConfigError):
        norm_scaling_experiment(single_edge(), [10, 20, 30], 2)
