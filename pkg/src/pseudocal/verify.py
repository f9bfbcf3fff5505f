"""Constraint checks for pseudoexpectations and the FK miscalibration experiments.

The FK experiments use the polynomial ``p = (sum_j G_ij x_j)^ell`` anchored at a
vertex ``i``. FK moments vanish off cliques, so every FK expectation below is
a sum over cliques of size at most ``2 ell``. The sums are computed from
adjacency-matrix products with integer arithmetic and combined with powers of
``q = omega/n`` as exact rationals.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, GuardError
from .graphcore import Graph, derive_seed, make_rng, pair, sample_null, sample_planted, support
from .pseudomoments import (
    MultilinearPoly, PEParams, build_moment_matrix, evaluate, evaluate_calibrated, moment_table,
)
from .shapes import Shape, assemble_graphical

MAX_EIGEN_DIM = 6000
MAX_EXHAUSTIVE_N = 5
MAX_FK_N = 400
EXACT_SAMPLE = 20_000


# -- constraint report -------------------------------------------------------

@dataclass
class ConstraintReport:
    n: int
    omega: str
    d: int
    tau: int
    backend: str
    normalization: float
    size_value: float
    size_ratio: float
    clique_zero_violations: int
    clique_zero_checked: int
    booleanity: str
    min_eigenvalue: float | None
    psd: bool | None
    singleton_top_ratio: float | None

    def to_record(self) -> dict:
        return asdict(self)


def _non_clique_sets(G: Graph, max_size: int, limit: int, seed) -> list[tuple[int, ...]]:
    """Every non-clique set of size ``2..max_size``, or a seeded sample when there are too many."""
    n = G.n
    total = sum(math.comb(n, k) for k in range(2, max_size + 1))
    if total <= limit:
        return [S for k in range(2, max_size + 1) for S in itertools.combinations(range(n), k)
                if not G.is_clique(S)]
    rng = make_rng(seed)
    out = []
    for _ in range(limit):
        if len(out) >= limit // 100:
            break
        k = int(rng.integers(2, max_size + 1))
        S = tuple(sorted(int(v) for v in rng.choice(n, size=k, replace=False)))
        if not G.is_clique(S):
            out.append(S)
    return out


def check_constraints(G: Graph, p: PEParams, backend: str = "calibrated", eigen: bool = True,
                      seed: int = 0) -> ConstraintReport:
    """Evaluate normalization, size, clique zeros, booleanity and positivity.

    Clique zeros are checked in exact arithmetic. Positivity uses the moment
    matrix divided by its ``(∅, ∅)`` entry, restricted to clique indices
    (every other row is identically zero).
    """
    table = moment_table(G, p, 2, backend, "float")
    norm = table.get((), 0.0)
    size = sum(table.get((i,), 0.0) for i in range(p.n))
    checked = _non_clique_sets(G, min(2 * p.d, p.tau if backend == "calibrated" else 2 * p.d),
                               EXACT_SAMPLE, seed)
    violations = sum(1 for S in checked if evaluate(S, G, p, backend, "exact") != 0)
    min_eig = psd = top = None
    if eigen:
        M = build_moment_matrix(G, p, backend, "float", max_dim=10**7)
        live = np.array([G.is_clique(S) for S in M.index])
        if live.sum() > MAX_EIGEN_DIM:
            raise GuardError(f"{int(live.sum())} clique indices exceed the eigensolver guard {MAX_EIGEN_DIM}")
        A = M.entries[np.ix_(live, live)] / norm
        min_eig = float(np.linalg.eigvalsh(A).min())
        psd = min_eig >= -1e-9
        ones = M.block(1, 1) / norm
        top = float(np.linalg.eigvalsh(ones).max()) / (float(p.omega) ** 2 / p.n)
    return ConstraintReport(
        n=p.n, omega=str(p.omega), d=p.d, tau=p.tau, backend=backend,
        normalization=float(norm), size_value=float(size), size_ratio=float(size) / float(p.omega),
        clique_zero_violations=violations, clique_zero_checked=len(checked),
        booleanity="satisfied by construction (multilinear index sets)",
        min_eigenvalue=min_eig, psd=psd, singleton_top_ratio=top,
    )


def normalization_trend(n: int, exponents: Sequence[float], d: int, tau: int, trials: int,
                        seed: int = 0) -> dict:
    """Mean ``|E~[1] - 1|`` per exponent; ``monotone`` flags whether it shrinks as epsilon grows."""
    means = {}
    for e in exponents:
        p = PEParams.from_exponent(n, e, d, tau)
        devs = []
        for t in range(trials):
            G = sample_null(n, derive_seed(seed, t))
            devs.append(abs(float(moment_table(G, p, 0, "calibrated", "float").get((), 0.0)) - 1))
        means[float(e)] = float(np.mean(devs))
    ordered = [means[e] for e in sorted(means, reverse=True)]
    return {"deviation": means, "monotone": all(a >= b for a, b in zip(ordered, ordered[1:]))}


# -- calibration at exhaustive scale ------------------------------------------

def all_graphs(n: int):
    """Every labeled graph on ``n`` vertices."""
    if n > MAX_EXHAUSTIVE_N:
        raise GuardError(f"exhaustive enumeration limited to n <= {MAX_EXHAUSTIVE_N}")
    pairs = list(itertools.combinations(range(n), 2))
    for mask in range(1 << len(pairs)):
        yield Graph.from_edges(n, [e for b, e in enumerate(pairs) if mask >> b & 1])


def calibration_average(p: PEParams, S: Iterable[int]) -> Fraction:
    """Average of ``E~[x_S]`` over all graphs on ``n`` vertices, exactly."""
    S = tuple(S)
    total = Fraction(0)
    count = 0
    for G in all_graphs(p.n):
        total += evaluate_calibrated(S, G, p, "exact")
        count += 1
    return total / count


def calibration_identity_test(p: PEParams, S: Iterable[int]) -> bool:
    """Whether the graph-average of ``E~[x_S]`` equals ``(omega/n)^{|S|}`` exactly (needs ``tau = n``)."""
    if p.tau != p.n:
        raise ConfigError("the exhaustive calibration identity needs tau = n")
    S = tuple(sorted(set(S)))
    return calibration_average(p, S) == p.q ** len(S)


# -- FK sums for p = (sum_j G_ij x_j)^ell ---------------------------------------

@dataclass(frozen=True)
class FKCounts:
    """Integer coefficients of ``q^k`` in three FK expectations at an anchor vertex.

    ``x``: ``E~[x_i]``; ``xp``: ``E~[x_i p]``; ``pp``: ``E~[p^2]``.
    """

    ell: int
    x: tuple
    xp: tuple
    pp: tuple

    def value(self, name: str, q):
        return sum(c * q**k for k, c in enumerate(getattr(self, name)))


def fk_counts(G: Graph, i: int, ell: int) -> FKCounts:
    """Clique sums behind the FK expectations of ``x_i``, ``x_i p`` and ``p^2``."""
    if ell not in (1, 2):
        raise ConfigError("ell must be 1 or 2")
    n = G.n
    if n > MAX_FK_N:
        raise GuardError(f"FK sums limited to n <= {MAX_FK_N}")
    others = [v for v in range(n) if v != i]
    g = G.signs[i, others].astype(np.int64)
    A = G.adjacency()[np.ix_(others, others)].astype(np.int64)
    m = n - 1
    edges = int(A.sum()) // 2
    gAg = int(g @ A @ g) // 2                     # sum over edges jk of g_j g_k
    deg = int((g > 0).sum())
    if ell == 1:
        # p^2 = sum_j x_j + 2 sum_{j<k} g_j g_k x_j x_k
        pp = (0, m, 2 * 2 * gAg)
        return FKCounts(1, (0, 1), (0, 0, 2 * deg), pp)
    nb = np.nonzero(g > 0)[0]
    tri_i = int(A[np.ix_(nb, nb)].sum()) // 2
    # p^4 coefficients: |A|=1: 1; |A|=2: 6 + 8 g g; |A|=3: 12 sum of g g over pairs; |A|=4: 24 prod g
    common = A @ A
    tri_pairs = int(g @ (A * common) @ g) // 2    # sum over triangles of the g g sum over their edges
    ju, ku = np.nonzero(np.triu(A, 1))
    if len(ju):
        W = g[None, :] * A[ju] * A[ku]
        inner = ((W.astype(np.float64) @ A.astype(np.float64)) * W).sum(axis=1) / 2
        four = int(round(float((g[ju] * g[ku] * inner).sum()))) // 6
    else:
        four = 0
    pp = (0, m, 2 * (6 * edges + 8 * gAg), 8 * 12 * tri_pairs, 64 * 24 * four)
    xp = (0, 0, 2 * deg, 8 * 2 * tri_i)
    return FKCounts(2, (0, 1), xp, pp)


def anchor_poly(G: Graph, i: int, ell: int):
    """``p = (sum_j G_ij x_j)^ell`` as an explicit multilinear polynomial."""
    base = MultilinearPoly({(j,): G.sign(i, j) for j in range(G.n) if j != i})
    return base**ell


def fk_square_value(counts: FKCounts, omega: Fraction, n: int, C) -> Fraction:
    """``E~[(C omega^ell x_i - p)^2]`` from precomputed clique sums."""
    q = Fraction(omega) / n
    a = Fraction(C) * Fraction(omega) ** counts.ell
    return a * a * counts.value("x", q) - 2 * a * counts.value("xp", q) + counts.value("pp", q)


def default_c_scan() -> list[Fraction]:
    return [Fraction(2) ** k for k in range(-5, 6)]


def fk_negativity_witness(n: int, omega, ell: int = 2, C_scan: Sequence | None = None, seed: int = 0,
                   anchor: int = 0, G: Graph | None = None) -> dict:
    """Scan ``C`` for a negative FK value of ``(C omega^ell x_i - p)^2`` on a null graph."""
    if ell != 2 and G is None:
        raise ConfigError("the witness is defined for ell = 2")
    omega = Fraction(omega)
    G = sample_null(n, seed) if G is None else G
    counts = fk_counts(G, anchor, ell)
    curve = []
    for C in (default_c_scan() if C_scan is None else [Fraction(c) for c in C_scan]):
        v = fk_square_value(counts, omega, n, C)
        curve.append({"C": C, "value": v, "sign": (v > 0) - (v < 0)})
    best = min(curve, key=lambda r: r["value"])
    return {"n": n, "omega": omega, "ell": ell, "seed": seed, "best_C": best["C"], "value": best["value"],
            "negative": best["value"] < 0, "curve": curve}


# -- Monte Carlo calibration gap --------------------------------------------------

def planted_square_mean(n: int, omega, ell: int, seed) -> float:
    """Planted average over anchors ``i`` of ``p_i(x)^2`` for one draw."""
    s = sample_planted(n, omega, seed)
    v = s.graph.signs.astype(np.float64) @ s.membership.astype(np.float64)
    return float(np.mean(v ** (2 * ell)))


def fk_square_mean(n: int, omega, ell: int, seed, anchors: int = 4) -> float:
    """Null-graph FK value of ``p_i^2`` averaged over the first ``anchors`` vertices."""
    G = sample_null(n, seed)
    q = float(Fraction(omega) / n)
    return float(np.mean([fk_counts(G, i, ell).value("pp", q) for i in range(min(anchors, n))]))


def _crossing(exps: np.ndarray, ratio: np.ndarray, level: float) -> float | None:
    above = np.nonzero(ratio >= level)[0]
    if not len(above) or above[0] == 0:
        return None
    k = above[0]
    x0, x1 = exps[k - 1], exps[k]
    y0, y1 = math.log(ratio[k - 1]), math.log(ratio[k])
    return float(x0 + (math.log(level) - y0) * (x1 - x0) / (y1 - y0))


def fk_calibration_gap(n: int, exponents: Sequence[float], ell: int = 1, trials: int = 50,
                       seed: int = 0, anchors: int = 4) -> dict:
    """Monte Carlo means of ``E~^FK[p^2]`` over null graphs and ``E[p^2]`` under the planted law.

    Slopes are log-log fits in ``omega``: the FK side over the whole grid, the
    planted side over grid points past the crossing, where the clique term
    ``omega^{2 ell + 1}/n`` dominates. The crossing is where the planted mean
    reaches twice the FK mean.
    """
    if ell not in (1, 2):
        raise ConfigError("ell must be 1 or 2")
    exps = np.array(sorted(float(e) for e in exponents))
    if len(exps) < 4:
        raise ConfigError("need at least 4 grid points")
    records, fk, pl = [], [], []
    for k, e in enumerate(exps):
        omega = Fraction(float(n) ** e).limit_denominator(10**6)
        f = [fk_square_mean(n, omega, ell, derive_seed(seed, 2 * (k * trials + t)), anchors) for t in range(trials)]
        g = [planted_square_mean(n, omega, ell, derive_seed(seed, 2 * (k * trials + t) + 1)) for t in range(trials)]
        fk.append(float(np.mean(f)))
        pl.append(float(np.mean(g)))
        records.append({"n": n, "exponent": float(e), "omega": float(omega), "fk": fk[-1], "planted": pl[-1]})
    fk, pl = np.array(fk), np.array(pl)
    logw = exps * math.log(n)
    slope_fk = float(np.polyfit(logw, np.log(fk), 1)[0])
    cross = _crossing(exps, pl / fk, 2.0)
    tail = exps >= (cross if cross is not None else exps[len(exps) // 2]) + 0.1
    slope_planted = float(np.polyfit(logw[tail], np.log(pl[tail]), 1)[0]) if tail.sum() >= 2 else float("nan")
    return {"n": n, "ell": ell, "slope_fk": slope_fk, "slope_planted": slope_planted,
            "expected_fk": ell, "expected_planted": 2 * ell + 1,
            "crossing_exponent": cross, "predicted_crossing": 1 / (ell + 1), "records": records}


# -- concentration of orbit sums --------------------------------------------------

def template_shape(edges: Iterable[tuple[int, int]]) -> Shape:
    """Shape on the vertices touched by ``edges``, relabeled ``0..t-1``; isolated vertices drop out."""
    E = {pair(u, v) for u, v in edges}
    verts = sorted(support(E))
    if len(verts) > 4:
        raise ConfigError("templates have at most 4 vertices")
    order = {v: k for k, v in enumerate(verts)}
    return Shape(len(verts), [(order[u], order[v]) for u, v in E], (), ())


def orbit_sum(edges: Iterable[tuple[int, int]], G: Graph) -> int:
    """``sum of chi_T(G)`` over the vertex-permutation orbit of the template edge set."""
    U = template_shape(edges)
    return int(round(float(assemble_graphical(U, G)[0, 0])))


def orbit_size(edges: Iterable[tuple[int, int]], n: int) -> int:
    U = template_shape(edges)
    return math.perm(n, U.t) // U.automorphisms


def concentration_test(edges: Iterable[tuple[int, int]], n: int, ell: int = 2, trials: int = 100,
                       seed: int = 0) -> dict:
    """Fraction of null graphs with ``|orbit sum| <= n^{t/2} (log n)^{3t}``.

    Also reports the moment bound ``n^{t ell/2} (t ell)^{t ell} / s^ell`` on the
    failure probability (``ell`` even), which may exceed 1 at small ``n``.
    """
    edges = list(edges)
    t = template_shape(edges).t
    s = n ** (t / 2) * math.log(n) ** (3 * t)
    sums = [orbit_sum(edges, sample_null(n, derive_seed(seed, k))) for k in range(trials)]
    passed = sum(abs(v) <= s for v in sums)
    bound = math.exp(t * ell / 2 * math.log(n) + t * ell * math.log(max(t * ell, 1)) - ell * math.log(s)) if t else 0.0
    return {"n": n, "t": t, "threshold": s, "trials": trials, "pass_rate": passed / trials,
            "max_abs": max(abs(v) for v in sums), "failure_bound": bound, "sums": sums}
