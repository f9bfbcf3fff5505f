"""Exact ribbon sums behind the moment-matrix factorization, at brute-force scale.

Every matrix here is an integer polynomial in ``h = (ω/n)^{1/2}``: the
coefficient of ``h^k`` at ``(I, J)`` is a signed count of ribbons. Identities
are checked coefficient by coefficient, which is exact for every ω at once.

Ribbon enumeration is the ground truth throughout. Sums over triples of
ribbons are aggregated by ``(separator, vertex set)`` because the powers of
``ω/n`` only depend on vertex counts, and, given the outer conditions, the
disjointness condition only depends on the three vertex sets.
"""
from __future__ import annotations

import itertools
import math
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import GuardError, InvariantViolation
from .graphcore import Graph, pair, support
from .pseudomoments import PEParams, build_moment_matrix, index_sets
from .ribbons import (FactorTriple, Ribbon, _separator, _split, disjoint_condition, left_condition,
                      middle_condition, path_count, right_condition, separating_factorization)
from .shapes import Shape, shape_of

MAX_N = 8
MAX_D = 2
MAX_TAU = 5

Poly = tuple[int, ...]  # integer coefficients of 1, q, q^2, ...


# -- polynomial matrices ----------------------------------------------------

def _exact_sqrt(q: Fraction) -> Fraction | None:
    a, b = q.numerator, q.denominator
    ra, rb = math.isqrt(a), math.isqrt(b)
    return Fraction(ra, rb) if ra * ra == a and rb * rb == b else None


@dataclass(frozen=True, eq=False)
class IndexedMatrix:
    """Matrix over index sets whose entries are integer polynomials in ``h = (ω/n)^{1/2}``.

    ``coeffs[k, i, j]`` is the coefficient of ``h^k`` at ``(rows[i], cols[j])``.
    """

    rows: tuple
    cols: tuple
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.int64)
        if c.ndim != 3 or c.shape[1:] != (len(self.rows), len(self.cols)):
            raise ValueError("coefficient array must have shape (degree+1, rows, cols)")
        if c.shape[0] == 0:
            c = np.zeros((1,) + c.shape[1:], dtype=np.int64)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, rows, cols, degree: int = 0) -> "IndexedMatrix":
        return cls(tuple(rows), tuple(cols), np.zeros((degree + 1, len(rows), len(cols)), dtype=np.int64))

    @property
    def degree(self) -> int:
        nz = np.nonzero(np.any(self.coeffs != 0, axis=(1, 2)))[0]
        return int(nz[-1]) if len(nz) else 0

    def _padded(self, k: int) -> np.ndarray:
        c = self.coeffs
        if c.shape[0] >= k:
            return c
        return np.concatenate([c, np.zeros((k - c.shape[0],) + c.shape[1:], dtype=np.int64)])

    def _same_axes(self, other: "IndexedMatrix"):
        if self.rows != other.rows or self.cols != other.cols:
            raise ValueError("index sets do not match")

    def __add__(self, other: "IndexedMatrix") -> "IndexedMatrix":
        self._same_axes(other)
        k = max(self.coeffs.shape[0], other.coeffs.shape[0])
        return IndexedMatrix(self.rows, self.cols, self._padded(k) + other._padded(k))

    def __neg__(self) -> "IndexedMatrix":
        return IndexedMatrix(self.rows, self.cols, -self.coeffs)

    def __sub__(self, other: "IndexedMatrix") -> "IndexedMatrix":
        return self + (-other)

    def __matmul__(self, other: "IndexedMatrix") -> "IndexedMatrix":
        if self.cols != other.rows:
            raise ValueError("inner index sets do not match")
        a, b = self.coeffs, other.coeffs
        out = np.zeros((a.shape[0] + b.shape[0] - 1, len(self.rows), len(other.cols)), dtype=np.int64)
        for i in np.nonzero(np.any(a != 0, axis=(1, 2)))[0]:
            for j in np.nonzero(np.any(b != 0, axis=(1, 2)))[0]:
                out[i + j] += a[i] @ b[j]
        return IndexedMatrix(self.rows, other.cols, out)

    @property
    def T(self) -> "IndexedMatrix":
        return IndexedMatrix(self.cols, self.rows, self.coeffs.transpose(0, 2, 1))

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)

    def equals(self, other: "IndexedMatrix") -> bool:
        return (self - other).is_zero()

    def entry(self, I: Iterable[int], J: Iterable[int]) -> dict[int, int]:
        """Nonzero coefficients ``{power of h: count}`` at ``(I, J)``."""
        i = self.rows.index(tuple(sorted(I)))
        j = self.cols.index(tuple(sorted(J)))
        col = self.coeffs[:, i, j]
        return {int(k): int(col[k]) for k in np.nonzero(col)[0]}

    def evaluate(self, q, mode: str = "exact") -> np.ndarray:
        """Entries at ``ω/n = q``.

        Exact mode needs ``h`` rational: either ``q`` is a rational square or
        no odd power of ``h`` occurs.
        """
        if mode == "float":
            h = math.sqrt(float(q))
            powers = np.array([h ** k for k in range(self.coeffs.shape[0])])
            return np.tensordot(powers, self.coeffs.astype(float), axes=1)
        q = Fraction(q)
        h = _exact_sqrt(q)
        if h is None and np.any(self.coeffs[1::2]):
            raise ValueError("odd powers of h present and ω/n is not a rational square; use mode='float'")
        out = np.full(self.coeffs.shape[1:], Fraction(0), dtype=object)
        for k in np.nonzero(np.any(self.coeffs != 0, axis=(1, 2)))[0]:
            w = h ** int(k) if h is not None else q ** (int(k) // 2)
            out = out + self.coeffs[k].astype(object) * w
        return out

    def max_abs(self, q) -> Fraction:
        vals = self.evaluate(q)
        return max((abs(v) for v in vals.flat), default=Fraction(0))


# -- coefficient functions --------------------------------------------------

def _poly_trim(p: Iterable[int]) -> Poly:
    p = list(p)
    while p and p[-1] == 0:
        p.pop()
    return tuple(p)


def _poly_add(a: Poly, b: Poly) -> Poly:
    k = max(len(a), len(b))
    return _poly_trim((a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0) for i in range(k))


def poly_value(p: Poly, q) -> Fraction:
    q = Fraction(q)
    return sum((Fraction(c) * q ** k for k, c in enumerate(p)), Fraction(0))


class CoefficientFn:
    """Shape-indexed coefficients ``c(R)`` for (possibly improper) middle ribbons.

    Values are integer polynomials in ``q = ω/n``. A ``table`` covers shapes
    with at most ``max_vertices`` vertices (absent shapes map to 0); larger
    shapes go to ``fallback`` (memoized) or raise :class:`GuardError`. A
    ``rule`` computes values for ribbons directly instead of a table.
    """

    def __init__(self, table: dict[Shape, Poly] | None = None,
                 rule: Callable[[Ribbon], Poly] | None = None, name: str = "c",
                 mask_rule: Callable[[int, int, int, int], Poly] | None = None,
                 max_vertices: int | None = None,
                 fallback: Callable[[Shape], Poly] | None = None):
        self.table = {k: _poly_trim(v) for k, v in (table or {}).items() if _poly_trim(v)}
        self.rule = rule
        self.mask_rule = mask_rule
        self.name = name
        self.max_vertices = max_vertices
        self.fallback = fallback
        self._local: dict = {}
        self._extra: dict = {}

    def __call__(self, R: Ribbon) -> Poly:
        if self.rule is not None:
            return self.rule(R)
        return self.of_shape(canonical_shape(R))

    def of_shape(self, U: Shape) -> Poly:
        U = U.canonical()
        if self.rule is not None:
            return self.rule(shape_ribbon(U))
        if self.max_vertices is None or U.t <= self.max_vertices:
            return self.table.get(U, ())
        if U not in self._extra:
            if self.fallback is None:
                raise GuardError(f"{self.name} is tabulated up to {self.max_vertices} vertices, not {U.t}")
            self._extra[U] = _poly_trim(self.fallback(U))
        return self._extra[U]

    def local(self, S_l: int, S_r: int, V: int, W: int) -> Poly:
        """Value on the middle ribbon given in mask form (ends, vertex set, edges)."""
        key = (S_l, S_r, V, W)
        val = self._local.get(key)
        if val is None:
            if self.mask_rule is not None:
                val = self.mask_rule(S_l, S_r, V, W)
            else:
                val = self.of_shape(_local_shape(S_l, S_r, V, W))
            self._local[key] = val
        return val

    def value(self, R: Ribbon, q) -> Fraction:
        return poly_value(self(R), q)

    def support(self) -> list[Shape]:
        return sorted(self.table, key=lambda U: (U.t, U.shape_id))

    def to_records(self) -> list[dict]:
        return [{"shape": U.shape_id, "coeffs": list(self.table[U])} for U in self.support()]


def _c3_rule(R: Ribbon) -> Poly:
    return (1,) if middle_condition(R, R.I, R.J) else ()


def _c3_mask(S_l: int, S_r: int, V: int, W: int) -> Poly:
    if V != _esupport(W) | S_l | S_r:
        return ()
    return (1,) if _sep(W, S_l, S_r) == S_l and _sep(W, S_r, S_l) == S_r else ()


def c0() -> CoefficientFn:
    """Indicator of the proper middle condition (leftmost ``S_l``, rightmost ``S_r``, no ``Z``)."""
    return CoefficientFn(rule=_c3_rule, name="c0", mask_rule=_c3_mask)


def _local_shape(S_l: int, S_r: int, V: int, W: int) -> Shape:
    verts = [v for v in range(MAX_N) if V >> v & 1]
    order = {v: i for i, v in enumerate(verts)}
    edges = frozenset((order[u], order[v]) for u, v in _eset(W))
    return _canonical_cached(len(verts), edges, frozenset(order[v] for v in verts if S_l >> v & 1),
                             frozenset(order[v] for v in verts if S_r >> v & 1))


@lru_cache(maxsize=1 << 18)
def _canonical_cached(t: int, edges: frozenset, A: frozenset, B: frozenset) -> Shape:
    return Shape(t, edges, A, B).canonical()


def canonical_shape(R: Ribbon) -> Shape:
    U = shape_of(R)
    return _canonical_cached(U.t, U.edges, U.A, U.B)


def shape_ribbon(U: Shape) -> Ribbon:
    """The ribbon on labels ``0..t-1`` realizing ``U``; uncovered vertices go to ``Z``."""
    Z = frozenset(range(U.t)) - support(U.edges) - U.A - U.B
    return Ribbon(U.A, U.B, U.edges, Z)


@lru_cache(maxsize=None)
def middle_shapes(d: int, tau: int) -> tuple[Shape, ...]:
    """Canonical shapes of all middle ribbons with ends of size ``≤ d`` and ``≤ tau`` vertices.

    Improper middles are included: vertices outside the edges and ends are isolated.
    """
    seen = set()
    for k in range(tau + 1):
        verts = range(k)
        pairs = list(itertools.combinations(verts, 2))
        ends = [frozenset(c) for s in range(d + 1) for c in itertools.combinations(verts, s)]
        for A in ends:
            for B in ends:
                for m in range(1 << len(pairs)):
                    W = frozenset(p for i, p in enumerate(pairs) if m >> i & 1)
                    seen.add(_canonical_cached(k, W, A, B))
    return tuple(sorted(seen, key=lambda U: (U.t, U.shape_id)))


# -- ribbon catalogues ------------------------------------------------------

def _local_pairs(k: int) -> list[tuple[int, int]]:
    return list(itertools.combinations(range(k), 2))


def _subsets_upto(k: int, d: int) -> list[frozenset]:
    return [frozenset(c) for s in range(min(d, k) + 1) for c in itertools.combinations(range(k), s)]


@lru_cache(maxsize=None)
def _outer_reps(k: int, d: int) -> tuple:
    """Left-condition ribbons ``(I, S, W)`` whose vertex set is exactly ``0..k-1``."""
    out = []
    pairs = _local_pairs(k)
    full = frozenset(range(k))
    for S in _subsets_upto(k, d):
        allowed = [p for p in pairs if not (p[0] in S and p[1] in S)]
        for I in _subsets_upto(k, d):
            for m in range(1 << len(allowed)):
                W = frozenset(p for i, p in enumerate(allowed) if m >> i & 1)
                if support(W) | I | S != full:
                    continue
                if left_condition(Ribbon(I, S, W), S):
                    out.append((I, S, W))
    return tuple(out)


@lru_cache(maxsize=None)
def _middle_reps(k: int, d: int) -> tuple:
    """All ``(S_l, S_r, W)`` on ``0..k-1``; uncovered vertices are isolated. Flags the proper middle condition."""
    out = []
    pairs = _local_pairs(k)
    for Sl in _subsets_upto(k, d):
        for Sr in _subsets_upto(k, d):
            for m in range(1 << len(pairs)):
                W = frozenset(p for i, p in enumerate(pairs) if m >> i & 1)
                R = Ribbon(Sl, Sr, W, frozenset(range(k)) - support(W) - Sl - Sr)
                out.append((Sl, Sr, W, middle_condition(R, Sl, Sr), _canonical_cached(k, W, Sl, Sr)))
    return tuple(out)


@lru_cache(maxsize=None)
def _full_reps(k: int, d: int) -> tuple:
    """Proper ``(I, J)``-ribbons with vertex set exactly ``0..k-1``."""
    out = []
    pairs = _local_pairs(k)
    full = frozenset(range(k))
    for I in _subsets_upto(k, d):
        for J in _subsets_upto(k, d):
            for m in range(1 << len(pairs)):
                W = frozenset(p for i, p in enumerate(pairs) if m >> i & 1)
                if support(W) | I | J == full:
                    out.append((I, J, W))
    return tuple(out)


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a.astype(np.uint64)).astype(np.int64)


class RibbonCatalog:
    """Every ribbon on ``[n]`` with ends of size ``≤ d`` and at most ``tau`` vertices.

    Three families are kept as flat arrays of (end index, end index, vertex mask,
    edge mask): outer pieces satisfying the left condition, middle pieces
    (proper or improper) and all proper ``(I, J)``-ribbons. Graph-independent;
    evaluating on a graph only needs the characters of the edge masks.
    """

    def __init__(self, n: int, d: int, tau: int):
        if n > MAX_N or d > MAX_D or tau > MAX_TAU:
            raise GuardError(f"ribbon enumeration limited to n ≤ {MAX_N}, d ≤ {MAX_D}, tau ≤ {MAX_TAU}")
        if not (1 <= d <= tau <= n):
            raise GuardError("need 1 ≤ d ≤ tau ≤ n")
        self.n, self.d, self.tau = n, d, tau
        self.index = tuple(index_sets(n, d))
        self.dim = len(self.index)
        self.pos = {sum(1 << v for v in S): i for i, S in enumerate(self.index)}
        self.set_size = np.array([len(S) for S in self.index])
        self.pair_bit = {p: i for i, p in enumerate(itertools.combinations(range(n), 2))}
        self._build()

    def _mask(self, sub, local) -> int:
        return sum(1 << sub[v] for v in local)

    def _edges(self, sub, W) -> int:
        return sum(1 << self.pair_bit[(sub[u], sub[v])] for u, v in W)

    def _build(self):
        outer, middle, full = [], [], []
        shapes: dict[Shape, int] = {}
        mid_shape, mid_c3 = [], []
        for k in range(self.tau + 1):
            reps_o, reps_m, reps_f = _outer_reps(k, self.d), _middle_reps(k, self.d), _full_reps(k, self.d)
            for sub in itertools.combinations(range(self.n), k):
                vm = sum(1 << v for v in sub)
                for I, S, W in reps_o:
                    outer.append((self.pos[self._mask(sub, I)], self.pos[self._mask(sub, S)], vm, self._edges(sub, W)))
                for Sl, Sr, W, c3, U in reps_m:
                    middle.append((self.pos[self._mask(sub, Sl)], self.pos[self._mask(sub, Sr)], vm, self._edges(sub, W)))
                    mid_shape.append(shapes.setdefault(U, len(shapes)))
                    mid_c3.append(c3)
                for I, J, W in reps_f:
                    full.append((self.pos[self._mask(sub, I)], self.pos[self._mask(sub, J)], vm, self._edges(sub, W)))
        as_arr = lambda rows: np.array(rows, dtype=np.int64).reshape(-1, 4)
        self.outer, self.middle, self.full = as_arr(outer), as_arr(middle), as_arr(full)
        self.shapes = list(shapes)
        self.mid_shape = np.array(mid_shape, dtype=np.int64)
        self.mid_c3 = np.array(mid_c3, dtype=bool)
        self._build_incidence()

    def _build_incidence(self):
        """Index the (separator, vertex set) keys and the disjoint vertex-set triples."""
        dim = self.dim
        keys = sorted(set(zip(self.outer[:, 1].tolist(), self.outer[:, 2].tolist())))
        self.sv = np.array(keys, dtype=np.int64).reshape(-1, 2)
        sv_id = {k: i for i, k in enumerate(keys)}
        self.outer_sv = np.array([sv_id[(s, v)] for s, v in zip(self.outer[:, 1].tolist(), self.outer[:, 2].tolist())],
                                 dtype=np.int64)
        smask = np.array([sum(1 << v for v in S) for S in self.index], dtype=np.int64)
        self.sv_excess = _popcount(self.sv[:, 1]) - self.set_size[self.sv[:, 0]]

        mkeys = sorted(set(zip(self.middle[:, 0].tolist(), self.middle[:, 1].tolist(), self.middle[:, 2].tolist())))
        self.mv = np.array(mkeys, dtype=np.int64).reshape(-1, 3)
        mv_id = {k: i for i, k in enumerate(mkeys)}
        self.middle_mv = np.array([mv_id[k] for k in zip(self.middle[:, 0].tolist(), self.middle[:, 1].tolist(),
                                                          self.middle[:, 2].tolist())], dtype=np.int64)
        self.mv_size = _popcount(self.mv[:, 2])

        by_sep = defaultdict(list)
        for i, (s, v) in enumerate(keys):
            by_sep[s].append((i, v))
        rows, cols, mids = [], [], []
        for m, (a, b, vm) in enumerate(mkeys):
            sl, sr = int(smask[a]), int(smask[b])
            L = [(i, v) for i, v in by_sep.get(a, []) if v & vm == sl]
            R = [(j, v) for j, v in by_sep.get(b, []) if v & vm == sr]
            for i, vl in L:
                for j, vr in R:
                    if vl & vr == sl & sr:
                        rows.append(i)
                        cols.append(j)
                        mids.append(m)
        self.inc_rows = np.array(rows, dtype=np.int64)
        self.inc_cols = np.array(cols, dtype=np.int64)
        self.inc_mids = np.array(mids, dtype=np.int64)

    # per-graph sums ---------------------------------------------------------

    def nonedge_mask(self, G: Graph) -> int:
        if G.n != self.n:
            raise ValueError(f"graph has {G.n} vertices, catalogue is for {self.n}")
        return sum(1 << b for (u, v), b in self.pair_bit.items() if G.signs[u, v] < 0)

    def characters(self, G: Graph, edge_masks: np.ndarray) -> np.ndarray:
        ne = np.uint64(self.nonedge_mask(G))
        return 1 - 2 * (_popcount(edge_masks.astype(np.uint64) & ne) & 1)

    def moment_matrix(self, G: Graph) -> IndexedMatrix:
        """``M(I, J) = Σ_R (ω/n)^{|V(R)|} χ_R`` over proper ribbons with ``≤ tau`` vertices."""
        chi = self.characters(G, self.full[:, 3])
        deg = 2 * _popcount(self.full[:, 2])
        return self._scatter(deg, self.full[:, 0], self.full[:, 1], chi)

    def _scatter(self, deg, rows, cols, vals) -> IndexedMatrix:
        D = int(deg.max()) + 1 if len(deg) else 1
        out = np.zeros(D * self.dim * self.dim, dtype=np.int64)
        np.add.at(out, (deg * self.dim + rows) * self.dim + cols, vals)
        return IndexedMatrix(self.index, self.index, out.reshape(D, self.dim, self.dim))

    def build_L(self, G: Graph) -> IndexedMatrix:
        """``L(I, S) = (ω/n)^{-|S|/2} Σ (ω/n)^{|V|} χ`` over left-condition ribbons."""
        chi = self.characters(G, self.outer[:, 3])
        deg = 2 * _popcount(self.outer[:, 2]) - self.set_size[self.outer[:, 1]]
        return self._scatter(deg, self.outer[:, 0], self.outer[:, 1], chi)

    def middle_weights(self, c: "CoefficientFn") -> np.ndarray:
        """Coefficient polynomial of every middle in the catalogue, shape ``(entries, degree+1)``."""
        polys = [c.of_shape(U) for U in self.shapes]
        D = max((len(p) for p in polys), default=1) or 1
        table = np.zeros((len(polys), D), dtype=np.int64)
        for i, p in enumerate(polys):
            table[i, :len(p)] = p
        return table[self.mid_shape]

    def build_Q(self, G: Graph, c: "CoefficientFn | None" = None) -> IndexedMatrix:
        """``Q_c(S_l, S_r) = Σ c(R) (ω/n)^{|V| - (|S_l|+|S_r|)/2} χ`` over middles; ``c`` defaults to c0."""
        chi = self.characters(G, self.middle[:, 3])
        base = 2 * _popcount(self.middle[:, 2]) - self.set_size[self.middle[:, 0]] - self.set_size[self.middle[:, 1]]
        if c is None:
            sel = self.mid_c3
            return self._scatter(base[sel], self.middle[sel, 0], self.middle[sel, 1], chi[sel])
        w = self.middle_weights(c)
        parts = []
        for k in range(w.shape[1]):
            sel = w[:, k] != 0
            parts.append(self._scatter(base[sel] + 2 * k, self.middle[sel, 0], self.middle[sel, 1], chi[sel] * w[sel, k]))
        out = IndexedMatrix.zeros(self.index, self.index)
        for p in parts:
            out = out + p
        return out

    def triple_sums(self, G: Graph, c: "CoefficientFn | None" = None) -> tuple[IndexedMatrix, IndexedMatrix]:
        """Sums over triples (left, middle, right) with every piece ``≤ tau`` vertices.

        Each triple contributes ``c(R_m) (ω/n)^{|V_l|+|V_m|+|V_r|-|S_l|-|S_r|} χ``.
        Returns ``(disjoint, overlapping)``: triples satisfying the disjointness
        condition and triples violating it.
        """
        dim, nsv, nmv = self.dim, len(self.sv), len(self.mv)
        chi_o = self.characters(G, self.outer[:, 3])
        A = np.zeros(dim * nsv, dtype=np.int64)
        np.add.at(A, self.outer[:, 0] * nsv + self.outer_sv, chi_o)
        A = A.reshape(dim, nsv)

        chi_m = self.characters(G, self.middle[:, 3])
        if c is None:
            w = self.mid_c3.astype(np.int64)[:, None]
        else:
            w = self.middle_weights(c)
        Y = int(self.mv_size.max()) + w.shape[1]
        Bm = np.zeros((Y, nmv), dtype=np.int64)  # by middle vertex count plus coefficient degree
        for k in range(w.shape[1]):
            sel = w[:, k] != 0
            y = self.mv_size[self.middle_mv[sel]] + k
            np.add.at(Bm, (y, self.middle_mv[sel]), chi_m[sel] * w[sel, k])

        # every (S_l, V_l) x (S_r, V_r) x V_m combination, then the disjoint subset
        sl_of_row, sr_of_col = self.sv[:, 0], self.sv[:, 0]
        tot = np.zeros((Y, dim, dim), dtype=np.int64)
        np.add.at(tot, (slice(None), self.mv[:, 0], self.mv[:, 1]), Bm)
        K_all = tot[:, sl_of_row][:, :, sr_of_col]
        K_dis = np.zeros((Y, nsv * nsv), dtype=np.int64)
        for y in range(Y):
            vals = Bm[y, self.inc_mids]
            if np.any(vals):
                K_dis[y] = np.bincount(self.inc_rows * nsv + self.inc_cols, weights=vals,
                                       minlength=nsv * nsv).round().astype(np.int64)
        K_dis = K_dis.reshape(Y, nsv, nsv)
        K_ovl = K_all - K_dis

        ex = self.sv_excess
        X = int(ex.max()) + 1
        E = 2 * X + Y
        dis = np.zeros((E, dim, dim), dtype=np.int64)
        ovl = np.zeros((E, dim, dim), dtype=np.int64)
        blocks = [np.nonzero(ex == x)[0] for x in range(X)]
        for y in range(Y):
            if not (np.any(K_dis[y]) or np.any(K_ovl[y])):
                continue
            for x, rows in enumerate(blocks):
                if not len(rows):
                    continue
                left = A[:, rows]
                if not np.any(left):
                    continue
                LD = left @ K_dis[y][rows]
                LO = left @ K_ovl[y][rows]
                for z, cols in enumerate(blocks):
                    if not len(cols):
                        continue
                    right = A[:, cols].T
                    dis[x + y + z] += LD[:, cols] @ right
                    ovl[x + y + z] += LO[:, cols] @ right
        to_h = lambda arr: _spread_even(arr)
        return (IndexedMatrix(self.index, self.index, to_h(dis)),
                IndexedMatrix(self.index, self.index, to_h(ovl)))


def _spread_even(arr: np.ndarray) -> np.ndarray:
    """Powers of ``q`` to powers of ``h``."""
    out = np.zeros((2 * arr.shape[0] - 1,) + arr.shape[1:], dtype=np.int64)
    out[::2] = arr
    return out


# -- preimages of a separating factorization --------------------------------
#
# Local ribbons live on labels 0..k-1. Vertex sets are bit masks over labels
# and edge sets are bit masks over PAIR_BIT.

PAIR_BIT = {p: i for i, p in enumerate(itertools.combinations(range(MAX_N), 2))}
BIT_PAIR = {i: p for p, i in PAIR_BIT.items()}
_L, _M, _R = 1, 2, 4


def _vset(mask: int) -> frozenset:
    return frozenset(v for v in range(MAX_N) if mask >> v & 1)


def _vmask(vs: Iterable[int]) -> int:
    return sum(1 << v for v in vs)


def _eset(mask: int) -> frozenset:
    return frozenset(BIT_PAIR[i] for i in range(len(BIT_PAIR)) if mask >> i & 1)


def _emask(W: Iterable) -> int:
    return sum(1 << PAIR_BIT[pair(u, v)] for u, v in W)


@lru_cache(maxsize=None)
def _esupport(E: int) -> int:
    out = 0
    for i in range(len(BIT_PAIR)):
        if E >> i & 1:
            u, v = BIT_PAIR[i]
            out |= 1 << u | 1 << v
    return out


@lru_cache(maxsize=None)
def _sep(E: int, A: int, B: int) -> int:
    return _vmask(_separator(_eset(E), _vset(A), _vset(B))[1])


@lru_cache(maxsize=None)
def _outer_ok(end: int, S: int, W: int, is_left: bool) -> bool:
    if is_left:
        return left_condition(Ribbon(_vset(end), _vset(S), _eset(W)), _vset(S))
    return right_condition(Ribbon(_vset(S), _vset(end), _eset(W)), _vset(S))


@lru_cache(maxsize=1 << 20)
def _outer_choices(Vp: int, end: int, S: int, forced: int, free: int, is_left: bool) -> tuple[int, ...]:
    """Edge sets ``forced ∪ (subset of free)`` making a valid outer piece on vertex set ``Vp``."""
    out = []
    sub = free
    while True:
        W = forced | sub
        if _esupport(W) | end | S == Vp and _outer_ok(end, S, W, is_left):
            out.append(W)
        if sub == 0:
            break
        sub = (sub - 1) & free
    return tuple(out)


@lru_cache(maxsize=None)
def _local_pairs_bits(k: int) -> tuple:
    return tuple((u, v, PAIR_BIT[(u, v)]) for u, v in itertools.combinations(range(k), 2))


def _submasks(mask: int, max_size: int | None = None) -> Iterator[int]:
    sub = mask
    while True:
        if max_size is None or sub.bit_count() <= max_size:
            yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


@dataclass(frozen=True)
class LocalTriple:
    """A factor triple on labels ``0..k-1`` in mask form."""

    k: int
    I: int
    J: int
    S_l: int
    S_r: int
    V_l: int
    V_m: int
    V_r: int
    W_l: int
    W_m: int
    W_r: int

    @classmethod
    def from_triple(cls, t: FactorTriple) -> "LocalTriple":
        L, M, R = t.pieces()
        V = L.V | M.V | R.V
        if V and (min(V) < 0 or max(V) >= MAX_N):
            raise GuardError(f"local triples use labels 0..{MAX_N - 1}")
        return cls(max(V, default=-1) + 1, _vmask(t.I), _vmask(t.J), _vmask(t.S_l), _vmask(t.S_r),
                   _vmask(L.V), _vmask(M.V), _vmask(R.V), _emask(L.W), _emask(M.W), _emask(R.W))

    def to_triple(self) -> FactorTriple:
        Z = _vset(self.V_m & ~(_esupport(self.W_m) | self.S_l | self.S_r))
        return FactorTriple(Ribbon(_vset(self.I), _vset(self.S_l), _eset(self.W_l)),
                            Ribbon(_vset(self.S_l), _vset(self.S_r), _eset(self.W_m), Z),
                            Ribbon(_vset(self.S_r), _vset(self.J), _eset(self.W_r)),
                            _vset(self.S_l), _vset(self.S_r))

    @property
    def vertex_total(self) -> int:
        return (self.V_l.bit_count() + self.V_m.bit_count() + self.V_r.bit_count()
                - self.S_l.bit_count() - self.S_r.bit_count())


def _split_masks(X: int, V: int, I: int, J: int, Sl: int, Sr: int) -> tuple[int, ...] | None:
    try:
        left, mid, right = _split(_eset(X), _vset(V), _vset(I), _vset(J), _vset(Sl), _vset(Sr))
    except InvariantViolation:
        return None
    return (_vmask(left.V), _vmask(mid.V), _vmask(right.V), _emask(left.W), _emask(mid.W), _emask(right.W))


def _preimage_groups(P: LocalTriple, d: int) -> Iterator[tuple]:
    """Preimages of ``P`` grouped by vertex placement.

    Yields ``(S_l, S_r, V_l, V_m, V_r, lefts, rights)``; every pair of a left
    and a right edge set gives one triple, whose middle edge set is fixed by
    parity. Pruning uses only the definitions: the repeated-vertex set ``U``
    fixes the primed separators, every repeated vertex lies in at least two
    pieces and every other vertex in exactly one, and each edge of the
    recomposed graph lies in an odd number of pieces containing both endpoints.
    Triples whose middle edges leave ``V_m`` are filtered by the caller.
    """
    k, I, J = P.k, P.I, P.J
    V = P.V_l | P.V_m | P.V_r
    X = P.W_l ^ P.W_m ^ P.W_r
    if _split_masks(X, V, I, J, P.S_l, P.S_r) != (P.V_l, P.V_m, P.V_r, P.W_l, P.W_m, P.W_r):
        return
    pairs = [(u, v, b) for u, v, b in _local_pairs_bits(k) if V >> u & 1 and V >> v & 1]
    xpairs = [(u, v) for u, v, b in pairs if X >> b & 1]
    verts = [v for v in range(k) if V >> v & 1]
    for U in _submasks(V):
        if U == 0 or _sep(X, I, J | U) != P.S_l or _sep(X, J, I | U) != P.S_r:
            continue
        single = [v for v in verts if not U >> v & 1]
        multi = [v for v in verts if U >> v & 1]
        single_x = [(u, v) for u, v in xpairs if not U >> u & 1 and not U >> v & 1]
        for Sl in _submasks(U, d):
            for Sr in _submasks(U, d):
                need = [(_L if I >> v & 1 else 0) | (_R if J >> v & 1 else 0)
                        | (_L | _M if Sl >> v & 1 else 0) | (_M | _R if Sr >> v & 1 else 0) for v in range(k)]
                sch = [[o for o in (_L, _M, _R) if o & need[v] == need[v]] for v in single]
                mch = [[o for o in (3, 5, 6, 7) if o & need[v] == need[v]] for v in multi]
                pv = [0] * k
                for sp in itertools.product(*sch):
                    for v, o in zip(single, sp):
                        pv[v] = o
                    if any(pv[u] != pv[v] for u, v in single_x):
                        continue
                    for mp in itertools.product(*mch):
                        for v, o in zip(multi, mp):
                            pv[v] = o
                        if any(not pv[u] & pv[v] for u, v in xpairs):
                            continue
                        Vl = Vm = Vr = 0
                        for v in verts:
                            if pv[v] & _L:
                                Vl |= 1 << v
                            if pv[v] & _M:
                                Vm |= 1 << v
                            if pv[v] & _R:
                                Vr |= 1 << v
                        if (Vl & Vm) == Sl and (Vm & Vr) == Sr and (Vl & Vr) == (Sl & Sr):
                            continue
                        fl = frl = fr = frr = 0
                        for u, v, b in pairs:
                            common = pv[u] & pv[v]
                            if not common:
                                continue
                            shared = common.bit_count() >= 2
                            if common & _L and not (Sl >> u & 1 and Sl >> v & 1):
                                if shared:
                                    frl |= 1 << b
                                elif X >> b & 1:
                                    fl |= 1 << b
                            if common & _R and not (Sr >> u & 1 and Sr >> v & 1):
                                if shared:
                                    frr |= 1 << b
                                elif X >> b & 1:
                                    fr |= 1 << b
                        lefts = _outer_choices(Vl, I, Sl, fl, frl, True)
                        if not lefts:
                            continue
                        rights = _outer_choices(Vr, J, Sr, fr, frr, False)
                        if rights:
                            yield Sl, Sr, Vl, Vm, Vr, lefts, rights


def _preimages_local(P: LocalTriple, d: int) -> Iterator[LocalTriple]:
    X = P.W_l ^ P.W_m ^ P.W_r
    for Sl, Sr, Vl, Vm, Vr, lefts, rights in _preimage_groups(P, d):
        for Wl in lefts:
            for Wr in rights:
                Wm = X ^ Wl ^ Wr
                if not _esupport(Wm) & ~Vm:
                    yield LocalTriple(P.k, P.I, P.J, Sl, Sr, Vl, Vm, Vr, Wl, Wm, Wr)


def preimage_profile(P: LocalTriple, d: int) -> Counter:
    """Counts of preimages of ``P`` keyed by ``((S_l, S_r, V_m, W_m), r)``.

    ``r`` is the vertex excess of the preimage over ``P``: the number of extra
    vertex copies beyond what a disjoint triple would have.
    """
    X = P.W_l ^ P.W_m ^ P.W_r
    base = P.vertex_total
    out: Counter = Counter()
    for Sl, Sr, Vl, Vm, Vr, lefts, rights in _preimage_groups(P, d):
        r = Vl.bit_count() + Vm.bit_count() + Vr.bit_count() - Sl.bit_count() - Sr.bit_count() - base
        for Wl in lefts:
            for Wr in rights:
                Wm = X ^ Wl ^ Wr
                if not _esupport(Wm) & ~Vm:
                    out[(Sl, Sr, Vm, Wm), r] += 1
    return out


def preimages(P: FactorTriple, d: int) -> list[FactorTriple]:
    """All triples (conditions 1, 3*, 2, not 4; pieces unbounded) whose separating factorization is ``P``."""
    return [t.to_triple() for t in _preimages_local(LocalTriple.from_triple(P), d)]


def preimages_bruteforce(P: FactorTriple, d: int, max_vertices: int = 5) -> list[FactorTriple]:
    """Reference enumeration: every outer piece on ``V(P)``, every middle, then filter."""
    V = P.left.V | P.middle.V | P.right.V
    if len(V) > max_vertices:
        raise GuardError(f"brute-force preimage search limited to {max_vertices} vertices")
    X = P.left.W ^ P.middle.W ^ P.right.W
    I, J = P.I, P.J

    def outer(end, S, is_left):
        out = []
        rest = sorted(V - end - S)
        for k in range(len(rest) + 1):
            for extra in itertools.combinations(rest, k):
                Vp = end | S | frozenset(extra)
                pairs = [p for p in itertools.combinations(sorted(Vp), 2) if not (p[0] in S and p[1] in S)]
                for m in range(1 << len(pairs)):
                    W = frozenset(p for i, p in enumerate(pairs) if m >> i & 1)
                    if support(W) | end | S != Vp:
                        continue
                    R = Ribbon(end, S, W) if is_left else Ribbon(S, end, W)
                    if (left_condition(R, S) if is_left else right_condition(R, S)):
                        out.append(R)
        return out

    subsets = [frozenset(c) for k in range(d + 1) for c in itertools.combinations(sorted(V), k)]
    res = []
    for Sl in subsets:
        lefts = outer(I, Sl, True)
        if not lefts:
            continue
        for Sr in subsets:
            for Lp in lefts:
                for Rp in outer(J, Sr, False):
                    Wm = X ^ Lp.W ^ Rp.W
                    base = support(Wm) | Sl | Sr | (V - Lp.V - Rp.V)
                    if not base <= V:
                        continue
                    free = sorted((Lp.V | Rp.V) - base)
                    for k in range(len(free) + 1):
                        for extra in itertools.combinations(free, k):
                            Vm = base | frozenset(extra)
                            Mp = Ribbon(Sl, Sr, Wm, Vm - support(Wm) - Sl - Sr)
                            t = FactorTriple(Lp, Mp, Rp, Sl, Sr)
                            if disjoint_condition(t):
                                continue
                            if separating_factorization(t, check=False) == P:
                                res.append(t)
    return res


# -- primed triple types ----------------------------------------------------

@lru_cache(maxsize=None)
def _outer_extensions(s: int, a: int, d: int) -> tuple[tuple[int, int, int], ...]:
    """Left-condition pieces on ``S = {0..s-1}`` plus fresh vertices ``s..s+a-1`` (all used).

    Returns ``(end mask, edge mask, orbit size)`` with one representative per
    orbit under permutations of the fresh vertices. Right pieces are mirror
    images, so the same table serves both sides.
    """
    k = s + a
    S = (1 << s) - 1
    full = (1 << k) - 1
    allowed = [b for u, v, b in _local_pairs_bits(k) if not (u < s and v < s)]
    perms = [tuple(range(s)) + tuple(s + x for x in p) for p in itertools.permutations(range(a))]
    seen: dict[tuple[int, int], int] = {}
    for end in _submasks(full, d):
        for m in range(1 << len(allowed)):
            W = sum(1 << b for i, b in enumerate(allowed) if m >> i & 1)
            if _esupport(W) | end | S != full or not _outer_ok(end, S, W, True):
                continue
            images = {(_map_vmask(end, p), _map_emask(W, p)) for p in perms}
            key = min(images)
            seen[key] = len(images)
    return tuple((e, w, o) for (e, w), o in sorted(seen.items()))


def _map_vmask(mask: int, perm: Sequence[int]) -> int:
    return sum(1 << perm[v] for v in range(len(perm)) if mask >> v & 1)


def _map_emask(mask: int, perm: Sequence[int]) -> int:
    out = 0
    for i in range(len(BIT_PAIR)):
        if mask >> i & 1:
            u, v = BIT_PAIR[i]
            out |= 1 << PAIR_BIT[pair(perm[u], perm[v])]
    return out


@dataclass(frozen=True)
class PrimedType:
    """A disjoint triple on labels ``0..k-1``: middle shape on ``0..t-1``, then fresh left and right vertices.

    ``weight / denom`` is the number of labelings per injection into ``[n]``.
    """

    triple: LocalTriple
    middle: Shape
    weight: int
    denom: int


def primed_types(n: int, d: int, tau: int) -> Iterator[PrimedType]:
    """Triples meeting conditions 1, 3*, 2 and 4 with pieces of ``≤ tau`` vertices and ``≤ n`` vertices overall."""
    for U in middle_shapes(d, tau):
        t = U.t
        Sl, Sr = sorted(U.A), sorted(U.B)
        Wm = _emask(U.edges)
        aut = U.automorphisms
        for a in range(0, min(tau - len(Sl), n - t) + 1):
            lmap = tuple(Sl) + tuple(range(t, t + a))
            lefts = _outer_extensions(len(Sl), a, d)
            for b in range(0, min(tau - len(Sr), n - t - a) + 1):
                rmap = tuple(Sr) + tuple(range(t + a, t + a + b))
                rights = _outer_extensions(len(Sr), b, d)
                denom = aut * math.factorial(a) * math.factorial(b)
                for le, lw, lo in lefts:
                    I, Wl = _map_vmask(le, lmap), _map_emask(lw, lmap)
                    for re_, rw, ro in rights:
                        J, Wr = _map_vmask(re_, rmap), _map_emask(rw, rmap)
                        tr = LocalTriple(t + a + b, I, J, _vmask(Sl), _vmask(Sr),
                                         _vmask(lmap), (1 << t) - 1, _vmask(rmap), Wl, Wm, Wr)
                        yield PrimedType(tr, U, lo * ro, denom)


# -- the coefficient recursion ----------------------------------------------

def gamma(P: LocalTriple, c: CoefficientFn, d: int) -> Poly:
    """``Σ c(R_m) q^r`` over the preimages of ``P``, as a polynomial in ``q``."""
    return gammas(P, [c], d)[0]


def gammas(P: LocalTriple, cs: Sequence[CoefficientFn], d: int) -> list[Poly]:
    acc = [defaultdict(int) for _ in cs]
    for (Sl, Sr, Vm, Wm), r in (prof := preimage_profile(P, d)):
        cnt = prof[(Sl, Sr, Vm, Wm), r]
        for a, c in zip(acc, cs):
            for k, v in enumerate(c.local(Sl, Sr, Vm, Wm)):
                if v:
                    a[k + r] += cnt * v
    return [_poly_trim(a.get(k, 0) for k in range(max(a, default=-1) + 1)) for a in acc]


def _alternative_end(S: list[int], fresh: int, d: int) -> tuple[int, int, int]:
    """A nontrivial outer piece ending at ``S``: returns ``(end mask, edge mask, fresh used)``.

    Empty ``S``: a single isolated fresh end vertex. Otherwise, when room
    allows, the first vertex of ``S`` is replaced in the end by two fresh
    vertices both joined to it. Falls back to the trivial piece.
    """
    if not S:
        return 1 << fresh, 0, 1
    if len(S) + 1 <= d:
        s0, x, y = S[0], fresh, fresh + 1
        end = _vmask(S[1:]) | 1 << x | 1 << y
        return end, 1 << PAIR_BIT[pair(x, s0)] | 1 << PAIR_BIT[pair(y, s0)], 2
    return _vmask(S), 0, 0


def outer_choice(U: Shape, d: int, choice: str = "trivial") -> LocalTriple:
    """The triple ``(R_l, R_m, R_r)`` with middle ``U`` used to evaluate ``c'(U)``.

    ``trivial`` uses edgeless outer pieces with ``I = S_l`` and ``J = S_r``;
    ``alternative`` uses the pieces of :func:`_alternative_end` on fresh vertices.
    """
    if choice not in ("trivial", "alternative"):
        raise ValueError("choice must be 'trivial' or 'alternative'")
    t = U.t
    Sl, Sr = sorted(U.A), sorted(U.B)
    Wm = _emask(U.edges)
    if choice == "trivial":
        return LocalTriple(t, _vmask(Sl), _vmask(Sr), _vmask(Sl), _vmask(Sr),
                           _vmask(Sl), (1 << t) - 1, _vmask(Sr), 0, Wm, 0)
    I, Wl, a = _alternative_end(Sl, t, d)
    J, Wr, b = _alternative_end(Sr, t + a, d)
    k = t + a + b
    if k > MAX_N:
        raise GuardError(f"alternative outer pieces need {k} > {MAX_N} labels")
    Vl = _vmask(Sl) | _vmask(range(t, t + a))
    Vr = _vmask(Sr) | _vmask(range(t + a, k))
    if not (_outer_ok(I, _vmask(Sl), Wl, True) and _outer_ok(J, _vmask(Sr), Wr, False)):
        raise InvariantViolation(f"alternative outer piece violates the outer condition for {U.shape_id}")
    return LocalTriple(k, I, J, _vmask(Sl), _vmask(Sr), Vl, (1 << t) - 1, Vr, Wl, Wm, Wr)


def cprime_recursion(c: CoefficientFn, d: int, tau: int, choice: str = "trivial",
                     check: str | None = None) -> CoefficientFn:
    """Next coefficient function ``c'``, tabulated on every middle shape with ``≤ tau`` vertices.

    Larger shapes are evaluated on demand with the same outer choice. With
    ``check`` set to the other outer choice, every tabulated shape is evaluated
    both ways and any disagreement raises :class:`InvariantViolation`.
    """
    if d > MAX_D or tau > MAX_TAU:
        raise GuardError(f"coefficient recursion limited to d ≤ {MAX_D}, tau ≤ {MAX_TAU}")
    table = {}
    for U in middle_shapes(d, tau):
        val = gamma(outer_choice(U, d, choice), c, d)
        if check is not None and check != choice:
            other = gamma(outer_choice(U, d, check), c, d)
            if other != val:
                raise InvariantViolation(f"c' of {U.shape_id} depends on the outer pieces: {val} vs {other}")
        table[U] = val
    return CoefficientFn(table, name=c.name + "'", max_vertices=tau,
                         fallback=lambda U: gamma(outer_choice(U, d, choice), c, d))


def coefficient_sequence(d: int, tau: int, steps: int | None = None) -> list[CoefficientFn]:
    """``c_0, c_1, ..., c_steps`` (default ``2d`` steps) on middle shapes with ``≤ tau`` vertices."""
    steps = 2 * d if steps is None else steps
    seq = [c0()]
    for i in range(steps):
        nxt = cprime_recursion(seq[-1], d, tau)
        nxt.name = f"c{i + 1}"
        seq.append(nxt)
    return seq


# -- the recursion step on labeled ribbons ----------------------------------

@dataclass
class _Terms:
    """Labeled copies of weighted local triples: one row per (triple, injection into ``[n]``)."""

    rows: np.ndarray
    cols: np.ndarray
    edges: np.ndarray  # global pair masks, uint64
    owner: np.ndarray  # index of the local triple
    base: np.ndarray  # power of q carried by each local triple


def _label_terms(cat: RibbonCatalog, triples: Sequence[LocalTriple]) -> _Terms:
    n = cat.n
    pos = np.full(1 << n, -1, dtype=np.int64)
    for m, i in cat.pos.items():
        pos[m] = i
    by_k = defaultdict(list)
    for idx, tr in enumerate(triples):
        by_k[tr.k].append(idx)
    rows, cols, edges, owner = [], [], [], []
    for k, idxs in sorted(by_k.items()):
        inj = np.array(list(itertools.permutations(range(n), k)), dtype=np.int64).reshape(-1, k)
        vbit = np.left_shift(np.int64(1), inj)
        gbit = {}
        for u, v, b in _local_pairs_bits(k):
            a, c = np.minimum(inj[:, u], inj[:, v]), np.maximum(inj[:, u], inj[:, v])
            gbit[b] = np.array([1 << cat.pair_bit[(int(x), int(y))] for x, y in zip(a, c)], dtype=np.uint64)
        for idx in idxs:
            tr = triples[idx]
            X = tr.W_l ^ tr.W_m ^ tr.W_r
            I = vbit[:, [v for v in range(k) if tr.I >> v & 1]].sum(axis=1)
            J = vbit[:, [v for v in range(k) if tr.J >> v & 1]].sum(axis=1)
            E = np.zeros(len(inj), dtype=np.uint64)
            for u, v, b in _local_pairs_bits(k):
                if X >> b & 1:
                    E |= gbit[b]
            rows.append(pos[I])
            cols.append(pos[J])
            edges.append(E)
            owner.append(np.full(len(inj), idx, dtype=np.int64))
    cat_ = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
    return _Terms(cat_(rows, np.int64), cat_(cols, np.int64), cat_(edges, np.uint64), cat_(owner, np.int64),
                  np.array([tr.vertex_total for tr in triples], dtype=np.int64))


class RecursionStep:
    """One step ``c -> c'`` of the coefficient recursion, checked on labeled ribbons.

    Builds, on ``[n]``:

    * ``E_c``: triples (conditions 1, 3*, 2, not 4, pieces ``≤ tau``) weighted by ``c``;
    * ``E'_c``: the same triples regrouped by separating factorization, pieces of
      the factorization ``≤ tau`` and original pieces unbounded;
    * ``Q_{c'}``, ``E_{c'}`` from ``c'`` and ``ξ_c = E'_c - E_c``.

    ``E'_c`` is assembled from preimage enumeration of every disjoint triple
    type, independently of ``c'``.
    """

    def __init__(self, c: CoefficientFn, n: int, d: int, tau: int, cprime: CoefficientFn | None = None,
                 catalog: RibbonCatalog | None = None):
        self.c, self.n, self.d, self.tau = c, n, d, tau
        self.catalog = catalog or RibbonCatalog(n, d, tau)
        self.cprime = cprime or cprime_recursion(c, d, tau)
        self.types = list(primed_types(n, d, tau))
        self.gammas = [gamma(p.triple, c, d) for p in self.types]
        self.mismatches = [p.middle.shape_id for p, g in zip(self.types, self.gammas)
                           if g != self.cprime.of_shape(p.middle)]
        live = [i for i, g in enumerate(self.gammas) if g]
        self._live = live
        self._terms = _label_terms(self.catalog, [self.types[i].triple for i in live])
        self._scale = math.lcm(*(self.types[i].denom for i in live)) if live else 1

    def e_prime(self, G: Graph) -> IndexedMatrix:
        cat, T = self.catalog, self._terms
        chi = cat.characters(G, T.edges)
        D = max((len(self.gammas[i]) for i in self._live), default=1)
        coef = np.zeros((len(self._live), D), dtype=np.int64)
        for j, i in enumerate(self._live):
            p = self.types[i]
            g = self.gammas[i]
            coef[j, :len(g)] = np.array(g, dtype=np.int64) * (p.weight * (self._scale // p.denom))
        deg_max = int(T.base.max(initial=0)) + D
        out = np.zeros((2 * deg_max + 1) * cat.dim * cat.dim, dtype=np.int64)
        for k in range(D):
            w = coef[T.owner, k]
            sel = w != 0
            if not np.any(sel):
                continue
            h = 2 * (T.base[T.owner[sel]] + k)
            np.add.at(out, (h * cat.dim + T.rows[sel]) * cat.dim + T.cols[sel], w[sel] * chi[sel])
        out = out.reshape(2 * deg_max + 1, cat.dim, cat.dim)
        if np.any(out % self._scale):
            raise InvariantViolation("labeled multiplicities do not divide out")
        return IndexedMatrix(cat.index, cat.index, out // self._scale)

    def matrices(self, G: Graph) -> dict[str, IndexedMatrix]:
        cat = self.catalog
        _, E_c = cat.triple_sums(G, self.c)
        _, E_cp = cat.triple_sums(G, self.cprime)
        Ep = self.e_prime(G)
        return {"L": cat.build_L(G), "Q": cat.build_Q(G, self.cprime), "E": E_c, "E_next": E_cp,
                "E_prime": Ep, "xi": Ep - E_c}

    def residual(self, G: Graph) -> IndexedMatrix:
        """``L Q_{c'} Lᵀ - E_{c'} - ξ_c - E_c``; zero when the step identity holds."""
        m = self.matrices(G)
        return m["L"] @ m["Q"] @ m["L"].T - m["E_next"] - m["xi"] - m["E"]


# -- entry points on PEParams -----------------------------------------------

def _guard(p: PEParams) -> None:
    if p.n > MAX_N or p.d > MAX_D or p.tau > MAX_TAU:
        raise GuardError(f"brute-force ribbon sums limited to n ≤ {MAX_N}, d ≤ {MAX_D}, tau ≤ {MAX_TAU}")


@lru_cache(maxsize=4)
def ribbon_catalog(n: int, d: int, tau: int) -> RibbonCatalog:
    return RibbonCatalog(n, d, tau)


def _catalog(p: PEParams) -> RibbonCatalog:
    _guard(p)
    return ribbon_catalog(p.n, p.d, p.tau)


def build_M(G: Graph, p: PEParams) -> IndexedMatrix:
    """Moment matrix as a ribbon sum over proper ribbons with ``≤ tau`` vertices."""
    return _catalog(p).moment_matrix(G)


def build_L(G: Graph, p: PEParams) -> IndexedMatrix:
    return _catalog(p).build_L(G)


def build_Q0(G: Graph, p: PEParams) -> IndexedMatrix:
    return _catalog(p).build_Q(G)


def _truncate(A: IndexedMatrix, max_h: int) -> tuple[IndexedMatrix, IndexedMatrix]:
    lo, hi = A.coeffs.copy(), A.coeffs.copy()
    lo[max_h + 1:] = 0
    hi[:max_h + 1] = 0
    return IndexedMatrix(A.rows, A.cols, lo), IndexedMatrix(A.rows, A.cols, hi)


def build_E0_and_xi0(G: Graph, p: PEParams) -> tuple[IndexedMatrix, IndexedMatrix]:
    """``E0``: overlapping triples with pieces ``≤ tau``. ``ξ0``: disjoint triples whose union exceeds ``tau``."""
    disjoint, overlapping = _catalog(p).triple_sums(G)
    _, xi0 = _truncate(disjoint, 2 * p.tau)
    return overlapping, xi0


def _residual_text(R: IndexedMatrix, q) -> str:
    if R.is_zero():
        return "0"
    try:
        v = R.max_abs(q)
        return f"{v.numerator}/{v.denominator}" if v.denominator != 1 else str(v.numerator)
    except ValueError:
        return repr(float(np.abs(R.evaluate(q, mode="float")).max()))


def factor_identity_residual(G: Graph, p: PEParams) -> IndexedMatrix:
    """``L Q0 Lᵀ - ξ0 - E0 - M``, coefficient by coefficient in ``h``."""
    L = build_L(G, p)
    E0, xi0 = build_E0_and_xi0(G, p)
    return L @ build_Q0(G, p) @ L.T - xi0 - E0 - build_M(G, p)


def verify_factor_identity(graphs: Sequence[Graph], p: PEParams, cross_check: bool = True) -> dict:
    """Check ``M = L Q0 Lᵀ - ξ0 - E0`` exactly on every graph.

    With ``cross_check``, the ribbon-sum ``M`` is also compared with the moment
    matrix built from the closed-form pseudoexpectation in exact arithmetic.
    """
    start = time.perf_counter()
    worst, worst_val, mismatched = "0", Fraction(0), 0
    for G in graphs:
        R = factor_identity_residual(G, p)
        if not R.is_zero():
            text = _residual_text(R, p.q)
            val = Fraction(text) if "/" in text or text.isdigit() else Fraction(float(text))
            if val >= worst_val:
                worst, worst_val = text, val
        if cross_check:
            exact = build_moment_matrix(G, p, mode="exact").entries
            if not np.array_equal(build_M(G, p).evaluate(p.q), exact):
                mismatched += 1
    report = {
        "identity": "M = L Q0 L^T - xi0 - E0",
        "scale": {"n": p.n, "d": p.d, "tau": p.tau, "omega": str(p.omega)},
        "graphs_tested": len(graphs),
        "max_abs_residual": worst,
        "elapsed": round(time.perf_counter() - start, 3),
    }
    if cross_check:
        report["moment_matrix_mismatches"] = mismatched
    return report


def verify_recursion_step(c: CoefficientFn, G: Graph, p: PEParams, step: RecursionStep | None = None) -> bool:
    """``E_c = L Q_{c'} Lᵀ - E_{c'} - ξ_c`` exactly on ``G``; also requires ``γ = c'`` on every triple type."""
    _guard(p)
    step = step or RecursionStep(c, p.n, p.d, p.tau, catalog=_catalog(p))
    return not step.mismatches and step.residual(G).is_zero()


def recursion_step_report(step: RecursionStep, graphs: Sequence[Graph], p: PEParams) -> dict:
    start = time.perf_counter()
    worst = "0"
    for G in graphs:
        R = step.residual(G)
        if not R.is_zero():
            worst = _residual_text(R, p.q)
    return {
        "identity": f"E_{step.c.name} = L Q_{step.cprime.name} L^T - E_{step.cprime.name} - xi_{step.c.name}",
        "scale": {"n": step.n, "d": step.d, "tau": step.tau, "omega": str(p.omega)},
        "graphs_tested": len(graphs),
        "triple_types": len(step.types),
        "gamma_mismatches": len(step.mismatches),
        "max_abs_residual": worst,
        "elapsed": round(time.perf_counter() - start, 3),
    }


def termination_check(d: int, tau: int, graphs: Sequence[Graph] = (), n: int | None = None,
                      seq: Sequence[CoefficientFn] | None = None) -> dict:
    """Run the recursion past ``2d`` steps and check that the leftover term vanishes.

    Reports the support of every ``c_i`` by end sizes, whether ``E_{c_{2d}}``
    is zero on each graph, and whether ``c_{2d+1}`` is identically zero.
    """
    seq = list(seq) if seq is not None else coefficient_sequence(d, tau, 2 * d + 1)
    if len(seq) < 2 * d + 2:
        raise ValueError(f"need c_0 .. c_{2 * d + 1}")
    support = {}
    for i, c in enumerate(seq[1:], 1):
        sizes = Counter(f"{len(U.A)},{len(U.B)}" for U in c.table)
        support[f"c{i}"] = dict(sorted(sizes.items()))
    last_zero = []
    if graphs:
        cat = ribbon_catalog(n, d, tau)
        for G in graphs:
            last_zero.append(cat.triple_sums(G, seq[2 * d])[1].is_zero())
    return {
        "support": support,
        "final_step_zero": [bool(z) for z in last_zero],
        "next_coefficient_zero": not seq[2 * d + 1].table,
        "min_end_sum": {f"c{i}": min((len(U.A) + len(U.B) for U in c.table), default=None)
                        for i, c in enumerate(seq[1:], 1)},
    }


def coefficient_bound_check(c: CoefficientFn, i: int) -> dict:
    """Compare ``c_i`` with ``(ω/n)^s n^{(p - |Z| - i/2)/2 + εs}`` for ``ω = n^{1/2 - ε}``.

    With ``ω/n = n^{-1/2-ε}`` the bound equals ``n^{(p - |Z| - s - i/2)/2}``.
    A tabulated value ``Σ a_k (ω/n)^k`` is dominated by its lowest power
    ``r0``; the bound holds as ``n → ∞`` for every fixed small ``ε > 0`` when
    ``r0 > s + |Z| - p + i/2``, or at equality when ``r0 > 0`` or ``a_0 ≤ 1``.
    """
    out = {"shapes": 0, "strict": 0, "tight": 0, "violations": [], "negative_coefficients": 0}
    for U, poly in c.table.items():
        R = shape_ribbon(U)
        two_s = len(U.A) + len(U.B)
        paths, z = path_count(R), len(R.Z)
        r0 = next(k for k, a in enumerate(poly) if a)
        lhs, rhs = -2 * r0, 2 * paths - 2 * z - two_s - i  # both exponents times 4, ε terms dropped
        out["shapes"] += 1
        out["negative_coefficients"] += any(a < 0 for a in poly)
        if lhs < rhs:
            out["strict"] += 1
        elif lhs == rhs and (r0 > 0 or poly[0] <= 1):
            out["tight"] += 1
        else:
            out["violations"].append(U.shape_id)
    return out


# -- spectral quantities at moderate n --------------------------------------

@lru_cache(maxsize=None)
def outer_shapes(d: int, tau: int) -> tuple[Shape, ...]:
    """Canonical shapes of left-condition pieces ``(I, S)`` with ``≤ tau`` vertices."""
    seen = set()
    for k in range(tau + 1):
        for I, S, W in _outer_reps(k, d):
            seen.add(_canonical_cached(k, W, I, S))
    return tuple(sorted(seen, key=lambda U: (U.t, U.shape_id)))


def _blocks(n: int, d: int) -> list[int]:
    return [0] + list(itertools.accumulate(math.comb(n, k) for k in range(d + 1)))


def _graphical_sum(G: Graph, d: int, terms: Iterable[tuple[Shape, float]]) -> np.ndarray:
    from .shapes import assemble_graphical

    off = _blocks(G.n, d)
    out = np.zeros((off[-1], off[-1]))
    for U, w in terms:
        if w == 0:
            continue
        a, b = len(U.A), len(U.B)
        out[off[a]:off[a + 1], off[b]:off[b + 1]] += w * assemble_graphical(U, G)
    return out


def dense_L(G: Graph, p: PEParams) -> np.ndarray:
    q = float(p.q)
    return _graphical_sum(G, p.d, ((U, q ** (U.t - len(U.B) / 2)) for U in outer_shapes(p.d, p.tau)))


def dense_Q(G: Graph, p: PEParams, c: CoefficientFn | None = None) -> np.ndarray:
    """``Q_c`` in float mode via graphical matrices; ``c`` defaults to c0."""
    q = float(p.q)
    shapes = middle_shapes(p.d, p.tau)

    def weight(U):
        val = (1,) if c is None and _c3_rule(shape_ribbon(U)) else (() if c is None else c.of_shape(U))
        return sum(a * q ** k for k, a in enumerate(val)) * q ** (U.t - (len(U.A) + len(U.B)) / 2)

    return _graphical_sum(G, p.d, ((U, weight(U)) for U in shapes))


def d_matrix(G: Graph, d: int) -> np.ndarray:
    """Diagonal ``D(S, S) = 2^{C(|S|, 2)} / 4`` on cliques, 0 elsewhere."""
    return np.diag([2.0 ** math.comb(len(S), 2) / 4 if G.is_clique(S) else 0.0 for S in index_sets(G.n, d)])


def spectral_report(G: Graph, p: PEParams, coefficients: Sequence[CoefficientFn] = ()) -> dict:
    """Spectral quantities behind the PSD argument, restricted to the span of clique indices.

    Reports the minimum eigenvalue of ``Q0 - D``, the largest ratio
    ``|v^T Q_i v| / v^T D v`` for each supplied ``c_i`` (compared with
    ``1/8d``), and the minimum eigenvalue of ``Π L Π Lᵀ Π`` against
    ``(ω/n)^{d+1}``. Violations are flagged, not raised.
    """
    if p.n > 60 or p.d != 2:
        raise GuardError("spectral report runs at n ≤ 60 with d = 2")
    start = time.perf_counter()
    index = index_sets(G.n, p.d)
    clique = np.array([G.is_clique(S) for S in index])
    D = d_matrix(G, p.d)[np.ix_(clique, clique)]
    Q0 = dense_Q(G, p)[np.ix_(clique, clique)]
    min_q0 = float(np.linalg.eigvalsh((Q0 - D + (Q0 - D).T) / 2).min())
    dinv = 1 / np.sqrt(np.diag(D))
    ratios = {}
    for c in coefficients:
        Qi = dense_Q(G, p, c)[np.ix_(clique, clique)]
        S = dinv[:, None] * Qi * dinv[None, :]
        ratios[c.name] = float(np.abs(np.linalg.eigvalsh((S + S.T) / 2)).max())
    L = dense_L(G, p)[np.ix_(clique, clique)]
    min_l = float(np.linalg.eigvalsh(L @ L.T).min())
    scale = float(p.q) ** (p.d + 1)
    bound = 1 / (8 * p.d)
    return {
        "n": p.n, "d": p.d, "tau": p.tau, "omega": float(p.omega),
        "clique_indices": int(clique.sum()),
        "min_eig_Q0_minus_D": min_q0,
        "Q0_dominates_D": min_q0 >= 0,
        "Qi_ratio": ratios,
        "Qi_within_D_over_8d": {k: v <= bound for k, v in ratios.items()},
        "min_eig_LL": min_l,
        "min_eig_LL_over_scale": min_l / scale,
        "elapsed": round(time.perf_counter() - start, 3),
    }
