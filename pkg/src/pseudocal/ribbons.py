"""Ribbons, minimum vertex separators and the factorizations built from them.

An ``(I, J)``-ribbon is an edge set ``W`` with two distinguished vertex sets,
its left end ``I`` and right end ``J``. Its vertex set is ``V(W) ∪ I ∪ J``
plus, for improper ribbons, a set ``Z`` of tracked isolated vertices.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Iterable

import numpy as np

from .errors import InvariantViolation
from .graphcore import Graph, Pair, pair, reachable_avoiding, separates, split_flow, support


def _fs(x) -> frozenset:
    return x if isinstance(x, frozenset) else frozenset(x)


@dataclass(frozen=True)
class Ribbon:
    I: frozenset
    J: frozenset
    W: frozenset = frozenset()
    Z: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "I", _fs(self.I))
        object.__setattr__(self, "J", _fs(self.J))
        object.__setattr__(self, "W", frozenset(pair(u, v) for u, v in self.W))
        object.__setattr__(self, "Z", _fs(self.Z))
        if self.Z & (support(self.W) | self.I | self.J):
            raise ValueError("Z must be disjoint from the edges and the ends")

    @property
    def V(self) -> frozenset:
        return support(self.W) | self.I | self.J | self.Z

    @property
    def is_proper(self) -> bool:
        return not self.Z

    def adjacency(self) -> dict:
        adj = {v: set() for v in self.V}
        for u, v in self.W:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def degree(self, v) -> int:
        return sum(1 for e in self.W if v in e)

    def chi(self, G: Graph) -> int:
        out = 1
        for u, v in self.W:
            out *= int(G.signs[u, v])
        return out

    def relabel(self, mapping) -> "Ribbon":
        m = mapping.__getitem__ if hasattr(mapping, "__getitem__") else mapping
        return Ribbon(frozenset(m(v) for v in self.I), frozenset(m(v) for v in self.J),
                      frozenset(pair(m(u), m(v)) for u, v in self.W), frozenset(m(v) for v in self.Z))

    def to_record(self) -> dict:
        return {"I": sorted(self.I), "J": sorted(self.J), "V": sorted(self.V),
                "Z": sorted(self.Z), "W": sorted(self.W)}

    @classmethod
    def from_record(cls, rec: dict) -> "Ribbon":
        r = cls(rec["I"], rec["J"], [tuple(e) for e in rec["W"]], rec.get("Z", ()))
        if "V" in rec and frozenset(rec["V"]) != r.V:
            raise ValueError("vertex set does not match edges, ends and Z")
        return r


# -- separators ------------------------------------------------------------

@lru_cache(maxsize=1 << 20)
def _separator(W: frozenset, I: frozenset, J: frozenset) -> tuple[int, frozenset]:
    adj: dict = {}
    for u, v in W:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    size, sep, _ = split_flow(adj, I, J)
    return size, sep


def separator_size(R: Ribbon) -> int:
    """Maximum number of vertex-disjoint paths between the two ends."""
    return _separator(R.W, R.I, R.J)[0]


def leftmost_separator(R: Ribbon) -> frozenset:
    """Minimum separator of ``I`` and ``J`` that separates ``I`` from every other one."""
    return _separator(R.W, R.I, R.J)[1]


def rightmost_separator(R: Ribbon) -> frozenset:
    return _separator(R.W, R.J, R.I)[1]


def min_separators_bruteforce(R: Ribbon) -> list[frozenset]:
    """Every minimum vertex separator, by scanning subsets in order of size."""
    adj = R.adjacency()
    verts = sorted(R.V)
    for k in range(len(verts) + 1):
        found = [frozenset(Q) for Q in combinations(verts, k) if separates(adj, Q, R.I, R.J)]
        if found:
            return found
    return []


def precedes(R: Ribbon, Q1: Iterable, Q2: Iterable) -> bool:
    """Partial order on separators: ``Q1`` separates ``I`` from ``Q2``."""
    return separates(R.adjacency(), Q1, R.I, Q2)


# -- factor triples --------------------------------------------------------

@dataclass(frozen=True)
class FactorTriple:
    left: Ribbon
    middle: Ribbon
    right: Ribbon
    S_l: frozenset
    S_r: frozenset

    def __post_init__(self):
        object.__setattr__(self, "S_l", _fs(self.S_l))
        object.__setattr__(self, "S_r", _fs(self.S_r))

    @property
    def I(self) -> frozenset:
        return self.left.I

    @property
    def J(self) -> frozenset:
        return self.right.J

    def pieces(self) -> tuple[Ribbon, Ribbon, Ribbon]:
        return self.left, self.middle, self.right

    def chi(self, G: Graph) -> int:
        return self.left.chi(G) * self.middle.chi(G) * self.right.chi(G)

    def vertex_total(self) -> int:
        """``|V_l| + |V_m| + |V_r| - |S_l| - |S_r|``."""
        return len(self.left.V) + len(self.middle.V) + len(self.right.V) - len(self.S_l) - len(self.S_r)


@dataclass(frozen=True)
class ConditionReport:
    c1: bool
    c2: bool
    c3: bool
    c3star: bool
    c4: bool

    def as_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "c3": self.c3, "c3star": self.c3star, "c4": self.c4}


def _outer_condition(R: Ribbon, end: frozenset, S: frozenset) -> bool:
    """Condition for an outer piece: ``R`` runs from ``end`` to ``S``, which is its only minimum separator."""
    if R.Z:
        return False
    if leftmost_separator(R) != S or rightmost_separator(R) != S:
        return False
    if any(u in S and v in S for u, v in R.W):
        return False
    reach = reachable_avoiding(R.adjacency(), end, S)
    return R.V <= (reach | end | S)


def left_condition(R: Ribbon, S_l: Iterable) -> bool:
    S_l = _fs(S_l)
    return R.J == S_l and _outer_condition(R, R.I, S_l)


def right_condition(R: Ribbon, S_r: Iterable) -> bool:
    S_r = _fs(S_r)
    if R.I != S_r:
        return False
    flipped = Ribbon(R.J, R.I, R.W, R.Z)
    return _outer_condition(flipped, R.J, S_r)


def middle_condition(R: Ribbon, S_l: Iterable, S_r: Iterable) -> bool:
    S_l, S_r = _fs(S_l), _fs(S_r)
    if R.I != S_l or R.J != S_r or R.Z:
        return False
    return leftmost_separator(R) == S_l and rightmost_separator(R) == S_r


def disjoint_condition(t: FactorTriple) -> bool:
    L, M, Rt = t.pieces()
    if (L.W & M.W) or (M.W & Rt.W) or (L.W & Rt.W):
        return False
    return (L.V & M.V) == t.S_l and (M.V & Rt.V) == t.S_r and (L.V & Rt.V) == (t.S_l & t.S_r)


def check_conditions(t: FactorTriple) -> ConditionReport:
    """Evaluate factorization conditions 1, 2, 3, 3* and 4 for ``t``."""
    c3star = t.middle.I == t.S_l and t.middle.J == t.S_r
    return ConditionReport(
        c1=left_condition(t.left, t.S_l),
        c2=right_condition(t.right, t.S_r),
        c3=middle_condition(t.middle, t.S_l, t.S_r),
        c3star=c3star,
        c4=disjoint_condition(t),
    )


def recompose(t: FactorTriple) -> Ribbon:
    """The ``(I, J)``-ribbon with edge set ``W_l ⊕ W_m ⊕ W_r`` on the union of the vertex sets.

    Vertices that end up isolated outside the ends are kept in ``Z``.
    """
    W = t.left.W ^ t.middle.W ^ t.right.W
    V = t.left.V | t.middle.V | t.right.V
    I, J = t.I, t.J
    return Ribbon(I, J, W, V - support(W) - I - J)


def _split(R_edges: frozenset, V: frozenset, I: frozenset, J: frozenset,
           S_l: frozenset, S_r: frozenset) -> tuple[Ribbon, Ribbon, Ribbon]:
    adj = {v: set() for v in V}
    for u, v in R_edges:
        adj[u].add(v)
        adj[v].add(u)
    V_l = reachable_avoiding(adj, I, S_l)
    V_r = reachable_avoiding(adj, J, S_r)
    if V_l & V_r:
        raise InvariantViolation("left and right reachable sets overlap")
    W_l = frozenset(e for e in R_edges if e[0] in V_l or e[1] in V_l)
    W_r = frozenset(e for e in R_edges if e[0] in V_r or e[1] in V_r)
    if W_l & W_r:
        raise InvariantViolation("an edge joins the left and right reachable sets")
    W_m = R_edges - W_l - W_r
    V_m = (V - V_l - V_r) | S_l | S_r
    Z = V_m - support(W_m) - S_l - S_r
    return Ribbon(I, S_l, W_l), Ribbon(S_l, S_r, W_m, Z), Ribbon(S_r, J, W_r)


def canonical_factorization(R: Ribbon) -> FactorTriple:
    """Split ``R`` at its leftmost and rightmost minimum separators.

    Edges with an endpoint reachable from ``I`` avoiding ``S_L`` go left,
    symmetrically on the right, and everything else, including edges inside
    ``S_L`` or ``S_R``, goes to the middle.
    """
    if not R.is_proper:
        raise ValueError("canonical factorization needs a proper ribbon")
    S_l, S_r = leftmost_separator(R), rightmost_separator(R)
    left, mid, right = _split(R.W, R.V, R.I, R.J, S_l, S_r)
    return FactorTriple(left, mid, right, S_l, S_r)


def repeated_vertices(t: FactorTriple) -> frozenset:
    """Vertices lying in more than one of the three vertex sets."""
    cnt = Counter()
    for piece in t.pieces():
        cnt.update(piece.V)
    return frozenset(v for v, c in cnt.items() if c > 1)


def separating_factorization(t: FactorTriple, check: bool = True) -> FactorTriple:
    """Re-split a non-disjoint triple at separators that also cut off repeated vertices.

    The primed left separator is the leftmost minimum separator between ``I``
    and ``J ∪ U`` in the recomposed graph, where ``U`` is the repeated-vertex
    set; the right one is symmetric. The middle keeps its isolated vertices in ``Z``.
    """
    if check:
        rep = check_conditions(t)
        if not (rep.c1 and rep.c2 and rep.c3star) or rep.c4:
            raise ValueError("separating factorization needs conditions 1, 3*, 2 and a violation of 4")
    U = repeated_vertices(t)
    W = t.left.W ^ t.middle.W ^ t.right.W
    V = t.left.V | t.middle.V | t.right.V
    I, J = t.I, t.J
    S_l = _separator(W, I, J | U)[1]
    S_r = _separator(W, J, I | U)[1]
    left, mid, right = _split(W, V, I, J, S_l, S_r)
    return FactorTriple(left, mid, right, S_l, S_r)


def path_count(R: Ribbon) -> int:
    """Vertex-disjoint paths between the ends of ``R`` (isolated vertices ignored)."""
    return separator_size(R)


def tradeoff_quantities(t: FactorTriple, tp: FactorTriple) -> dict:
    """Quantities compared by the separator/path/isolated-vertex tradeoff inequality."""
    return {
        "sep_increase": len(tp.S_l) + len(tp.S_r) - len(t.S_l) - len(t.S_r),
        "lost_paths": path_count(t.middle) - path_count(tp.middle),
        "new_isolated": len(tp.middle.Z - t.middle.Z),
        "intersections": t.vertex_total() - tp.vertex_total(),
    }


# -- random generators -----------------------------------------------------

def random_ribbon(rng: np.random.Generator, n_vertices: int = 7, density: float = 0.35,
                  max_end: int = 3, overlap: float = 0.3) -> Ribbon:
    """Random proper ribbon on labels ``0..n_vertices-1``.

    End sizes are uniform on ``0..max_end``; each vertex of ``I`` is reused in
    ``J`` with probability ``overlap``; each pair is an edge with probability ``density``.
    """
    labels = list(range(n_vertices))
    I = set(rng.choice(labels, size=int(rng.integers(0, max_end + 1)), replace=False).tolist())
    J = {v for v in I if rng.random() < overlap}
    rest = [v for v in labels if v not in I]
    extra = int(rng.integers(0, max_end + 1 - len(J))) if len(J) < max_end else 0
    J |= set(rng.choice(rest, size=min(extra, len(rest)), replace=False).tolist())
    W = [e for e in combinations(labels, 2) if rng.random() < density]
    return Ribbon(I, J, W)


def random_improper_middle(rng: np.random.Generator, S_l: frozenset, S_r: frozenset, labels: list,
                           density: float = 0.35, z_prob: float = 0.2) -> Ribbon:
    """Random improper ``(S_l, S_r)``-ribbon on a random subset of ``labels``."""
    base = set(S_l) | set(S_r)
    others = [v for v in labels if v not in base]
    chosen = [v for v in others if rng.random() < 0.5]
    verts = sorted(base | set(chosen))
    W = frozenset(e for e in combinations(verts, 2) if rng.random() < density)
    Z = frozenset(v for v in chosen if v not in support(W) and rng.random() < z_prob)
    return Ribbon(S_l, S_r, W, Z)


def random_valid_triple(rng: np.random.Generator, n_vertices: int = 7, max_end: int = 2,
                        density: float = 0.35, proper_middle: bool = False,
                        max_tries: int = 10_000) -> FactorTriple:
    """Random triple satisfying conditions 1, 3* and 2 but not 4.

    The outer pieces are the outer pieces of canonical factorizations of random
    ribbons sharing a label pool, so overlaps between the pieces are common.
    With ``proper_middle`` the middle is also required to satisfy condition 3.
    """
    labels = list(range(n_vertices))
    for _ in range(max_tries):
        A = random_ribbon(rng, n_vertices, density, max_end)
        B = random_ribbon(rng, n_vertices, density, max_end)
        left = canonical_factorization(A).left
        right = canonical_factorization(B).right
        S_l, S_r = left.J, right.I
        if proper_middle:
            C = random_ribbon(rng, n_vertices, density, max_end)
            C = Ribbon(S_l, S_r, C.W)
            if not middle_condition(C, S_l, S_r):
                continue
            mid = C
        else:
            mid = random_improper_middle(rng, S_l, S_r, labels, density)
        t = FactorTriple(left, mid, right, S_l, S_r)
        rep = check_conditions(t)
        if rep.c1 and rep.c2 and rep.c3star and not rep.c4:
            return t
    raise RuntimeError("no valid triple found")
