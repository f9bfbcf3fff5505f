"""Graphs in the +1/-1 encoding, random samplers, characters, cliques and separators.

Vertices are the integers ``0..n-1``. A graph stores one sign per unordered
pair: ``+1`` when the edge is present and ``-1`` when it is absent.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Hashable, Iterable, Iterator

import numpy as np

from .errors import ConfigError

Pair = tuple[int, int]
SeedLike = int | np.random.Generator | None


def pair(u: int, v: int) -> Pair:
    """Normalise an unordered pair to ``(min, max)``."""
    if u == v:
        raise ValueError(f"self-loop at {u}")
    return (u, v) if u < v else (v, u)


def support(pairs: Iterable[Pair]) -> frozenset:
    """Vertices incident to at least one pair."""
    out = set()
    for u, v in pairs:
        out.add(u)
        out.add(v)
    return frozenset(out)


# -- seeding ---------------------------------------------------------------

def derive_seed(master: int, index: int) -> int:
    """64-bit per-trial seed obtained by hashing ``(master, index)``."""
    words = np.random.SeedSequence([int(master) & (2**64 - 1), int(index)]).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Counter-based generator (Philox) for an integer seed; generators pass through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


# -- graphs ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Graph:
    """Symmetric +1/-1 pair assignment on ``n`` vertices, zero on the diagonal."""

    signs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.signs, dtype=np.int8)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("signs must be a square matrix")
        if np.any(np.diag(s) != 0) or not np.array_equal(s, s.T):
            raise ValueError("signs must be symmetric with zero diagonal")
        off = s[~np.eye(len(s), dtype=bool)]
        if np.any((off != 1) & (off != -1)):
            raise ValueError("off-diagonal signs must be +1 or -1")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "signs", s)

    @property
    def n(self) -> int:
        return self.signs.shape[0]

    def sign(self, u: int, v: int) -> int:
        return int(self.signs[u, v])

    def adjacency(self) -> np.ndarray:
        """0/1 adjacency view."""
        return (self.signs > 0).astype(np.int8)

    @classmethod
    def from_adjacency(cls, adj) -> "Graph":
        a = np.asarray(adj, dtype=np.int8)
        s = (2 * a - 1).astype(np.int8)
        np.fill_diagonal(s, 0)
        return cls(s)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Pair]) -> "Graph":
        a = np.zeros((n, n), dtype=np.int8)
        for u, v in edges:
            a[u, v] = a[v, u] = 1
        return cls.from_adjacency(a)

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls.from_adjacency(np.ones((n, n), dtype=np.int8))

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls.from_adjacency(np.zeros((n, n), dtype=np.int8))

    def edges(self) -> list[Pair]:
        """Pairs with sign +1, sorted."""
        iu, ju = np.nonzero(np.triu(self.signs > 0, 1))
        return [(int(a), int(b)) for a, b in zip(iu, ju)]

    @cached_property
    def neighbor_masks(self) -> tuple[int, ...]:
        """Bitmask of neighbours for each vertex."""
        adj = self.signs > 0
        masks = []
        for i in range(self.n):
            m = 0
            for j in np.nonzero(adj[i])[0]:
                m |= 1 << int(j)
            masks.append(m)
        return tuple(masks)

    def is_clique(self, vertices: Iterable[int]) -> bool:
        vs = sorted(set(vertices))
        sub = self.signs[np.ix_(vs, vs)]
        return bool(np.all(sub + np.eye(len(vs), dtype=np.int8) == 1))

    def to_text(self) -> str:
        lines = [f"n {self.n}"] + [f"{u} {v}" for u, v in self.edges()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Graph":
        rows = [ln.split() for ln in text.strip().splitlines() if ln.strip()]
        if not rows or rows[0][0] != "n":
            raise ValueError("graph record must start with 'n <count>'")
        n = int(rows[0][1])
        return cls.from_edges(n, [(int(a), int(b)) for a, b in rows[1:]])

    def __eq__(self, other):
        return isinstance(other, Graph) and np.array_equal(self.signs, other.signs)

    def __hash__(self):
        return hash(self.signs.tobytes())


@dataclass(frozen=True, eq=False)
class PlantedSample:
    graph: Graph
    membership: np.ndarray

    @property
    def clique(self) -> frozenset:
        return frozenset(int(i) for i in np.nonzero(self.membership)[0])


def _random_signs(n: int, rng: np.random.Generator) -> np.ndarray:
    upper = np.triu(rng.integers(0, 2, size=(n, n), dtype=np.int8), 1)
    s = 2 * (upper + upper.T) - 1
    np.fill_diagonal(s, 0)
    return s.astype(np.int8)


def sample_null(n: int, seed: SeedLike = None) -> Graph:
    """Draw G(n, 1/2): every pair is +1 or -1 with probability 1/2."""
    if n < 1:
        raise ConfigError("n must be at least 1")
    return Graph(_random_signs(n, make_rng(seed)))


def sample_planted(n: int, omega, seed: SeedLike = None) -> PlantedSample:
    """Draw the planted distribution.

    Every vertex joins the hidden set independently with probability ``omega/n``;
    pairs inside the set are forced to +1, all other pairs stay uniform.
    """
    omega = Fraction(omega)
    if n < 1 or not (0 < omega <= n):
        raise ConfigError("need n >= 1 and 0 < omega <= n")
    rng = make_rng(seed)
    s = _random_signs(n, rng)
    x = (rng.random(n) < float(omega / n)).astype(np.int8)
    if omega == n:
        x[:] = 1
    inside = np.nonzero(x)[0]
    s[np.ix_(inside, inside)] = 1
    np.fill_diagonal(s, 0)
    return PlantedSample(Graph(s), x)


def character(G: Graph, T: Iterable[Pair]) -> int:
    """Product of the signs of ``G`` over the pairs of ``T``."""
    out = 1
    for u, v in T:
        out *= int(G.signs[u, v])
    return out


def _bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def enumerate_cliques(G: Graph, base: Iterable[int] = (), max_size: int | None = None) -> Iterator[tuple[int, ...]]:
    """Yield every clique ``K`` of ``G`` with ``base ⊆ K`` and ``|K| ≤ max_size``.

    Cliques come out as sorted tuples, each exactly once. The empty set and
    singletons count as cliques. Nothing is yielded when ``base`` is not a clique.
    """
    base = tuple(sorted(set(base)))
    if max_size is None:
        max_size = G.n
    if len(base) > max_size or (base and not G.is_clique(base)):
        return
    nbr = G.neighbor_masks
    cand = (1 << G.n) - 1
    for b in base:
        cand &= nbr[b] & ~(1 << b)

    def extend(added: tuple[int, ...], cand: int) -> Iterator[tuple[int, ...]]:
        yield tuple(sorted(base + added)) if base else added
        if len(base) + len(added) == max_size:
            return
        for v in _bits(cand):
            higher = cand & ~((1 << (v + 1)) - 1)
            yield from extend(added + (v,), higher & nbr[v])

    yield from extend((), cand)


def clique_counts(G: Graph, max_size: int) -> list[int]:
    """Number of cliques of each size ``0..max_size``."""
    counts = [0] * (max_size + 1)
    for K in enumerate_cliques(G, (), max_size):
        counts[len(K)] += 1
    return counts


# -- separators ------------------------------------------------------------

def _adjacency_of(pairs: Iterable[Pair], extra: Iterable[Hashable] = ()) -> dict:
    adj: dict = {v: set() for v in extra}
    for u, v in pairs:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    return adj


def split_flow(adj: dict, I: Iterable, J: Iterable) -> tuple[int, frozenset, frozenset]:
    """Vertex-split max-flow between ``I`` and ``J``.

    Vertices of ``I ∩ J`` are removed and always belong to the separator.
    Returns ``(size, separator, reach)`` where ``separator`` is the minimum
    separator closest to ``I`` and ``reach`` holds the vertices whose input
    copy is reachable from the source in the final residual network.
    """
    I, J = frozenset(I), frozenset(J)
    forced = I & J
    verts = list(adj)
    for v in I | J:
        if v not in adj:
            verts.append(v)
    idx = {v: k for k, v in enumerate(verts)}
    k = len(verts)
    src, snk = 2 * k, 2 * k + 1
    big = k + 1
    cap: list[dict[int, int]] = [dict() for _ in range(2 * k + 2)]

    def add(a, b, c):
        cap[a][b] = cap[a].get(b, 0) + c
        cap[b].setdefault(a, 0)

    for v in verts:
        if v not in forced:
            add(2 * idx[v], 2 * idx[v] + 1, 1)
    for u, nb in adj.items():
        for v in nb:
            add(2 * idx[u] + 1, 2 * idx[v], big)
    for v in I - forced:
        add(src, 2 * idx[v], big)
    for v in J - forced:
        add(2 * idx[v] + 1, snk, big)

    flow = 0
    while True:
        parent = {src: None}
        queue = deque([src])
        while queue and snk not in parent:
            a = queue.popleft()
            for b, c in cap[a].items():
                if c > 0 and b not in parent:
                    parent[b] = a
                    queue.append(b)
        if snk not in parent:
            break
        b = snk
        while parent[b] is not None:
            a = parent[b]
            cap[a][b] -= 1
            cap[b][a] += 1
            b = a
        flow += 1
    reach_nodes = set(parent)
    cut = {v for v in verts if v not in forced and 2 * idx[v] in reach_nodes and 2 * idx[v] + 1 not in reach_nodes}
    reach = frozenset(v for v in verts if 2 * idx[v] in reach_nodes)
    return flow + len(forced), frozenset(cut | forced), reach


def min_vertex_separator(pairs: Iterable[Pair], I: Iterable, J: Iterable,
                         vertices: Iterable = ()) -> tuple[int, frozenset]:
    """Minimum set of vertices meeting every path from ``I`` to ``J``.

    ``I ∩ J`` always lies in the witness. The size equals the maximum number of
    vertex-disjoint ``I``–``J`` paths. Among minimum separators the one closest
    to ``I`` is returned.
    """
    size, sep, _ = split_flow(_adjacency_of(pairs, vertices), I, J)
    return size, sep


def separates(adj: dict, Q: Iterable, I: Iterable, J: Iterable) -> bool:
    """True when every path from ``I`` to ``J`` (endpoints included) meets ``Q``."""
    Q = set(Q)
    start = [v for v in I if v not in Q]
    seen = set(start)
    targets = set(J)
    queue = deque(start)
    while queue:
        a = queue.popleft()
        if a in targets:
            return False
        for b in adj.get(a, ()):
            if b not in seen and b not in Q:
                seen.add(b)
                queue.append(b)
    return True


def reachable_avoiding(adj: dict, start: Iterable, avoid: Iterable) -> frozenset:
    """Vertices reachable from ``start`` without entering ``avoid``; avoided starts are dropped."""
    avoid = set(avoid)
    seen = {v for v in start if v not in avoid}
    queue = deque(seen)
    while queue:
        a = queue.popleft()
        for b in adj.get(a, ()):
            if b not in seen and b not in avoid:
                seen.add(b)
                queue.append(b)
    return frozenset(seen)

