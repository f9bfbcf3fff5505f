"""Shapes, graphical matrices and spectral-norm measurement.

A shape is a small graph on ``0..t-1`` with distinguished vertex sets ``A``
and ``B``. Its graphical matrix at ``(I, J)`` sums the characters of all
distinct labeled ribbons isomorphic to the shape with ``A -> I`` and
``B -> J``. Dense assembly uses Möbius inversion over set partitions of the
shape's vertices, so each partition contributes a single ``einsum``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations, permutations
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, GuardError
from .graphcore import Graph, make_rng, pair, sample_null, derive_seed, split_flow
from .ribbons import Ribbon

MAX_SHAPE_VERTICES = 6
MAX_DENSE_CELLS = 40_000_000
MAX_TENSOR_CELLS = 20_000_000


@dataclass(frozen=True)
class Shape:
    t: int
    edges: frozenset
    A: frozenset
    B: frozenset

    def __post_init__(self):
        object.__setattr__(self, "edges", frozenset(pair(u, v) for u, v in self.edges))
        object.__setattr__(self, "A", frozenset(self.A))
        object.__setattr__(self, "B", frozenset(self.B))
        verts = set(range(self.t))
        if not (self.A <= verts and self.B <= verts):
            raise ValueError("A and B must lie in 0..t-1")
        if any(v not in verts for e in self.edges for v in e):
            raise ValueError("edge endpoint outside 0..t-1")

    @property
    def r(self) -> int:
        return len(self.A & self.B)

    @cached_property
    def p(self) -> int:
        """Vertex-disjoint paths from ``A \\ B`` to ``B \\ A``."""
        adj = {v: set() for v in range(self.t)}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return split_flow(adj, self.A - self.B, self.B - self.A)[0]

    def min_outside_degree(self) -> int | None:
        outside = [v for v in range(self.t) if v not in self.A | self.B]
        if not outside:
            return None
        return min(sum(1 for e in self.edges if v in e) for v in outside)

    def predicted_exponent(self) -> float:
        return (self.t - self.p - self.r) / 2

    @cached_property
    def automorphisms(self) -> int:
        """Number of vertex permutations fixing ``A``, ``B`` and the edge set."""
        count = 0
        for perm in permutations(range(self.t)):
            if frozenset(perm[v] for v in self.A) != self.A or frozenset(perm[v] for v in self.B) != self.B:
                continue
            if frozenset(pair(perm[u], perm[v]) for u, v in self.edges) == self.edges:
                count += 1
        return count

    def canonical(self) -> "Shape":
        """Isomorphism-invariant representative (lexicographically least relabeling)."""
        best = None
        for perm in permutations(range(self.t)):
            key = (tuple(sorted(perm[v] for v in self.A)), tuple(sorted(perm[v] for v in self.B)),
                   tuple(sorted(pair(perm[u], perm[v]) for u, v in self.edges)))
            if best is None or key < best:
                best = key
        return Shape(self.t, best[2], best[0], best[1])

    def to_record(self) -> dict:
        return {"t": self.t, "A": sorted(self.A), "B": sorted(self.B), "edges": sorted(self.edges)}

    @classmethod
    def from_record(cls, rec: dict) -> "Shape":
        return cls(rec["t"], [tuple(e) for e in rec["edges"]], rec["A"], rec["B"])

    @property
    def shape_id(self) -> str:
        A = "".join(map(str, sorted(self.A)))
        B = "".join(map(str, sorted(self.B)))
        E = ",".join(f"{u}{v}" for u, v in sorted(self.edges))
        return f"t{self.t}|A{A}|B{B}|E{E}"


def shape_of(R: Ribbon) -> Shape:
    """Relabel ``V(R)`` by rank; isolated vertices in ``Z`` become degree-0 shape vertices."""
    order = {v: k for k, v in enumerate(sorted(R.V))}
    return Shape(len(order), [(order[u], order[v]) for u, v in R.W],
                 [order[v] for v in R.I], [order[v] for v in R.J])


def single_edge() -> Shape:
    return Shape(2, [(0, 1)], [0], [1])


def two_path() -> Shape:
    return Shape(3, [(0, 1), (1, 2)], [0], [2])


def diagonal_edge() -> Shape:
    return Shape(2, [(0, 1)], [0, 1], [0, 1])


# -- dense assembly --------------------------------------------------------

def set_partitions(items: Sequence) -> Iterator[list[list]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]


def _letters(k: int) -> str:
    return "abcdefghijklmnopqrstuvwxyz"[:k]


def injective_tensor(U: Shape, signs: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """``F[x_E] = Σ`` over injective maps of ``U`` into ``[n]`` extending ``x_E`` of the character.

    ``E`` is ``A ∪ B`` in increasing order, returned alongside the tensor.
    Distinctness is imposed by Möbius inversion over set partitions: maps that
    are constant on the blocks of a partition are summed by ``einsum`` with
    coefficient ``Π (-1)^{|b|-1}(|b|-1)!``. Partitions that put an edge inside a
    block vanish because the sign matrix has a zero diagonal.
    """
    n = signs.shape[0]
    ends = sorted(U.A | U.B)
    if n ** max(len(ends), 1) > MAX_TENSOR_CELLS:
        raise GuardError(f"endpoint tensor of size n^{len(ends)} exceeds the guard")
    if U.t == 0:
        return np.array(1.0), ends
    G = signs.astype(np.float64)
    ones = np.ones(n)
    out = np.zeros((n,) * len(ends))
    pos = {v: k for k, v in enumerate(ends)}
    for part in set_partitions(list(range(U.t))):
        block_of = {v: b for b, blk in enumerate(part) for v in blk}
        if any(block_of[u] == block_of[v] for u, v in U.edges):
            continue
        coeff = 1
        for blk in part:
            coeff *= (-1) ** (len(blk) - 1) * math.factorial(len(blk) - 1)
        letters = _letters(len(part))
        operands, subs = [], []
        for u, v in U.edges:
            operands.append(G)
            subs.append(letters[block_of[u]] + letters[block_of[v]])
        for b in range(len(part)):
            operands.append(ones)
            subs.append(letters[b])
        out_blocks = sorted({block_of[v] for v in ends}, key=lambda b: min(pos[v] for v in part[b] if v in pos))
        spec = ",".join(subs) + "->" + "".join(letters[b] for b in out_blocks)
        T = np.einsum(spec, *operands, optimize=True)
        if len(out_blocks) == len(ends):
            out += coeff * T
            continue
        # merged endpoints land on a diagonal of the endpoint tensor
        grids = np.indices((n,) * len(out_blocks))
        idx = tuple(grids[out_blocks.index(block_of[v])] for v in ends)
        np.add.at(out, idx, coeff * T)
    return out, ends


def _sorted_subsets(n: int, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(combinations(range(n), k)), dtype=np.int64)


def assemble_graphical(U: Shape, G: Graph) -> np.ndarray:
    """Dense graphical matrix with rows indexed by ``|A|``-subsets and columns by ``|B|``-subsets (lexicographic)."""
    if U.t > MAX_SHAPE_VERTICES:
        raise GuardError(f"dense assembly supports shapes with at most {MAX_SHAPE_VERTICES} vertices")
    n = G.n
    rows, cols = _sorted_subsets(n, len(U.A)), _sorted_subsets(n, len(U.B))
    if len(rows) * len(cols) > MAX_DENSE_CELLS:
        raise GuardError("graphical matrix exceeds the dense size guard")
    F, ends = injective_tensor(U, G.signs)
    M = np.zeros((len(rows), len(cols)))
    A, B = sorted(U.A), sorted(U.B)
    for pa in permutations(A):
        for pb in permutations(B):
            # vertex pa[k] maps to the k-th element of I, pb[k] to the k-th of J
            where_row = {v: k for k, v in enumerate(pa)}
            where_col = {v: k for k, v in enumerate(pb)}
            valid = np.ones((len(rows), len(cols)), dtype=bool)
            idx = []
            for v in ends:
                if v in where_row:
                    r = rows[:, where_row[v]][:, None]
                    if v in where_col:
                        c = cols[:, where_col[v]][None, :]
                        valid &= r == c
                    idx.append(np.broadcast_to(r, valid.shape))
                else:
                    idx.append(np.broadcast_to(cols[:, where_col[v]][None, :], valid.shape))
            vals = F[tuple(idx)] if ends else np.full(valid.shape, F)
            M += np.where(valid, vals, 0.0)
    return M / U.automorphisms


def graphical_entry_bruteforce(U: Shape, G: Graph, I: Iterable[int], J: Iterable[int]) -> int:
    """Sum of characters over distinct labeled ribbons of shape ``U`` at ``(I, J)``."""
    I, J = frozenset(I), frozenset(J)
    others = [v for v in range(G.n) if v not in I | J]
    inner = [v for v in range(U.t) if v not in U.A | U.B]
    seen = set()
    total = 0
    ends = sorted(U.A | U.B)
    for img in permutations(sorted(I | J), len(ends)):
        sigma = dict(zip(ends, img))
        if frozenset(sigma[v] for v in U.A) != I or frozenset(sigma[v] for v in U.B) != J:
            continue
        for rest in permutations(others, len(inner)):
            sigma.update(zip(inner, rest))
            W = frozenset(pair(sigma[u], sigma[v]) for u, v in U.edges)
            key = (W, frozenset(sigma.values()))
            if key in seen:
                continue
            seen.add(key)
            chi = 1
            for a, b in W:
                chi *= int(G.signs[a, b])
            total += chi
    return total


# -- norms -----------------------------------------------------------------

def spectral_norm(M: np.ndarray, method: str = "eigensolve", ell: int = 4,
                  tol: float = 1e-12, max_iter: int = 20_000, seed: int = 0) -> float:
    """Largest singular value of ``M``.

    ``trace`` returns ``(Tr((MᵀM)^ℓ)/dim)^{1/2ℓ}``, which never exceeds the norm
    and is within a factor ``dim^{1/2ℓ}`` of it.
    """
    M = np.asarray(M, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.size == 0:
        return 0.0
    if method == "eigensolve":
        return float(np.linalg.norm(M, 2))
    if method == "power":
        rng = make_rng(seed)
        v = rng.standard_normal(M.shape[1])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = M.T @ (M @ v)
            nw = np.linalg.norm(w)
            if nw == 0:
                return 0.0
            new = float(v @ w)
            v = w / nw
            if abs(new - lam) <= tol * max(new, 1e-300):
                lam = new
                break
            lam = new
        return math.sqrt(lam)
    if method == "trace":
        if ell < 1:
            raise ValueError("trace power must be at least 1")
        P = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
        scale = np.linalg.norm(P, 2) or 1.0
        Pk = np.linalg.matrix_power(P / scale, ell)
        return float((np.trace(Pk) / P.shape[0]) ** (1 / (2 * ell)) * math.sqrt(scale))
    raise ValueError("method must be eigensolve, power or trace")


def norm_scaling_experiment(U: Shape, n_grid: Sequence[int], seeds: int, master_seed: int = 0,
                            method: str = "eigensolve") -> dict:
    """Median norm of the graphical matrix of ``U`` over ``seeds`` graphs per ``n``, with a log-log fit."""
    n_grid = sorted(set(int(n) for n in n_grid))
    if len(n_grid) < 4 or n_grid[0] < max(U.t, 2):
        raise ConfigError("need at least 4 distinct grid values, each at least the shape size")
    if seeds < 1:
        raise ConfigError("need at least one seed per grid point")
    records, medians = [], []
    for n in n_grid:
        norms = []
        for s in range(seeds):
            seed = derive_seed(master_seed, n * 100_003 + s)
            G = sample_null(n, seed)
            val = spectral_norm(assemble_graphical(U, G), method)
            norms.append(val)
            records.append({"shape_id": U.shape_id, "n": n, "seed": seed, "norm": val})
        medians.append(float(np.median(norms)))
    slope, intercept = np.polyfit(np.log(n_grid), np.log(medians), 1)
    return {"slope": float(slope), "intercept": float(intercept), "predicted": U.predicted_exponent(),
            "medians": dict(zip(n_grid, medians)), "records": records}
