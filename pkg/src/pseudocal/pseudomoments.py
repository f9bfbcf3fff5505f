"""Pseudo-calibrated and Feige-Krauthgamer pseudoexpectations for planted clique.

The calibrated functional is

    E~[x_S] = sum over edge sets T with |V(T) ∪ S| ≤ tau of (omega/n)^{|V(T) ∪ S|} chi_T(G).

Grouping the terms by the vertex set W = V(T) ∪ S and applying Möbius
inversion to ``sum_{T ⊆ (W choose 2)} chi_T = 2^{C(|W|,2)} [W is a clique]``
collapses the sum onto cliques:

    E~[x_S] = sum over cliques K ⊇ S, |K| ≤ tau of 2^{C(|K|,2)} w(|K|),
    w(k)    = sum_{m=k}^{tau} (-1)^{m-k} C(n-k, m-k) (omega/n)^m.

:func:`evaluate_calibrated_bruteforce` evaluates the defining sum directly and
serves as the oracle for the closed form.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, log
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, GuardError
from .graphcore import Graph, character, enumerate_cliques, support

Number = Fraction | float
BACKENDS = ("calibrated", "fk")
MODES = ("exact", "float")


@dataclass(frozen=True)
class PEParams:
    """Parameters ``(n, omega, d, tau)``; ``epsilon`` is informational."""

    n: int
    omega: Fraction
    d: int
    tau: int
    epsilon: Fraction | None = None

    def __post_init__(self):
        object.__setattr__(self, "omega", Fraction(self.omega))
        if self.epsilon is not None:
            object.__setattr__(self, "epsilon", Fraction(self.epsilon))
        if not (1 <= self.d <= self.tau <= self.n):
            raise ConfigError(f"need 1 <= d <= tau <= n, got d={self.d}, tau={self.tau}, n={self.n}")
        if not (0 < self.omega < self.n):
            raise ConfigError(f"need 0 < omega < n, got omega={self.omega}")

    @classmethod
    def from_exponent(cls, n: int, exponent: float, d: int, tau: int, denominator: int = 10**6) -> "PEParams":
        """``omega = n**exponent`` rounded to a rational with bounded denominator."""
        omega = Fraction(float(n) ** float(exponent)).limit_denominator(denominator)
        eps = Fraction(1, 2) - Fraction(exponent).limit_denominator(denominator)
        return cls(n, omega, d, tau, eps)

    @property
    def q(self) -> Fraction:
        """Membership probability ``omega/n``."""
        return self.omega / self.n

    def in_recommended_regime(self, C: float = 1.0) -> bool:
        """Whether ``C d/eps <= tau <= (eps/C) log n`` holds; reported, never enforced."""
        eps = self.epsilon if self.epsilon is not None else Fraction(1, 2) - Fraction(log(self.omega) / log(self.n))
        if eps <= 0:
            return False
        return C * self.d / float(eps) <= self.tau <= float(eps) / C * log(self.n)


@lru_cache(maxsize=256)
def _weights_exact(n: int, omega: Fraction, tau: int) -> tuple[Fraction, ...]:
    q = omega / n
    return tuple(
        sum(((-1) ** (m - k)) * comb(n - k, m - k) * q**m for m in range(k, tau + 1))
        for k in range(tau + 1)
    )


def clique_weights(p: PEParams, mode: str = "exact") -> tuple[Number, ...]:
    """``2^{C(k,2)} w(k)`` for ``k = 0..tau``: the contribution of one ``k``-clique."""
    w = _weights_exact(p.n, p.omega, p.tau)
    out = tuple(2 ** comb(k, 2) * w[k] for k in range(p.tau + 1))
    return out if mode == "exact" else tuple(float(v) for v in out)


def calibrated_coefficient(S: Iterable[int], T: Iterable[tuple[int, int]], p: PEParams) -> Fraction:
    """Fourier coefficient of ``E~[x_S]`` on the character ``chi_T``."""
    size = len(set(S) | support(T))
    return p.q**size if size <= p.tau else Fraction(0)


def _check_mode(mode: str):
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")


def evaluate_calibrated(S: Iterable[int], G: Graph, p: PEParams, mode: str = "exact") -> Number:
    """``E~_G[x_S]`` via the clique-sum closed form."""
    _check_mode(mode)
    S = tuple(sorted(set(S)))
    if len(S) > p.tau:
        raise ConfigError(f"|S| = {len(S)} exceeds tau = {p.tau}")
    cw = clique_weights(p, mode)
    total = Fraction(0) if mode == "exact" else 0.0
    for K in enumerate_cliques(G, S, p.tau):
        total += cw[len(K)]
    return total


def evaluate_calibrated_bruteforce(S: Iterable[int], G: Graph, p: PEParams,
                                   max_tau: int = 5, max_n: int = 8) -> Fraction:
    """``E~_G[x_S]`` by summing every retained Fourier term; exact rationals only."""
    if p.tau > max_tau or p.n > max_n:
        raise GuardError(f"brute force limited to tau <= {max_tau}, n <= {max_n}")
    S = frozenset(S)
    if len(S) > p.tau:
        raise ConfigError(f"|S| = {len(S)} exceeds tau = {p.tau}")
    rest = [v for v in range(p.n) if v not in S]
    q = p.q
    total = Fraction(0)
    for extra in range(p.tau - len(S) + 1):
        for add in itertools.combinations(rest, extra):
            W = S | set(add)
            pairs = list(itertools.combinations(sorted(W), 2))
            inner = 0
            for mask in range(1 << len(pairs)):
                T = [pairs[b] for b in range(len(pairs)) if mask >> b & 1]
                if S | support(T) == W:
                    inner += character(G, T)
            total += inner * q ** len(W)
    return total


def evaluate_fk(S: Iterable[int], G: Graph, p: PEParams, mode: str = "exact") -> Number:
    """Feige-Krauthgamer moment: ``2^{C(|S|,2)} (omega/n)^{|S|}`` on cliques, else 0."""
    _check_mode(mode)
    S = set(S)
    if len(S) > 2 * p.d:
        raise ConfigError(f"|S| = {len(S)} exceeds 2d = {2 * p.d}")
    if not G.is_clique(S):
        return Fraction(0) if mode == "exact" else 0.0
    v = 2 ** comb(len(S), 2) * p.q ** len(S)
    return v if mode == "exact" else float(v)


def evaluate(S: Iterable[int], G: Graph, p: PEParams, backend: str = "calibrated", mode: str = "exact") -> Number:
    if backend == "calibrated":
        return evaluate_calibrated(S, G, p, mode)
    if backend == "fk":
        return evaluate_fk(S, G, p, mode)
    raise ConfigError(f"backend must be one of {BACKENDS}")


def moment_table(G: Graph, p: PEParams, max_size: int, backend: str = "calibrated",
                 mode: str = "float") -> dict[tuple[int, ...], Number]:
    """``E~[x_S]`` for every clique ``S`` with ``|S| ≤ max_size``; absent keys are zero.

    The calibrated table pushes each clique's weight to all of its small subsets,
    which evaluates every entry in one pass over the cliques of size ``≤ tau``.
    """
    _check_mode(mode)
    zero = Fraction(0) if mode == "exact" else 0.0
    table: dict[tuple[int, ...], Number] = {}
    if backend == "fk":
        q = p.q if mode == "exact" else float(p.q)
        for K in enumerate_cliques(G, (), max_size):
            table[K] = 2 ** comb(len(K), 2) * q ** len(K)
        return table
    if backend != "calibrated":
        raise ConfigError(f"backend must be one of {BACKENDS}")
    cw = clique_weights(p, mode)
    for K in enumerate_cliques(G, (), p.tau):
        c = cw[len(K)]
        for r in range(min(len(K), max_size) + 1):
            for S in itertools.combinations(K, r):
                table[S] = table.get(S, zero) + c
    return table


class MultilinearPoly:
    """Multilinear polynomial in ``x_0..x_{n-1}``; ``x_i^2`` reduces to ``x_i``."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Iterable[int], object] | None = None):
        acc: dict[frozenset, Fraction] = {}
        for S, c in (terms or {}).items():
            key = frozenset(S)
            acc[key] = acc.get(key, Fraction(0)) + Fraction(c)
        self.terms = {S: c for S, c in acc.items() if c != 0}

    @classmethod
    def constant(cls, c=1) -> "MultilinearPoly":
        return cls({(): c})

    @classmethod
    def var(cls, i: int) -> "MultilinearPoly":
        return cls({(i,): 1})

    @classmethod
    def monomial(cls, S: Iterable[int], c=1) -> "MultilinearPoly":
        return cls({tuple(S): c})

    @property
    def degree(self) -> int:
        return max((len(S) for S in self.terms), default=0)

    def __add__(self, other):
        other = _as_poly(other)
        out = dict(self.terms)
        for S, c in other.terms.items():
            out[S] = out.get(S, Fraction(0)) + c
        return MultilinearPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return MultilinearPoly({S: -c for S, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-_as_poly(other))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        other = _as_poly(other)
        out: dict[frozenset, Fraction] = {}
        for S, a in self.terms.items():
            for T, b in other.terms.items():
                U = S | T
                out[U] = out.get(U, Fraction(0)) + a * b
        return MultilinearPoly(out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = MultilinearPoly.constant(1)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, MultilinearPoly) and self.terms == other.terms

    def __repr__(self):
        parts = [f"{c}*x{sorted(S)}" for S, c in sorted(self.terms.items(), key=lambda t: (len(t[0]), sorted(t[0])))]
        return "MultilinearPoly(" + " + ".join(parts) + ")"


def _as_poly(x) -> MultilinearPoly:
    return x if isinstance(x, MultilinearPoly) else MultilinearPoly.constant(x)


def pe_apply(f: MultilinearPoly, G: Graph, p: PEParams, backend: str = "calibrated", mode: str = "exact") -> Number:
    """Apply the pseudoexpectation linearly to a multilinear polynomial."""
    if f.degree > 2 * p.d:
        raise ConfigError(f"degree {f.degree} exceeds 2d = {2 * p.d}")
    total = Fraction(0) if mode == "exact" else 0.0
    for S, c in f.terms.items():
        v = evaluate(S, G, p, backend, mode)
        total += c * v if mode == "exact" else float(c) * v
    return total


def index_sets(n: int, d: int) -> list[tuple[int, ...]]:
    """All subsets of ``[n]`` of size ``≤ d`` ordered by size, then lexicographically."""
    return [S for k in range(d + 1) for S in itertools.combinations(range(n), k)]


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    """Symmetric matrix ``M(I, J) = E~[x_{I ∪ J}]`` over index sets of size ``≤ d``."""

    index: list
    entries: np.ndarray
    mode: str

    def position(self, S: Iterable[int]) -> int:
        return self._lookup[tuple(sorted(S))]

    @property
    def _lookup(self) -> dict:
        lk = self.__dict__.get("_lk")
        if lk is None:
            lk = {S: i for i, S in enumerate(self.index)}
            self.__dict__["_lk"] = lk
        return lk

    def as_float(self) -> np.ndarray:
        return np.asarray(self.entries, dtype=float)

    def block(self, size_row: int, size_col: int) -> np.ndarray:
        rows = [i for i, S in enumerate(self.index) if len(S) == size_row]
        cols = [i for i, S in enumerate(self.index) if len(S) == size_col]
        return self.entries[np.ix_(rows, cols)]

    def to_text(self) -> str:
        """Dense text: header of index labels, then one row per index set."""
        def fmt(v):
            return f"{v.numerator}/{v.denominator}" if isinstance(v, Fraction) else repr(float(v))

        labels = ["{" + ",".join(map(str, S)) + "}" for S in self.index]
        lines = ["\t".join(["mode=" + self.mode] + labels)]
        for lab, row in zip(labels, self.entries):
            lines.append("\t".join([lab] + [fmt(v) for v in row]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MomentMatrix":
        lines = text.strip("\n").split("\n")
        head = lines[0].split("\t")
        mode = head[0].split("=", 1)[1]

        def lab(s):
            inner = s.strip("{}")
            return tuple(int(v) for v in inner.split(",")) if inner else ()

        index = [lab(s) for s in head[1:]]
        parse = Fraction if mode == "exact" else float
        rows = [[parse(v) for v in ln.split("\t")[1:]] for ln in lines[1:]]
        arr = np.array(rows, dtype=object if mode == "exact" else float)
        return cls(index, arr, mode)


def build_moment_matrix(G: Graph, p: PEParams, backend: str = "calibrated", mode: str = "float",
                        max_dim: int = 6000) -> MomentMatrix:
    """Moment matrix over all index sets of size ``≤ d``."""
    _check_mode(mode)
    dim = sum(comb(p.n, k) for k in range(p.d + 1))
    if dim > max_dim:
        raise GuardError(f"moment matrix dimension {dim} exceeds guard {max_dim}")
    index = index_sets(p.n, p.d)
    table = moment_table(G, p, 2 * p.d, backend, mode)
    if mode == "exact":
        M = np.full((dim, dim), Fraction(0), dtype=object)
    else:
        M = np.zeros((dim, dim))
    live = [(i, S) for i, S in enumerate(index) if S in table]
    for a, (i, I) in enumerate(live):
        for j, J in live[a:]:
            U = tuple(sorted(set(I) | set(J)))
            v = table.get(U)
            if v is not None:
                M[i, j] = v
                M[j, i] = v
    return MomentMatrix(index, M, mode)
