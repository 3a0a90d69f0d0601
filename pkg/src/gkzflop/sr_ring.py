"""Partial semigroup rings, their Artinian quotients and leading-term modules.

All computations are exact (``Fraction``); float copies of the nilpotent
operators are attached for downstream numerics.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache, reduce
from itertools import combinations, product
from math import gcd
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .lattice_core import (
    IntegerMatrix,
    RationalCone,
    SemigroupOracle,
    dot,
    inverse,
    kernel_lattice,
    lattice_index,
    determinant,
    primitive,
    rref,
    solve_integer,
)
from .triangulation import StackyFan, Triangulation, quotient_fan

log = logging.getLogger(__name__)

Point = Tuple[int, ...]


# ---------------------------------------------------------------------------
# generic graded quotient engine

@dataclass
class GradedQuotient:
    """Quotient of a graded vector space with monomial basis by a graded subspace.

    ``basis[k]`` holds the lexicographically least monomials completing a
    basis in degree ``k``; ``normal[k][w]`` expresses monomial ``w`` in it.
    """

    basis: Dict[int, List] = field(default_factory=dict)
    normal: Dict[int, Dict] = field(default_factory=dict)

    def dim(self) -> int:
        return sum(len(b) for b in self.basis.values())

    def flat_basis(self):
        return [(k, w) for k in sorted(self.basis) for w in self.basis[k]]


def quotient_degree(monos, ideal_rows):
    """Quotient of the span of ``monos`` by the span of ``ideal_rows``.

    Parameters
    ----------
    monos : sorted list of monomial keys
    ideal_rows : list of dicts key -> coefficient

    Returns
    -------
    basis : list of keys (lexicographically least complement)
    normal : dict key -> dict basis key -> Fraction
    """
    order = list(reversed(monos))  # largest first, so pivots are lex-largest
    col = {w: i for i, w in enumerate(order)}
    rows = []
    for r in ideal_rows:
        vec = [Fraction(0)] * len(order)
        for w, c in r.items():
            vec[col[w]] += c
        if any(vec):
            rows.append(vec)
    R, piv = rref(rows) if rows else ([], [])
    pivset = set(piv)
    basis = [w for w in monos if col[w] not in pivset]
    normal = {w: {w: Fraction(1)} for w in basis}
    for i, p in enumerate(piv):
        w = order[p]
        normal[w] = {order[c]: -R[i][c] for c in range(len(order))
                     if c not in pivset and R[i][c] != 0}
    return basis, normal


# ---------------------------------------------------------------------------
# the partial semigroup ring C[K, Sigma]

class GradedMonomialSpace:
    """Lattice points of ``K cap N`` organized by degree, for a triangulation.

    Points of degree ``k`` are produced as a Box element of a cell plus a
    nonnegative integer combination of the cell generators.
    """

    def __init__(self, T: Triangulation):
        self.T = T
        self.fan = T.fan
        cfg = T.config
        self._cells = []
        for c in T.maximal_cones:
            V = [cfg.points[j] for j in c]
            self._cells.append((c, inverse([list(col) for col in zip(*V)])))
        self._box = []
        for c in T.maximal_cones:
            self._box.append([b for b in T.box_elements() if set(b.sigma_v) <= set(c)])
        self._cache: Dict[int, List[Point]] = {}
        self._support: Dict[Point, Tuple[int, ...]] = {}

    def degree(self, k: int) -> List[Point]:
        if k in self._cache:
            return self._cache[k]
        cfg = self.T.config
        pts = set()
        for (c, _), boxes in zip(self._cells, self._box):
            for b in boxes:
                rest = k - cfg.degree(b.v)
                if rest < 0:
                    continue
                for comp in _compositions(rest, len(c)):
                    w = list(b.v)
                    for m, j in zip(comp, c):
                        if m:
                            w = [a + m * x for a, x in zip(w, cfg.points[j])]
                    pts.add(tuple(w))
        out = sorted(pts)
        self._cache[k] = out
        return out

    def support(self, w) -> Tuple[int, ...]:
        """Minimal cone of the fan containing ``w`` (as an index tuple)."""
        w = tuple(w)
        if w in self._support:
            return self._support[w]
        for c, inv in self._cells:
            coeff = [sum(Fraction(a) * b for a, b in zip(row, w)) for row in inv]
            if all(x >= 0 for x in coeff):
                s = tuple(j for j, x in zip(c, coeff) if x > 0)
                self._support[w] = s
                return s
        raise ValueError(f"{w} is not in the support of the fan")

    def in_cone(self, w) -> bool:
        try:
            self.support(w)
            return True
        except ValueError:
            return False


def _compositions(total, parts):
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def multiply_monomials(T: Triangulation, w1, w2, space: Optional[GradedMonomialSpace] = None):
    """Product in ``C[K, Sigma]``: ``w1 + w2`` if some cone contains both, else None."""
    space = space or GradedMonomialSpace(T)
    s = set(space.support(w1)) | set(space.support(w2))
    if T.fan.is_cone(s):
        return tuple(a + b for a, b in zip(w1, w2))
    return None


def regular_sequence(T: Triangulation, m_basis=None):
    """The degree-one elements ``Z_i = sum <m_i, v_j> x^{v_j}`` over rays.

    Returns a list of dicts mapping lattice points to integer coefficients.
    """
    cfg = T.config
    if m_basis is None:
        m_basis = [tuple(int(i == k) for k in range(cfg.d)) for i in range(cfg.d)]
    rays = T.rays()
    out = []
    for m in m_basis:
        Z = {}
        for j in rays:
            c = dot(m, cfg.points[j])
            if c:
                Z[cfg.points[j]] = Z.get(cfg.points[j], 0) + c
        out.append(Z)
    return out


def gap_bound(T: Triangulation) -> int:
    """Upper bound for degrees of Hilbert-basis elements of the cells.

    Each cell semigroup is generated by its rays and its parallelepiped
    points, so the largest degree among those bounds the generators.
    """
    return max([1] + [T.config.degree(b.v) for b in T.box_elements()])


@dataclass
class SRQuotient:
    """Finite-dimensional quotient ``C[K, Sigma]/(Z)`` with nilpotent operators.

    Attributes
    ----------
    basis : list of lattice points representing the quotient basis
    degrees : degree of each basis element
    D_exact : multiplication by ``x^{v_j}`` in the basis (Fraction matrices)
    D : float copies of ``D_exact``
    """

    T: Triangulation
    basis: List[Point]
    degrees: List[int]
    D_exact: List[List[List[Fraction]]]
    D: List[np.ndarray]
    quotient: GradedQuotient
    space: GradedMonomialSpace
    Z: list
    top_degree: int

    @property
    def dim(self) -> int:
        return len(self.basis)

    def index(self, w) -> int:
        return self.basis.index(tuple(w))

    def reduce_monomial(self, w) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=complex)
        for b, c in self.reduce_exact(w).items():
            vec[self.index(b)] += float(c)
        return vec

    def reduce_exact(self, w) -> Dict[Point, Fraction]:
        if w is None:
            return {}
        k = self.T.config.degree(w)
        if k > self.top_degree:
            return {}
        return self.quotient.normal[k][tuple(w)]

    def multiply(self, w1, w2):
        return multiply_monomials(self.T, w1, w2, self.space)

    def unit(self) -> np.ndarray:
        return self.reduce_monomial(tuple([0] * self.T.config.d))


def quotient_basis(T: Triangulation, m_basis=None) -> SRQuotient:
    """Compute ``C[K, Sigma]/(Z_1..Z_d)`` degree by degree.

    Stops after ``gap_bound`` consecutive vanishing degrees.
    """
    space = GradedMonomialSpace(T)
    Z = regular_sequence(T, m_basis)
    g = gap_bound(T)
    Q = GradedQuotient()
    zeros = 0
    k = 0
    top = 0
    while zeros < g:
        monos = space.degree(k)
        rows = []
        if k > 0:
            for w in space.degree(k - 1):
                for Zi in Z:
                    row = {}
                    for ray, c in Zi.items():
                        p = multiply_monomials(T, ray, w, space)
                        if p is not None:
                            row[p] = row.get(p, 0) + c
                    rows.append(row)
        basis, normal = quotient_degree(monos, rows)
        Q.basis[k], Q.normal[k] = basis, normal
        if basis:
            zeros = 0
            top = k
        else:
            zeros += 1
        k += 1
    # one more degree so products from the top degree can be reduced
    flat = Q.flat_basis()
    pts = [w for _, w in flat]
    degs = [k for k, _ in flat]
    n = T.config.n
    rays = set(T.rays())
    D_exact = []
    for j in range(n):
        M = [[Fraction(0)] * len(pts) for _ in pts]
        if j in rays:
            vj = T.config.points[j]
            for col, w in enumerate(pts):
                p = multiply_monomials(T, vj, w, space)
                if p is None or T.config.degree(p) > top:
                    continue
                for b, c in Q.normal[T.config.degree(p)][p].items():
                    M[pts.index(b)][col] += c
        D_exact.append(M)
    D = [np.array([[float(x) for x in r] for r in M], dtype=float).reshape(len(pts), len(pts))
         for M in D_exact]
    return SRQuotient(T, pts, degs, D_exact, D, Q, space, Z, top)


# ---------------------------------------------------------------------------
# polynomial Stanley-Reisner algebras of (quotient) fans

@dataclass
class PolynomialSR:
    """``C[D_j]/(SR ideal + linear relations)`` for a simplicial fan.

    Monomials are exponent tuples over the original vector indices.
    """

    fan: StackyFan
    rays: Tuple[int, ...]
    basis: List[Tuple[int, ...]]
    degrees: List[int]
    quotient: GradedQuotient
    D_exact: List[List[List[Fraction]]]
    D: List[np.ndarray]

    @property
    def dim(self) -> int:
        return len(self.basis)

    def reduce_exact(self, alpha) -> Dict[Tuple[int, ...], Fraction]:
        k = sum(alpha)
        if k not in self.quotient.normal:
            return {}
        return self.quotient.normal[k].get(tuple(alpha), {})


def _face_monomials(fan: StackyFan, k, n):
    """Exponent vectors of degree ``k`` supported on a cone of ``fan``."""
    seen = set()
    for c in fan.cones:
        for comp in _compositions(k, len(c)):
            alpha = [0] * n
            for m, j in zip(comp, c):
                alpha[j] = m
            seen.add(tuple(alpha))
    return sorted(seen)


def polynomial_sr_quotient(fan: StackyFan) -> PolynomialSR:
    """Stanley-Reisner presentation of the cohomology of a simplicial fan.

    Linear relations ``sum_j <m, v_j> D_j`` use a lattice basis of the
    ambient dual; nonfaces vanish.
    """
    n = fan.n
    rays = fan.rays()
    r = fan.dim
    Q = GradedQuotient()
    k = 0
    forms = []
    for i in range(r):
        forms.append({j: fan.vectors[j][i] for j in rays if fan.vectors[j][i] != 0})
    while True:
        monos = _face_monomials(fan, k, n)
        monoset = set(monos)
        rows = []
        if k > 0:
            for alpha in _face_monomials(fan, k - 1, n):
                for f in forms:
                    row = {}
                    for j, c in f.items():
                        beta = list(alpha)
                        beta[j] += 1
                        beta = tuple(beta)
                        if beta in monoset:
                            row[beta] = row.get(beta, 0) + c
                    rows.append(row)
        basis, normal = quotient_degree(monos, rows)
        Q.basis[k], Q.normal[k] = basis, normal
        if not basis:
            break
        k += 1
    flat = Q.flat_basis()
    pts = [a for _, a in flat]
    degs = [k for k, _ in flat]
    D_exact = []
    for j in range(n):
        M = [[Fraction(0)] * len(pts) for _ in pts]
        if j in rays:
            for col, a in enumerate(pts):
                b = list(a)
                b[j] += 1
                b = tuple(b)
                kk = sum(b)
                for t, c in Q.normal.get(kk, {}).get(b, {}).items():
                    M[pts.index(t)][col] += c
        D_exact.append(M)
    D = [np.array([[float(x) for x in row] for row in M], dtype=float).reshape(len(pts), len(pts))
         for M in D_exact]
    return PolynomialSR(fan, rays, pts, degs, Q, D_exact, D)


# ---------------------------------------------------------------------------
# leading-term module

def lcm_of_indices(T: Triangulation) -> int:
    """Least common multiple of the indices of all full-rank d-subsets of A."""
    cfg = T.config
    out = 1
    for B in combinations(range(cfg.n), cfg.d):
        det = abs(int(determinant([cfg.points[j] for j in B])))
        if det:
            out = out * det // gcd(out, det)
    return out


class MBetaOracle:
    """Membership test for the leading-term module ``M(beta)``.

    ``x^w`` lies in ``M(beta)`` iff ``(beta - w) + kPw`` is in the semigroup
    of ``A`` for some ``k > 0``.  The search runs ``k = 1 .. k_max``.
    """

    def __init__(self, T: Triangulation, beta, k_max: Optional[int] = None):
        self.T = T
        self.cfg = T.config
        self.beta = tuple(int(x) for x in beta)
        self.P = lcm_of_indices(T)
        self.semigroup = SemigroupOracle(self.cfg.matrix, self.cfg.height)
        self.k_max_override = k_max
        self.telemetry = {"flipped_near_k_max": [], "max_k_used": 0}

    def default_k_max(self, w) -> int:
        """Bound read off the constructive argument.

        For an integer representation ``r`` of ``beta - w`` of small sup norm,
        ``k`` has to beat ``-r_j`` and ``(1 - r_j)/P``; the degree of ``w``
        accounts for the shift between ``w`` and its Box part.
        """
        diff = tuple(b - x for b, x in zip(self.beta, w))
        r = small_representation(self.cfg, diff)
        need = max([1] + [max(-x, -((x - 1) // self.P)) for x in r])
        return need + self.cfg.degree(w) + 1

    def member(self, w, k_max: Optional[int] = None, record: bool = True) -> bool:
        w = tuple(int(x) for x in w)
        kk = k_max or self.k_max_override or self.default_k_max(w)
        hit = self._search(w, kk)
        if record and self.k_max_override is None and k_max is None:
            if not hit and self._search(w, 2 * kk):
                self.telemetry["flipped_near_k_max"].append(w)
                hit = True
        return hit

    def _search(self, w, kk) -> bool:
        if not any(w):
            return self.semigroup.member(self.beta) is not None
        base = [b - x for b, x in zip(self.beta, w)]
        for k in range(1, kk + 1):
            t = tuple(a + k * self.P * x for a, x in zip(base, w))
            if self.semigroup.member(t) is not None:
                self.telemetry["max_k_used"] = max(self.telemetry["max_k_used"], k)
                return True
        return False


def small_representation(cfg, target):
    """Integer ``r`` with ``sum r_j v_j = target``, size reduced against ``L``."""
    r = solve_integer(cfg.matrix, target)
    if r is None:
        raise ValueError("target not in the lattice generated by A")
    L = cfg.relation_basis
    best = list(r)
    improved = True
    while improved and L:
        improved = False
        for l in L:
            for s in (1, -1):
                cand = [a + s * b for a, b in zip(best, l)]
                if (max(map(abs, cand)), sum(map(abs, cand))) < (max(map(abs, best)), sum(map(abs, best))):
                    best = cand
                    improved = True
    return tuple(best)


def mbeta_member(T: Triangulation, beta, w, k_max: Optional[int] = None) -> bool:
    return MBetaOracle(T, beta, k_max).member(w)


@dataclass
class LeadingTermModule:
    members: Dict[int, List[Point]]
    quotient: GradedQuotient
    max_degree: int
    telemetry: dict

    @property
    def dim(self) -> int:
        return self.quotient.dim()

    def flat_basis(self):
        return self.quotient.flat_basis()


def mbeta_quotient(T: Triangulation, beta, k_max: Optional[int] = None,
                   max_degree: Optional[int] = None) -> LeadingTermModule:
    """Graded pieces of ``M(beta)`` and the quotient ``M(beta)/Z M(beta)``.

    Degrees are computed up to ``max_degree``; by default this is the
    degree bound ``n + d - 1`` for the module generators followed by a
    run of vanishing quotient degrees of length ``gap_bound``.
    """
    oracle = MBetaOracle(T, beta, k_max)
    space = GradedMonomialSpace(T)
    Z = regular_sequence(T)
    cfg = T.config
    gen_bound = cfg.n + cfg.d - 1
    g = gap_bound(T)
    members: Dict[int, List[Point]] = {}
    Q = GradedQuotient()
    k = 0
    zeros = 0
    while True:
        mem = [w for w in space.degree(k) if oracle.member(w)]
        members[k] = mem
        memset = set(mem)
        rows = []
        for w in members.get(k - 1, []):
            for Zi in Z:
                row = {}
                for ray, c in Zi.items():
                    p = multiply_monomials(T, ray, w, space)
                    if p is not None:
                        if p not in memset:
                            raise AssertionError(f"M(beta) not closed under multiplication at {p}")
                        row[p] = row.get(p, 0) + c
                rows.append(row)
        basis, normal = quotient_degree(mem, rows)
        Q.basis[k], Q.normal[k] = basis, normal
        zeros = 0 if basis else zeros + 1
        if max_degree is not None:
            if k >= max_degree:
                break
        elif k >= gen_bound and zeros >= g:
            break
        k += 1
    return LeadingTermModule(members, Q, k, dict(oracle.telemetry))


def interior_points_check(T: Triangulation, module: LeadingTermModule) -> bool:
    """Degreewise ``M(beta) == C[K interior, Sigma]`` (for beta in -K interior)."""
    cone = RationalCone.from_generators(T.config.points)
    facets = [primitive(f) for f in cone.dual().generators]
    space = GradedMonomialSpace(T)
    for k, mem in module.members.items():
        interior = [w for w in space.degree(k) if all(dot(f, w) > 0 for f in facets)]
        if sorted(interior) != sorted(mem):
            return False
    return True
