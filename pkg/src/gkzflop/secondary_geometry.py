"""Series cones, convergence domains and continuation paths.

Cones living in ``L (x) R`` are described in coordinates with respect to the
relation basis of the configuration; their duals live in the dual
coordinates, where a point ``w in (R^n)^*`` is represented by its pairings
``(<w, b_1>, ..., <w, b_r>)`` with the basis vectors ``b_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import mpmath

from .lattice_core import RationalCone, cone_contains, dot, rank, solve_rational
from .triangulation import Circuit, Triangulation, essential_cones, find_circuit


class DegenerateCone(ValueError):
    pass


class Inconclusive(ValueError):
    pass


class PathInfeasible(ValueError):
    pass


def lattice_norm(l) -> int:
    """``||l||``: sum of the positive coordinates (half the l1 norm on L)."""
    return sum(x for x in l if x > 0)


def to_ambient(T: Triangulation, coords) -> Tuple[Fraction, ...]:
    """Vector of ``L (x) Q`` from relation-basis coordinates."""
    B = T.config.relation_basis
    n = T.config.n
    return tuple(sum(Fraction(c) * b[j] for c, b in zip(coords, B)) for j in range(n))


def to_dual_coordinates(T: Triangulation, w) -> Tuple:
    """Restriction of a covector on ``R^n`` to ``L``."""
    return tuple(sum(x * y for x, y in zip(b, w)) for b in T.config.relation_basis)


@dataclass
class SeriesConeFamily:
    """Cones ``C_sigma`` per maximal cone and their Minkowski sum.

    Attributes
    ----------
    cones : maximal cone -> ``C_sigma`` in relation-basis coordinates
    total : ``C_Sigma``
    total_dual : ``C_Sigma^vee`` in dual coordinates
    degenerate : True when ``L = 0``
    """

    T: Triangulation
    cones: Dict[Tuple[int, ...], RationalCone]
    total: RationalCone
    total_dual: RationalCone
    degenerate: bool = False

    def subfamily(self, J) -> RationalCone:
        """``C_J`` for a subset of maximal cones (zero cone when empty)."""
        r = self.T.config.rank_L
        gens = [g for c in J for g in self.cones[c].generators]
        return RationalCone.from_generators(gens, r)

    def ambient_generators(self, C: RationalCone):
        return [to_ambient(self.T, g) for g in C.generators]


def _sigma_cone(T: Triangulation, sigma) -> RationalCone:
    """``{x in L (x) R : x_j >= 0 for j not a ray of sigma}``."""
    r = T.config.rank_L
    B = T.config.relation_basis
    rows = [tuple(b[j] for b in B) for j in range(T.config.n) if j not in sigma]
    if not rows:
        return RationalCone.whole_space(r)
    return RationalCone.from_generators(rows, r).dual()


def build_series_cones(T: Triangulation) -> SeriesConeFamily:
    """Series cones ``C_sigma``, ``C_Sigma`` and the dual of the latter.

    Raises
    ------
    DegenerateCone
        If ``C_Sigma^vee`` has empty interior (not a regular triangulation).
    """
    r = T.config.rank_L
    if r == 0:
        z = RationalCone.from_generators([], 0)
        return SeriesConeFamily(T, {c: z for c in T.maximal_cones}, z, z, True)
    cones = {c: _sigma_cone(T, c) for c in T.maximal_cones}
    gens = [g for C in cones.values() for g in C.generators]
    total = RationalCone.from_generators(gens, r)
    dual = total.dual()
    if not dual.is_full_dimensional():
        raise DegenerateCone("C_Sigma^vee has empty interior")
    return SeriesConeFamily(T, cones, total, dual)


def _strict_interior(C: RationalCone):
    """A point pairing strictly positively with every facet normal."""
    g = C.interior_point()
    facets = C.dual().generators
    if C.ambient_dim and not all(dot(f, g) > 0 for f in facets):
        raise DegenerateCone("cone has empty interior")
    return g


def choose_deep_point(cone_dual: RationalCone, primal_generators, margin=Fraction(1), n: int = 1,
                      norm: str = "linear") -> Tuple[Fraction, ...]:
    """Offset ``c`` deep enough in ``cone_dual`` for absolute convergence.

    Finds the smallest ``t >= 1`` (rational, rounded up to 1/64) with
    ``t <g, l_i> >= (margin + log 4n) * s(l_i)`` for every primal generator,
    where ``g`` is a strict interior point and ``s(l) = ||l||``.  With
    ``norm="log"`` the weaker ``s(l) = log ||l||`` is used instead.

    Raises
    ------
    DegenerateCone
    """
    if not cone_dual.is_full_dimensional():
        raise DegenerateCone("dual cone is not full dimensional")
    g = _strict_interior(cone_dual)
    k = float(margin) + math.log(4 * n)
    t = Fraction(1)
    for l, size in primal_generators:
        s = size if norm == "linear" else math.log(max(size, 1))
        p = dot(g, l)
        if p <= 0:
            raise DegenerateCone("generator not strictly positive on the interior point")
        need = Fraction(math.ceil(64 * k * s / float(p)), 64)
        t = max(t, need)
    return tuple(t * x for x in g)


@dataclass
class DomainSpec:
    """``{z : (-log|z_j|) restricted to L in cone_dual + offset, |arg z_j| < pi}``."""

    T: Triangulation
    cone_dual: RationalCone
    offset: Tuple[Fraction, ...]

    def facet_values(self, w):
        p = to_dual_coordinates(self.T, w)
        q = [a - b for a, b in zip(p, self.offset)]
        return [sum(f_i * x for f_i, x in zip(f, q)) for f in self.cone_dual.dual().generators]


def domain_for(T: Triangulation, J=None, margin=Fraction(1), family: Optional[SeriesConeFamily] = None,
               norm: str = "linear") -> DomainSpec:
    """Convergence domain ``U_J`` (``J`` defaults to all maximal cones)."""
    fam = family or build_series_cones(T)
    J = T.maximal_cones if J is None else tuple(J)
    r = T.config.rank_L
    if r == 0:
        return DomainSpec(T, RationalCone.from_generators([], 0), ())
    C = fam.subfamily(J)
    dual = C.dual()
    prim = [(g, lattice_norm(_integral(to_ambient(T, g)))) for g in C.generators]
    c = choose_deep_point(dual, prim, margin, T.config.n, norm)
    return DomainSpec(T, dual, c)


def _integral(v):
    den = 1
    for x in v:
        den = den * Fraction(x).denominator // math.gcd(den, Fraction(x).denominator)
    return tuple(int(x * den) for x in v)


def _ivq(x):
    x = Fraction(x)
    return mpmath.iv.mpf(x.numerator) / mpmath.iv.mpf(x.denominator)


def domain_contains(U: DomainSpec, z, max_dps: int = 120) -> bool:
    """Membership of ``z`` in the domain, decided with interval arithmetic.

    Raises
    ------
    Inconclusive
        If ``z`` lies within the attainable interval width of the boundary.
    """
    for zj in z:
        zj = complex(zj)
        if zj == 0 or (zj.imag == 0 and zj.real < 0):
            return False
    if not U.cone_dual.generators and not U.offset:
        return True
    dps = 20
    saved = mpmath.iv.dps
    while dps <= max_dps:
        mpmath.iv.dps = dps
        try:
            w = []
            for zj in z:
                zj = complex(zj)
                re, im = mpmath.iv.mpf(zj.real), mpmath.iv.mpf(zj.imag)
                w.append(-mpmath.iv.log(re * re + im * im) / 2)
            vals = []
            for f in U.cone_dual.dual().generators:
                acc = mpmath.iv.mpf(0)
                p = [sum((_ivq(b_j) * w_j for b_j, w_j in zip(b, w)), mpmath.iv.mpf(0))
                     for b in U.T.config.relation_basis]
                for fi, pi, ci in zip(f, p, U.offset):
                    acc += _ivq(fi) * (pi - _ivq(ci))
                vals.append(acc)
        finally:
            mpmath.iv.dps = saved
        if all(v.a > 0 for v in vals):
            return True
        if any(v.b < 0 for v in vals):
            return False
        dps *= 2
    raise Inconclusive("point is on the boundary of the domain to working precision")


# ---------------------------------------------------------------------------
# continuation paths

@dataclass
class ContinuationPath:
    """Log-linear path ``-log|z(u)| = (1-u) w_plus + u w_minus`` at fixed arguments."""

    w_plus: Tuple[Fraction, ...]
    w_minus: Tuple[Fraction, ...]
    args: Tuple[float, ...]
    A: Fraction
    circuit: Circuit
    checks: Dict[str, object] = field(default_factory=dict)

    def z(self, u) -> List[complex]:
        u = Fraction(u)
        w = [(1 - u) * a + u * b for a, b in zip(self.w_plus, self.w_minus)]
        return [cmath_rect(math.exp(-float(x)), arg) for x, arg in zip(w, self.args)]

    @property
    def z_plus(self):
        return self.z(0)

    @property
    def z_minus(self):
        return self.z(1)

    def arg_y(self) -> float:
        """Argument of ``exp(i pi sum_{I_-} h_j) prod z_j^{h_j}``; constant along the path."""
        h = self.circuit.h
        return sum(hj * a for hj, a in zip(h, self.args)) + math.pi * sum(h[j] for j in self.circuit.I_minus)


def cmath_rect(r, phi):
    return complex(r * math.cos(phi), r * math.sin(phi))


def witness_args(circuit: Circuit, n: int, jitter: float = 0.0) -> Tuple[float, ...]:
    """Arguments in ``(-pi, 0)`` putting ``arg y`` in the middle of ``(-2 pi, 0)``.

    With arguments ``-a`` on ``I_+`` and ``-b`` on ``I_-`` one gets
    ``arg y = H (b - a - pi)`` with ``H = sum_{I_+} h_j``; the target is
    ``arg y = -pi``.
    """
    H = sum(circuit.h[j] for j in circuit.I_plus)
    a = 0.25 + jitter
    b = a + math.pi - math.pi / H
    b = min(b, math.pi - 0.2)
    args = []
    for j in range(n):
        if j in circuit.I_plus:
            args.append(-a)
        elif j in circuit.I_minus:
            args.append(-b)
        else:
            args.append(-0.5 - jitter)
    return tuple(args)


def _lift(T: Triangulation, p):
    """Minimal-norm covector on ``R^n`` with prescribed pairings on ``L``."""
    B = T.config.relation_basis
    G = [[sum(Fraction(x) * y for x, y in zip(bi, bj)) for bj in B] for bi in B]
    coef = solve_rational(G, list(p))
    n = T.config.n
    return tuple(sum(c * b[j] for c, b in zip(coef, B)) for j in range(n))


def build_path(T_plus: Triangulation, T_minus: Triangulation, A=None, margin=Fraction(1),
               jitter: float = 0.0, depth=Fraction(0)) -> ContinuationPath:
    """Continuation path satisfying A1-A3 between the two convergence domains.

    The endpoints are ``w_pm = base +- (A/2) h`` with ``base`` on the deep
    ray of the common facet.  ``A`` defaults to the smallest value (rounded
    up to an integer) for which both endpoints lie in their domains; an
    explicit ``A`` that is too small raises.

    Raises
    ------
    PathInfeasible
    """
    circ = find_circuit(T_plus, T_minus)
    cfg = T_plus.config
    if A is not None and Fraction(A) <= 0:
        raise PathInfeasible("A1: A must be positive")
    Up, Um = domain_for(T_plus, margin=margin), domain_for(T_minus, margin=margin)
    J = tuple(c for c in T_plus.maximal_cones if c in set(T_minus.maximal_cones))
    UJ = domain_for(T_plus, J, margin=margin)
    if UJ.cone_dual.generators and not UJ.cone_dual.is_full_dimensional():
        raise PathInfeasible("A2: C_J^vee is not full dimensional")
    h = circ.h
    # base point on the deep ray of the common facet C_+^vee cap C_-^vee
    r = cfg.rank_L
    hh = sum(x * x for x in h)
    fam_p, fam_m = build_series_cones(T_plus), build_series_cones(T_minus)
    both = RationalCone.from_generators(list(fam_p.total.generators) + list(fam_m.total.generators), r)
    facet_pt = both.dual().interior_point()
    base_p0 = [a + b for a, b in zip(Up.offset, Um.offset)]

    def endpoints(Aval, s):
        base_p = [a + s * b for a, b in zip(base_p0, facet_pt)]
        base = list(_lift(T_plus, base_p))
        sh = sum(Fraction(x) * y for x, y in zip(base, h)) / hh
        base = [x - sh * y for x, y in zip(base, h)]
        wp = tuple(x + Aval / 2 * y for x, y in zip(base, h))
        wm = tuple(x - Aval / 2 * y for x, y in zip(base, h))
        return wp, wm

    def feasible(Aval, s):
        wp, wm = endpoints(Aval, s)
        return (all(v > 0 for v in Up.facet_values(wp)) and all(v > 0 for v in Um.facet_values(wm))
                and all(v > 0 for v in UJ.facet_values(wp)) and all(v > 0 for v in UJ.facet_values(wm)))

    s = 1 + Fraction(depth)
    if A is None:
        k = 0
        while not feasible(Fraction(2 ** k), s * 2 ** k):
            k += 1
            if k > 20:
                raise PathInfeasible("no A found for A1/A2")
        s = s * 2 ** k
        lo, hi = Fraction(0), Fraction(2 ** k)
        while hi - lo > 1:
            mid = Fraction(math.floor((lo + hi) / 2))
            if feasible(mid, s):
                hi = mid
            else:
                lo = mid
        Aval = hi + 1 if feasible(hi + 1, s) else hi
    else:
        Aval = Fraction(A)
        if not feasible(Aval, s):
            raise PathInfeasible(f"A2: endpoints outside the convergence domains for A={A}")
    wp, wm = endpoints(Aval, s)
    args = witness_args(circ, cfg.n, jitter)
    path = ContinuationPath(wp, wm, args, Aval, circ)
    ay = path.arg_y()
    if not (-2 * math.pi < ay < 0):
        raise PathInfeasible(f"A3: arg y = {ay} outside (-2 pi, 0)")
    checks = {"A1": [str(a - b) for a, b in zip(wp, wm)], "A": str(Aval), "arg_y": ay}
    a2 = []
    for u in (Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1)):
        w = [(1 - u) * a + u * b for a, b in zip(wp, wm)]
        a2.append(all(v > 0 for v in UJ.facet_values(w)))
    if not all(a2):
        raise PathInfeasible("A2 fails along the path")
    checks["A2"] = a2
    path.checks = checks
    return path


def _h_coords(T: Triangulation, h):
    """Relation-basis coordinates of ``h``."""
    B = T.config.relation_basis
    cols = [[b[j] for b in B] for j in range(T.config.n)]
    sol = solve_rational(cols, list(h))
    return sol
