"""Operator-valued Gamma series and their GKZ residuals.

A series is summed sector by sector.  On the sector of a Box element ``v``
the term of ``l`` is

    prod_j z_j^{l_j + gamma_j + N_j} / Gamma(l_j + gamma_j + N_j + 1)

applied to a start vector, where the ``N_j`` are commuting nilpotent
operators.  Each univariate factor is expanded as a Taylor polynomial in
``N_j`` whose coefficients combine powers of ``log z_j`` with Taylor
coefficients of ``1/Gamma``.  The same engine serves the K-ring, the
Stanley-Reisner quotient and the leading-term module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
import scipy.special

from .ktheory import KRing, nilpotency_order
from .lattice_core import RationalCone, dot, inverse, solve_integer
from .secondary_geometry import (DomainSpec, build_series_cones, domain_contains, domain_for,
                                 lattice_norm, to_ambient)
from .sr_ring import (SRQuotient, mbeta_quotient, multiply_monomials, small_representation)
from .triangulation import BoxElement, Circuit, Triangulation, essential_cones


class OutsideDomain(ValueError):
    pass


class TailBoundExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# reciprocal Gamma

def _series_mul(a, b, k):
    return [sum(a[i] * b[m - i] for i in range(m + 1)) for m in range(k)]


def _series_exp(a, k):
    """Coefficients of ``exp(sum a_i u^i)`` up to ``u^{k-1}``."""
    out = [mpmath.exp(a[0])] + [mpmath.mpf(0)] * (k - 1)
    # e' = a' e, so m e_m = sum_{i>=1} i a_i e_{m-i}
    for m in range(1, k):
        out[m] = sum(i * a[i] * out[m - i] for i in range(1, m + 1)) / m
    return out


def reciprocal_gamma_taylor(base, order: int, dps: int = 30) -> List[complex]:
    """Taylor coefficients of ``u -> 1/Gamma(base + u + 1)`` at ``u = 0``.

    Uses the polygamma expansion of ``log Gamma``; left of ``Re = -1/2`` the
    reflection ``1/Gamma(x) = Gamma(1 - x) sin(pi x) / pi`` keeps the
    zeros at the negative integers exact.
    """
    if order <= 0:
        return []
    with mpmath.workdps(dps):
        x = mpmath.mpc(complex(base)) + 1
        if mpmath.re(x) >= 0.5:
            a = [-mpmath.loggamma(x)]
            a += [-mpmath.polygamma(k - 1, x) / mpmath.factorial(k) for k in range(1, order)]
            c = _series_exp(a, order)
        else:
            y = 1 - x
            g = [mpmath.loggamma(y)]
            g += [(-1) ** k * mpmath.polygamma(k - 1, y) / mpmath.factorial(k) for k in range(1, order)]
            G = _series_exp(g, order)
            if mpmath.im(x) == 0 and mpmath.re(x) == int(mpmath.re(x)):
                # exact at the zeros: sin(pi x + k pi/2) = (-1)^x sin(k pi/2)
                sgn = (-1) ** int(mpmath.re(x))
                S = [mpmath.pi ** (k - 1) * sgn * [0, 1, 0, -1][k % 4] / mpmath.factorial(k)
                     for k in range(order)]
            else:
                S = [mpmath.pi ** (k - 1) * mpmath.sin(mpmath.pi * x + k * mpmath.pi / 2) / mpmath.factorial(k)
                     for k in range(order)]
            c = _series_mul(G, S, order)
        return [complex(v) for v in c]


def reciprocal_gamma_jet(base, order: int, dps: int = 30) -> List[complex]:
    """Derivatives ``d^k/ds^k 1/Gamma(s + 1)`` at ``s = base`` for ``k < order``."""
    c = reciprocal_gamma_taylor(base, order, dps)
    return [v * math.factorial(k) for k, v in enumerate(c)]


def rgamma_taylor_batch(s, order: int, radius: float = 0.5, nodes: int = 32) -> np.ndarray:
    """Vectorized Taylor coefficients of ``1/Gamma(s + u + 1)`` in ``u``.

    Cauchy coefficients from a trapezoid rule on a circle of the given
    radius; ``1/Gamma`` is entire, so the only error is aliasing of order
    ``radius^nodes`` times higher coefficients.
    """
    s = np.asarray(s, dtype=complex)
    w = radius * np.exp(2j * np.pi * np.arange(nodes) / nodes)
    vals = scipy.special.rgamma(s[..., None] + 1.0 + w)
    c = np.fft.fft(vals, axis=-1) / nodes
    c = c[..., :order] / radius ** np.arange(order)
    # exact zeros at the poles of Gamma
    x = s + 1
    pole = (x.imag == 0) & (x.real <= 0) & (x.real == np.round(x.real))
    if order and np.any(pole):
        c[..., 0] = np.where(pole, 0.0, c[..., 0])
    return c


# ---------------------------------------------------------------------------
# exponents

@dataclass(frozen=True)
class ExponentChoice:
    """Exponents ``gamma^v`` for every Box element of a triangulation.

    ``branches[v][j]`` is the integer ``gamma_j - q_j`` (the log branch of
    ``y_j``), ``shifts[v]`` the lattice vector subtracted to push the
    support into the series cone.
    """

    T: Triangulation
    beta: Tuple[int, ...]
    gammas: Dict[Tuple[int, ...], Tuple[Fraction, ...]]
    shifts: Dict[Tuple[int, ...], Tuple[int, ...]]
    branches: Dict[Tuple[int, ...], Tuple[int, ...]]

    def gamma(self, v) -> Tuple[Fraction, ...]:
        return self.gammas[tuple(v)]

    def record(self) -> dict:
        return {",".join(map(str, v)): {"gamma": [str(x) for x in g],
                                         "shift": list(self.shifts[v]),
                                         "branch": list(self.branches[v])}
                for v, g in sorted(self.gammas.items())}


def _integral_point(x):
    den = 1
    for a in x:
        den = den * Fraction(a).denominator // math.gcd(den, Fraction(a).denominator)
    return tuple(int(a * den) for a in x)


def _l_coordinates(T: Triangulation, vec, rows):
    """Solve ``sum_i x_i b_i[j] = vec[j]`` for ``j`` in ``rows``."""
    from .lattice_core import solve_rational
    B = T.config.relation_basis
    M = [[b[j] for b in B] for j in rows]
    return solve_rational(M, [Fraction(vec[j]) for j in rows])


def inclusion_shift(T: Triangulation, gamma, family=None, search: int = 200000) -> Tuple[int, ...]:
    """Lattice vector ``b`` with ``S(gamma - b)`` inside the series cone.

    For each maximal cone the element of ``L (x) Q`` agreeing with
    ``gamma`` off the cone is computed; ``-b`` must differ from each of
    them by an element of the cone.  A multiple of an integral interior
    point always works; among the lattice vectors in the box it spans the
    one keeping the support vertices closest to the origin is taken, so
    the leading terms sit at small ``||l||``.  ``search`` caps the box size.
    """
    cfg = T.config
    if cfg.rank_L == 0:
        return tuple([0] * cfg.n)
    fam = family or build_series_cones(T)
    C = fam.total
    g = _integral_point(C.interior_point())
    facets = C.dual().generators
    verts = []
    k = Fraction(0)
    for sigma in T.maximal_cones:
        rows = [j for j in range(cfg.n) if j not in sigma]
        gs = _l_coordinates(T, gamma, rows)
        verts.append(gs)
        for f in facets:
            fg = dot(f, g)
            k = max(k, dot(f, gs) / fg)
    k = math.ceil(k)
    fallback = tuple(k * a for a in g)

    def feasible(c):
        return all(dot(f, c) >= dot(f, gs) for gs in verts for f in facets)

    def cost(c):
        amb = [to_ambient(T, [a - x for a, x in zip(c, gs)]) for gs in verts]
        return (min(sum(abs(x) for x in a) for a in amb), sum(sum(abs(x) for x in a) for a in amb), c)

    B = max([abs(int(x)) for x in fallback] + [1]) + 1
    r = cfg.rank_L
    best = fallback
    if (2 * B + 1) ** r <= search:
        cands = [c for c in product(range(-B, B + 1), repeat=r) if feasible(c)]
        if cands:
            best = min(cands, key=cost)
    return tuple(int(x) for x in to_ambient(T, best))


def choose_gamma(T: Triangulation, beta, v: BoxElement, family=None):
    """Exponent for one sector.

    Returns ``(gamma, b, branch)`` with ``sum gamma_j v_j = beta``,
    ``gamma_j = q_j + branch_j`` and ``b`` the inclusion shift already
    subtracted.
    """
    cfg = T.config
    target = tuple(int(b) - int(x) for b, x in zip(beta, v.v))
    r = small_representation(cfg, target)
    gamma0 = tuple(Fraction(q) + x for q, x in zip(v.q, r))
    b = inclusion_shift(T, gamma0, family)
    gamma = tuple(a - x for a, x in zip(gamma0, b))
    branch = tuple(int(a - q) for a, q in zip(gamma, v.q))
    if cfg.combine(gamma) != tuple(Fraction(x) for x in beta):
        raise AssertionError("exponent does not solve the linear equations")
    return gamma, b, branch


def choose_exponents(T: Triangulation, beta=None) -> ExponentChoice:
    d = T.config.d
    beta = tuple([0] * d) if beta is None else tuple(int(x) for x in beta)
    fam = build_series_cones(T)
    gammas, shifts, branches = {}, {}, {}
    for bx in T.box_elements():
        g, b, br = choose_gamma(T, beta, bx, fam)
        gammas[tuple(bx.v)], shifts[tuple(bx.v)], branches[tuple(bx.v)] = g, b, br
    return ExponentChoice(T, beta, gammas, shifts, branches)


# ---------------------------------------------------------------------------
# supports

def support(l, gamma) -> Tuple[int, ...]:
    """Indices ``j`` with ``l_j + gamma_j`` not a nonnegative integer."""
    out = []
    for j, (a, g) in enumerate(zip(l, gamma)):
        x = Fraction(a) + Fraction(g)
        if x.denominator != 1 or x < 0:
            out.append(j)
    return tuple(out)


def witness_cone(cones, supp) -> Optional[Tuple[int, ...]]:
    S = set(supp)
    for c in cones:
        if S <= set(c):
            return c
    return None


@lru_cache(maxsize=256)
def _ball(basis: Tuple[Tuple[int, ...], ...], bound: int, n: int) -> Tuple[Tuple[int, ...], ...]:
    """Lattice points ``l`` of ``L`` with ``||l|| <= bound``, sorted by norm."""
    r = len(basis)
    if r == 0:
        return (tuple([0] * n),)
    # coefficient bound from a left inverse of the basis matrix
    G = [[sum(a * b for a, b in zip(bi, bj)) for bj in basis] for bi in basis]
    Gi = inverse(G)
    P = [[sum(Gi[i][k] * basis[k][j] for k in range(r)) for j in range(n)] for i in range(r)]
    lim = [math.floor(2 * bound * max(abs(x) for x in row)) for row in P]
    out = []
    for c in product(*[range(-m, m + 1) for m in lim]):
        l = tuple(sum(ci * b[j] for ci, b in zip(c, basis)) for j in range(n))
        if lattice_norm(l) <= bound:
            out.append(l)
    out.sort(key=lambda l: (lattice_norm(l), l))
    return tuple(out)


def lattice_ball(T: Triangulation, bound: int):
    return _ball(tuple(T.config.relation_basis), int(bound), T.config.n)


@dataclass(frozen=True)
class SupportEnumerator:
    T: Triangulation
    gamma: Tuple[Fraction, ...]
    bound: int
    essential_only: bool
    terms: Tuple[Tuple[int, ...], ...]
    witnesses: Tuple[Tuple[int, ...], ...]

    def __len__(self):
        return len(self.terms)

    def as_array(self) -> np.ndarray:
        return np.array(self.terms, dtype=float).reshape(len(self.terms), self.T.config.n)


def admissible_cones(T: Triangulation, essential_only: bool = False, circuit: Optional[Circuit] = None):
    if not essential_only:
        return T.maximal_cones
    if circuit is None:
        raise ValueError("essential supports need a circuit")
    return essential_cones(T, circuit).cones


def enumerate_support(T: Triangulation, gamma, bound: int, essential_only: bool = False,
                      circuit: Optional[Circuit] = None) -> SupportEnumerator:
    """Lattice points of norm at most ``bound`` in the support set of ``gamma``."""
    return _enumerate(T, tuple(Fraction(g) for g in gamma), int(bound), bool(essential_only), circuit)


@lru_cache(maxsize=1024)
def _enumerate(T, gamma, bound, essential_only, circuit):
    cones = admissible_cones(T, essential_only, circuit)
    terms, wit = [], []
    for l in lattice_ball(T, bound):
        c = witness_cone(cones, support(l, gamma))
        if c is not None:
            terms.append(l)
            wit.append(c)
    return SupportEnumerator(T, gamma, bound, essential_only, tuple(terms), tuple(wit))


def support_in_series_cone(T: Triangulation, enum: SupportEnumerator, family=None) -> bool:
    """Whether every enumerated support element lies in ``C_Sigma``."""
    if T.config.rank_L == 0:
        return True
    fam = family or build_series_cones(T)
    facets = fam.total.dual().generators
    rows = list(range(T.config.n))
    for l in enum.terms:
        x = _l_coordinates(T, l, rows)
        if any(dot(f, x) < 0 for f in facets):
            return False
    return True


# ---------------------------------------------------------------------------
# series engine

@dataclass
class TruncationPolicy:
    """Truncation radius and tail-bound bookkeeping.

    The tail bound is ``A * sum_{excluded} (4n)^{||l||} exp(sum l_j log|z_j|)``
    where ``A`` is ``safety`` times the largest ratio of a term to its
    weight, over the retained terms and the next ``probe`` norm shells;
    the excluded sum runs to ``tail_factor * bound`` and is closed with a
    geometric remainder.
    """

    bound: int = 12
    tolerance: Optional[float] = None
    safety: float = 10.0
    tail_factor: int = 3
    probe: int = 6

    def scaled(self, factor: float) -> "TruncationPolicy":
        return TruncationPolicy(int(math.ceil(self.bound * factor)), self.tolerance, self.safety,
                                self.tail_factor, self.probe)


def _weights(T: Triangulation, terms, logabs) -> np.ndarray:
    n = T.config.n
    if not len(terms):
        return np.zeros(0)
    L = np.array(terms, dtype=float).reshape(len(terms), n)
    norms = np.array([lattice_norm(l) for l in terms], dtype=float)
    return np.exp(norms * math.log(4 * n) + L @ logabs)


def tail_weight(T: Triangulation, gamma, bound: int, z, essential_only=False, circuit=None,
                factor: int = 3) -> float:
    """``sum (4n)^{||l||} |z^l|`` over support elements with ``bound < ||l||``."""
    if T.config.rank_L == 0:
        return 0.0
    logabs = np.log(np.abs(np.asarray(z, dtype=complex)))
    big = enumerate_support(T, gamma, factor * bound + 2, essential_only, circuit)
    shells: Dict[int, float] = {}
    w = _weights(T, big.terms, logabs)
    for l, x in zip(big.terms, w):
        k = lattice_norm(l)
        if k > bound:
            shells[k] = shells.get(k, 0.0) + x
    total = sum(shells.values())
    top = factor * bound + 2
    seq = [shells.get(k, 0.0) for k in range(bound + 1, top + 1)]
    if any(seq):
        total += _geometric_remainder(seq)
    return total


def _geometric_remainder(seq, max_lag: int = 4, window: int = 6) -> float:
    """Closing term for a shell sequence that decays geometrically at some lag.

    Shell sums can alternate (parity classes of the norm), so the ratio is
    taken between shells ``p`` apart for the lag ``p <= max_lag`` giving the
    smallest rate; the remainder is the sum of the last ``p`` shells times
    ``r / (1 - r)``.
    """
    best = math.inf
    for p in range(1, max_lag + 1):
        if len(seq) < p + 1:
            break
        worst = 0.0
        for k in range(max(p, len(seq) - window), len(seq)):
            a, b = seq[k - p], seq[k]
            if b == 0:
                continue
            if a == 0:
                worst = math.inf
                break
            worst = max(worst, b / a)
        if worst < 1:
            best = min(best, sum(seq[-p:]) * worst / (1 - worst))
    return best


def _precompute_vectors(N, start, orders):
    """``prod_j N_j^{K_j} start`` for multi-indices ``K_j < orders[j]``."""
    out = {}
    n = len(N)
    for K in product(*[range(o) for o in orders]):
        v = start.copy()
        for j in range(n):
            for _ in range(K[j]):
                v = N[j] @ v
        if np.any(np.abs(v) > 0):
            out[K] = v
    return out


def _factor_jets(s, logz, order, absorbed=False):
    """Taylor coefficients in ``x`` of ``z^{s+x}/Gamma(s+x+1)``.

    ``s`` has any shape; the result has shape ``s.shape + (order,)``.  With
    ``absorbed`` the Gamma factor is divided by ``x`` first (its value at
    ``x = 0`` is zero).
    """
    extra = 1 if absorbed else 0
    rg = rgamma_taylor_batch(s, order + extra)[..., extra:]
    zs = np.exp(s * logz)
    powers = np.array([logz ** k / math.factorial(k) for k in range(order)])
    out = np.zeros(s.shape + (order,), dtype=complex)
    for m in range(order):
        acc = 0
        for k in range(m + 1):
            acc = acc + powers[k] * rg[..., m - k]
        out[..., m] = acc
    return out * zs[..., None]


def sector_terms(N, start, gamma, terms, z, shift=None, absorbed=None, logz=None):
    """Per-term vectors of one sector.

    Parameters
    ----------
    N : list of ``n`` commuting nilpotent matrices
    start : start vector
    gamma : exponent (numbers)
    terms : array ``(T, n)`` of lattice points
    z : point, with ``log z`` on the principal branch unless ``logz`` given
    shift : optional complex array ``(P, n)``; one evaluation per row
    absorbed : optional boolean array ``(T, n)`` marking Gamma factors
        already divided out of the start vectors
    logz : optional explicit logarithms of the coordinates

    Returns
    -------
    array ``(P, T, m)`` (``P = 1`` without ``shift``)
    """
    n = len(N)
    terms = np.asarray(terms, dtype=float).reshape(-1, n)
    if logz is None:
        logz = np.log(np.asarray(z, dtype=complex))
    logz = np.asarray(logz, dtype=complex)
    g = np.array([float(x) for x in gamma])
    base = terms + g
    if shift is None:
        shift = np.zeros((1, n), dtype=complex)
    s = shift[:, None, :] + base[None, :, :]
    orders = [nilpotency_order(M) if M.size else 1 for M in N]
    vecs = _precompute_vectors(N, start, orders)
    P, Tn = s.shape[0], s.shape[1]
    m = start.shape[0]
    jets = []
    for j in range(n):
        if absorbed is not None and np.any(absorbed[:, j]):
            J0 = _factor_jets(s[..., j], logz[j], orders[j])
            J1 = _factor_jets(s[..., j], logz[j], orders[j], absorbed=True)
            mask = absorbed[None, :, j, None]
            jets.append(np.where(mask, J1, J0))
        else:
            jets.append(_factor_jets(s[..., j], logz[j], orders[j]))
    out = np.zeros((P, Tn, m), dtype=complex)
    for K, v in vecs.items():
        c = np.ones((P, Tn), dtype=complex)
        for j in range(n):
            c = c * jets[j][..., K[j]]
        out += c[..., None] * v
    return out


@dataclass
class SeriesValue:
    vector: np.ndarray
    tail_bound: float
    terms: int
    per_sector: Dict[Tuple[int, ...], dict] = field(default_factory=dict)


def _check_domain(T, z, domain=None):
    U = domain or domain_for(T)
    if not domain_contains(U, z):
        raise OutsideDomain("evaluation point is outside the convergence domain")
    return U


def _tail(T, gamma, policy, z, vecs, terms, essential_only=False, circuit=None, probe=None):
    """Tail bound ``A * tail_weight`` for one sector.

    ``probe``, when given, maps an array of lattice points to their term
    vectors; the shells just past the bound are then included in the
    ratio defining ``A``, since the ratio of a term to its weight need not
    be largest among the retained terms.
    """
    if T.config.rank_L == 0 or not len(terms):
        return 0.0
    logabs = np.log(np.abs(np.asarray(z, dtype=complex)))
    w = _weights(T, terms, logabs)
    mags = np.max(np.abs(vecs), axis=-1) if vecs.ndim > 1 else np.abs(vecs)
    ratio = np.max(mags / w)
    if probe is not None and policy.probe > 0:
        band = enumerate_support(T, gamma, policy.bound + policy.probe, essential_only, circuit)
        extra = [l for l in band.terms if lattice_norm(l) > policy.bound]
        if extra:
            pv = probe(np.array(extra, dtype=float).reshape(len(extra), T.config.n))
            pm = np.max(np.abs(pv), axis=-1) if pv.ndim > 1 else np.abs(pv)
            ratio = max(ratio, float(np.max(pm / _weights(T, extra, logabs))))
    A = policy.safety * max(ratio, 1e-300)
    tw = tail_weight(T, gamma, policy.bound, z, essential_only, circuit, policy.tail_factor)
    return A * tw


def _policy(policy):
    return policy or TruncationPolicy()


def _finish(value: SeriesValue, policy: TruncationPolicy) -> SeriesValue:
    if policy.tolerance is not None and value.tail_bound > policy.tolerance:
        raise TailBoundExceeded(f"tail bound {value.tail_bound:.3e} above {policy.tolerance:.3e}")
    return value


def evaluate_Xi(K: KRing, choice: ExponentChoice, z, policy: Optional[TruncationPolicy] = None,
                check_domain: bool = True, domain: Optional[DomainSpec] = None) -> SeriesValue:
    """K-ring valued Gamma series ``Xi(z, R)(1)`` as a coordinate vector."""
    policy = _policy(policy)
    T = choice.T
    if check_domain:
        _check_domain(T, z, domain)
    out = np.zeros(K.dim, dtype=complex)
    tail = 0.0
    count = 0
    info = {}
    for s in K.sectors:
        v = tuple(s.box.v)
        gamma = choice.gamma(v)
        enum = enumerate_support(T, gamma, policy.bound)
        sl = s.slice()
        N = [M[sl, sl] for M in K.N]
        start = np.zeros(s.dim, dtype=complex)
        start[0] = 1.0
        vecs = sector_terms(N, start, gamma, enum.as_array(), z)[0]
        out[sl] = vecs[::-1].sum(axis=0)
        tb = _tail(T, gamma, policy, z, vecs, enum.terms,
                   probe=lambda arr, N=N, start=start, gamma=gamma: sector_terms(N, start, gamma, arr, z)[0])
        tail += tb
        count += len(enum)
        info[v] = {"terms": len(enum), "tail_bound": tb}
    return _finish(SeriesValue(out, tail, count, info), policy)


def evaluate_Psi(S: SRQuotient, choice: ExponentChoice, z, policy: Optional[TruncationPolicy] = None,
                 check_domain: bool = True, domain: Optional[DomainSpec] = None) -> SeriesValue:
    """Stanley-Reisner valued series ``Psi(z)`` in the quotient basis."""
    policy = _policy(policy)
    T = choice.T
    if check_domain:
        _check_domain(T, z, domain)
    out = np.zeros(S.dim, dtype=complex)
    tail = 0.0
    count = 0
    N = [np.asarray(M, dtype=complex) for M in S.D]
    info = {}
    for bx in T.box_elements():
        v = tuple(bx.v)
        gamma = choice.gamma(v)
        enum = enumerate_support(T, gamma, policy.bound)
        start = S.reduce_monomial(v).astype(complex)
        vecs = sector_terms(N, start, gamma, enum.as_array(), z)[0]
        out += vecs[::-1].sum(axis=0)
        tb = _tail(T, gamma, policy, z, vecs, enum.terms,
                   probe=lambda arr, start=start, gamma=gamma: sector_terms(N, start, gamma, arr, z)[0])
        tail += tb
        count += len(enum)
        info[v] = {"terms": len(enum), "tail_bound": tb}
    return _finish(SeriesValue(out, tail, count, info), policy)


def ms_map(K: KRing, choice: ExponentChoice, f, z, policy: Optional[TruncationPolicy] = None) -> complex:
    """Scalar solution ``f(Xi(z, R)(1))`` for a functional given as a vector."""
    f = np.asarray(f, dtype=complex)
    if not np.any(f):
        return 0.0 + 0j
    return complex(f @ evaluate_Xi(K, choice, z, policy).vector)


# ---------------------------------------------------------------------------
# leading-term module

@dataclass
class LeadingModuleOperators:
    """``M(beta)/Z M(beta)`` with multiplication by the ray monomials."""

    T: Triangulation
    beta: Tuple[int, ...]
    basis: List[Tuple[int, ...]]
    degrees: List[int]
    D: List[np.ndarray]
    normal: Dict[int, Dict]

    @property
    def dim(self) -> int:
        return len(self.basis)

    def reduce(self, w) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=complex)
        if w is None:
            return vec
        k = self.T.config.degree(w)
        if k not in self.normal:
            return vec
        if tuple(w) not in self.normal[k]:
            raise ValueError(f"monomial {w} is not in the leading-term module")
        for b, c in self.normal[k][tuple(w)].items():
            vec[self.basis.index(b)] += float(c)
        return vec


def leading_module(T: Triangulation, beta) -> LeadingModuleOperators:
    mod = mbeta_quotient(T, beta)
    flat = mod.flat_basis()
    basis = [w for _, w in flat]
    degs = [k for k, _ in flat]
    normal = mod.quotient.normal
    rays = set(T.rays())
    pts = T.config.points
    D = []
    for j in range(T.config.n):
        M = np.zeros((len(basis), len(basis)), dtype=complex)
        if j in rays:
            for col, w in enumerate(basis):
                p = multiply_monomials(T, pts[j], w)
                if p is None:
                    continue
                k = T.config.degree(p)
                if k not in normal:
                    continue
                for b, c in normal[k][p].items():
                    M[basis.index(b), col] += float(c)
        D.append(M)
    return LeadingModuleOperators(T, tuple(int(x) for x in beta), basis, degs, D, normal)


def evaluate_leading(M: LeadingModuleOperators, choice: ExponentChoice, z,
                     policy: Optional[TruncationPolicy] = None, check_domain: bool = True) -> SeriesValue:
    """Series ``Psi(z)`` with values in ``M(beta)/Z M(beta)``.

    For each term the factors ``1/Gamma(-k + D_j + 1)`` with ``k > 0`` are
    written as ``D_j`` times an analytic function; the start monomial
    ``x^v prod x^{v_j}`` over those ``j`` is a generator of the module.
    """
    policy = _policy(policy)
    T = choice.T
    if check_domain:
        _check_domain(T, z)
    if tuple(choice.beta) != tuple(M.beta):
        raise ValueError("module and exponents use different beta")
    n = T.config.n
    pts = T.config.points
    out = np.zeros(M.dim, dtype=complex)
    tail, count = 0.0, 0
    for bx in T.box_elements():
        v = tuple(bx.v)
        gamma = choice.gamma(v)
        enum = enumerate_support(T, gamma, policy.bound)
        groups: Dict[Tuple[int, ...], List[int]] = {}
        for idx, l in enumerate(enum.terms):
            P = tuple(j for j in range(n) if (Fraction(l[j]) + gamma[j]).denominator == 1
                      and Fraction(l[j]) + gamma[j] < 0)
            groups.setdefault(P, []).append(idx)
        allvecs = np.zeros((len(enum), M.dim), dtype=complex)
        for P, idxs in sorted(groups.items()):
            w = v
            for j in P:
                w = multiply_monomials(T, pts[j], w) if w is not None else None
            start = M.reduce(w)
            if not np.any(start):
                continue
            absorbed = np.zeros((len(idxs), n), dtype=bool)
            absorbed[:, list(P)] = True
            terms = np.array([enum.terms[i] for i in idxs], dtype=float).reshape(len(idxs), n)
            vecs = sector_terms(M.D, start, gamma, terms, z, absorbed=absorbed)[0]
            allvecs[idxs] = vecs
        out += allvecs[::-1].sum(axis=0)
        tail += _tail(T, gamma, policy, z, allvecs, enum.terms)
        count += len(enum)
    return _finish(SeriesValue(out, tail, count), policy)


# ---------------------------------------------------------------------------
# support vanishing

def term_operator(N, gamma, l, z=None) -> np.ndarray:
    """``prod_j 1/Gamma(l_j + gamma_j + N_j + 1)`` as a matrix on one sector."""
    m = N[0].shape[0]
    out = np.eye(m, dtype=complex)
    for j, Nj in enumerate(N):
        k = nilpotency_order(Nj)
        c = reciprocal_gamma_taylor(float(l[j] + gamma[j]), k)
        P = np.zeros((m, m), dtype=complex)
        Q = np.eye(m, dtype=complex)
        for a in range(k):
            P += c[a] * Q
            Q = Q @ Nj
        out = out @ P
    return out


# ---------------------------------------------------------------------------
# GKZ residuals

@dataclass
class TermList:
    """Finite sum ``sum c * z^mu * prod_j log(z_j)^{a_j}`` with vector ``c``."""

    n: int
    terms: Dict[Tuple[Tuple[Fraction, ...], Tuple[int, ...]], np.ndarray]

    def evaluate(self, z) -> np.ndarray:
        logz = np.log(np.asarray(z, dtype=complex))
        acc = None
        for (mu, a), c in self.terms.items():
            val = np.exp(sum(float(m) * lz for m, lz in zip(mu, logz)))
            for j, e in enumerate(a):
                if e:
                    val = val * logz[j] ** e
            acc = c * val if acc is None else acc + c * val
        return acc

    def magnitude(self, z) -> float:
        """``sum |c| |z^mu| prod |log z_j|^{a_j}``: the scale for round-off."""
        logz = np.log(np.asarray(z, dtype=complex))
        acc = 0.0
        for (mu, a), c in self.terms.items():
            val = math.exp(sum(float(m) * lz.real for m, lz in zip(mu, logz)))
            for j, e in enumerate(a):
                if e:
                    val *= abs(logz[j]) ** e
            acc += float(np.max(np.abs(c), initial=0)) * val
        return acc

    def derivative(self, j: int) -> "TermList":
        """Closed-form ``d/dz_j``: ``z^mu log^a -> z^{mu-1}(mu log^a + a log^{a-1})``."""
        out: Dict = {}
        for (mu, a), c in self.terms.items():
            nmu = tuple(m - 1 if i == j else m for i, m in enumerate(mu))
            if mu[j] != 0:
                key = (nmu, a)
                out[key] = out.get(key, 0) + c * float(mu[j])
            if a[j]:
                na = tuple(e - 1 if i == j else e for i, e in enumerate(a))
                key = (nmu, na)
                out[key] = out.get(key, 0) + c * a[j]
        return TermList(self.n, out)

    def euler(self, j: int) -> "TermList":
        """``z_j d/dz_j`` applied termwise."""
        out: Dict = {}
        for (mu, a), c in self.terms.items():
            if mu[j] != 0:
                out[(mu, a)] = out.get((mu, a), 0) + c * float(mu[j])
            if a[j]:
                na = tuple(e - 1 if i == j else e for i, e in enumerate(a))
                out[(mu, na)] = out.get((mu, na), 0) + c * a[j]
        return TermList(self.n, out)

    def scale(self, x) -> "TermList":
        return TermList(self.n, {k: c * x for k, c in self.terms.items()})

    def __add__(self, other: "TermList") -> "TermList":
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out.get(k, 0) + c
        return TermList(self.n, out)


def series_term_lists(K: KRing, choice: ExponentChoice, bound: int):
    """Per-sector, per-lattice-point term lists of ``Xi(z, R)(1)``.

    ``z^{N}`` is expanded as ``sum_a N^a log^a z / a!`` so every
    coefficient is a vector independent of ``z``.

    Returns
    -------
    list of ``(sector index, l, TermList)``
    """
    T = choice.T
    n = T.config.n
    out = []
    for k, s in enumerate(K.sectors):
        v = tuple(s.box.v)
        gamma = choice.gamma(v)
        enum = enumerate_support(T, gamma, bound)
        sl = s.slice()
        N = [M[sl, sl] for M in K.N]
        orders = [nilpotency_order(M) for M in N]
        for l in enum.terms:
            G = term_operator(N, gamma, l)
            e = np.zeros(s.dim, dtype=complex)
            e[0] = 1.0
            base = G @ e
            mu = tuple(Fraction(a) + g for a, g in zip(l, gamma))
            terms = {}
            for a in product(*[range(o) for o in orders]):
                vec = base.copy()
                den = 1
                for j, aj in enumerate(a):
                    for _ in range(aj):
                        vec = N[j] @ vec
                    den *= math.factorial(aj)
                if not np.any(np.abs(vec) > 0):
                    continue
                full = np.zeros(K.dim, dtype=complex)
                full[sl] = vec / den
                terms[(mu, a)] = full
            out.append((k, l, TermList(n, terms)))
    return out


def series_terms(K: KRing, choice: ExponentChoice, bound: int) -> TermList:
    """Term list of the truncated ``Xi(z, R)(1)``."""
    acc = TermList(choice.T.config.n, {})
    for _, _, F in series_term_lists(K, choice, bound):
        acc = acc + F
    return acc


def _apply_monomial_derivative(F: TermList, powers) -> TermList:
    for j, e in enumerate(powers):
        for _ in range(e):
            F = F.derivative(j)
    return F


def box_operator(F: TermList, b) -> TermList:
    """``(d^{b_+} - d^{b_-}) F`` as a term list (coefficients combined)."""
    bp = [max(x, 0) for x in b]
    bm = [max(-x, 0) for x in b]
    return _apply_monomial_derivative(F, bp) + _apply_monomial_derivative(F, bm).scale(-1.0)


def euler_operator(F: TermList, points, beta, i: int) -> TermList:
    """``(sum_j v_{j,i} z_j d/dz_j - beta_i) F``."""
    E = F.scale(-float(beta[i]))
    for j, v in enumerate(points):
        if v[i]:
            E = E + F.euler(j).scale(v[i])
    return E


def _value(F: TermList, z) -> float:
    val = F.evaluate(z)
    if val is None:
        return 0.0
    return float(np.max(np.abs(np.atleast_1d(val))))


EPS = float(np.finfo(float).eps)
# cancellation allowance per operator application, in units of eps * magnitude
ROUNDOFF_FACTOR = 16.0


def gkz_residual(config, beta, solution: TermList, z) -> dict:
    """Box and Euler operators applied exactly to a term list, evaluated at ``z``.

    Coefficients of equal monomials are combined before evaluation, so
    what is evaluated is only the truncation boundary.  Box residuals are
    reported raw and multiplied by ``z^{b_+}`` (the scale of the series).
    """
    z = np.asarray(z, dtype=complex)
    box = []
    roundoff = 0.0
    for b in config.relation_basis:
        bp = [max(x, 0) for x in b]
        bm = [max(-x, 0) for x in b]
        raw = _value(box_operator(solution, b), z)
        scale = float(np.prod(np.abs(z) ** np.array(bp, dtype=float)))
        box.append({"b": list(b), "raw": raw, "normalized": raw * scale})
        mag = sum(_apply_monomial_derivative(solution, pw).magnitude(z) for pw in (bp, bm))
        roundoff = max(roundoff, ROUNDOFF_FACTOR * EPS * mag * scale)
    euler = []
    for i in range(config.d):
        euler.append(_value(euler_operator(solution, config.points, beta, i), z))
        mag = abs(float(beta[i])) * solution.magnitude(z)
        mag += sum(abs(v[i]) * solution.euler(j).magnitude(z) for j, v in enumerate(config.points) if v[i])
        roundoff = max(roundoff, ROUNDOFF_FACTOR * EPS * mag)
    return {"box": box, "euler": euler,
            "max_box": max([x["normalized"] for x in box] + [0.0]),
            "max_euler": max(euler + [0.0]), "roundoff": roundoff}


def xi_residuals(K: KRing, choice: ExponentChoice, z, policy: Optional[TruncationPolicy] = None) -> dict:
    """Residuals of the truncated ``Xi`` with a matching bound.

    The full series is annihilated, so the residual of the truncation is
    the operator applied to the tail.  The bound is built like the series
    tail bound: ``A`` is ``safety`` times the largest ratio of a
    normalized differentiated term to its weight.  A floating-point
    round-off allowance (``ROUNDOFF_FACTOR * eps`` times the magnitude of
    the operator pieces) is added, since exact cancellation of the
    retained terms only holds in exact arithmetic.
    """
    policy = _policy(policy)
    T = choice.T
    cfg = T.config
    z = np.asarray(z, dtype=complex)
    lists = series_term_lists(K, choice, policy.bound)
    full = TermList(cfg.n, {})
    for _, _, F in lists:
        full = full + F
    res = gkz_residual(cfg, choice.beta, full, z)
    logabs = np.log(np.abs(z))
    bound = 0.0
    for k, s in enumerate(K.sectors):
        gamma = choice.gamma(tuple(s.box.v))
        mine = [(l, F) for kk, l, F in lists if kk == k]
        if not mine or cfg.rank_L == 0:
            continue
        ratios = []
        for l, F in mine:
            wl = _weights(T, [l], logabs)[0]
            for b in cfg.relation_basis:
                bp = [max(x, 0) for x in b]
                bm = [max(-x, 0) for x in b]
                scale = float(np.prod(np.abs(z) ** np.array(bp, dtype=float)))
                for pw in (bp, bm):
                    ratios.append(_value(_apply_monomial_derivative(F, pw), z) * scale / wl)
        A = policy.safety * max(ratios + [1e-300])
        bound += 2 * A * tail_weight(T, gamma, policy.bound, z, factor=policy.tail_factor)
    res["truncation_bound"] = bound
    res["bound"] = bound + res["roundoff"]
    return res
