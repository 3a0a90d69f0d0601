"""Mellin-Barnes continuation across a flip and the Fourier-Mukai map.

Both sides of the commuting diagram are computed on the K-ring of the
``+`` side.  The continuation uses the closed form with contour integrals
around roots of unity; the Fourier-Mukai map is assembled as a matrix from
its values on monomial classes, and an independent contour-free route
through the pushforward identity for the blowup serves as an oracle.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import combinations, product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .gamma_series import (ExponentChoice, SupportEnumerator, TruncationPolicy, choose_exponents,
                           enumerate_support, evaluate_Xi, lattice_ball, sector_terms, support,
                           witness_cone, _tail)
from .ktheory import KRing, build_kring, root_of_unity
from .secondary_geometry import domain_contains, domain_for, lattice_norm
from .triangulation import (BoxElement, Circuit, NotAdjacent, Triangulation, essential_cones,
                            find_circuit, hat_fan)

log = logging.getLogger(__name__)

TWO_PI_I = 2j * np.pi


class QuadratureNotConverged(RuntimeError):
    pass


class PhiTermNotAnnihilated(RuntimeError):
    pass


class PoleHit(ZeroDivisionError):
    pass


def _frac_mod1(x) -> Fraction:
    x = Fraction(x)
    return x - math.floor(x)


def _centered(theta: Fraction) -> Fraction:
    """Representative of ``theta mod 1`` in ``(-1/2, 1/2]``."""
    t = _frac_mod1(theta)
    return t - 1 if t > Fraction(1, 2) else t


# ---------------------------------------------------------------------------
# flip data

@dataclass
class SectorRoots:
    """Root data of one Box element of the ``+`` side.

    ``thetas`` lists the exact angles ``theta_t`` (``t = exp(2 pi i theta)``)
    of ``I(y^v)``; ``targets[theta]`` is the matching Box element of the
    ``-`` side (``None`` when the angle tuple is not a Box element there).
    """

    box: BoxElement
    essential: bool
    thetas: Tuple[Fraction, ...]
    targets: Dict[Fraction, Optional[BoxElement]]

    @property
    def has_one(self) -> bool:
        return Fraction(0) in self.thetas


@dataclass
class FlipContext:
    T_plus: Triangulation
    T_minus: Triangulation
    circuit: Circuit
    ess_plus: Tuple[Tuple[int, ...], ...]
    ess_minus: Tuple[Tuple[int, ...], ...]
    roots: Dict[Tuple[int, ...], SectorRoots]
    global_thetas: Tuple[Fraction, ...]
    order: int
    checks: Dict[str, object] = field(default_factory=dict)

    @property
    def h(self) -> Tuple[int, ...]:
        return self.circuit.h

    @property
    def n(self) -> int:
        return self.T_plus.config.n

    @cached_property
    def K_plus(self) -> KRing:
        return build_kring(self.T_plus)

    @cached_property
    def K_minus(self) -> KRing:
        return build_kring(self.T_minus)

    @cached_property
    def hat(self):
        fan, vhat = hat_fan(self.T_plus, self.T_minus, self.circuit)
        return fan, vhat

    @cached_property
    def K_hat(self) -> KRing:
        return build_kring(self.hat[0])

    def gamma_t(self, gamma, theta) -> Tuple[Fraction, ...]:
        """``gamma + h theta``."""
        return tuple(Fraction(g) + hj * Fraction(theta) for g, hj in zip(gamma, self.h))


def _in_essential_box(fan_cones, ess, box: BoxElement) -> bool:
    S = set(box.sigma_v)
    return any(S <= set(c) for c in ess)


def root_angles(circuit: Circuit, q) -> Tuple[Fraction, ...]:
    """Exact angles of ``I(y)``: ``q_j + h_j theta`` integral for some ``j`` in ``I_-``."""
    out = set()
    for j in circuit.I_minus:
        hj = circuit.h[j]
        for k in range(abs(hj)):
            out.add(_frac_mod1((Fraction(k) - Fraction(q[j])) / hj))
    return tuple(sorted(out, key=lambda t: (abs(_centered(t)), _centered(t))))


def build_flip_context(T_plus: Triangulation, T_minus: Triangulation) -> FlipContext:
    """Circuit, essential cones, root sets and sector correspondence.

    Raises
    ------
    NotAdjacent
    """
    circ = find_circuit(T_plus, T_minus)
    ep = essential_cones(T_plus, circ)
    em = essential_cones(T_minus, circ)
    if ep.side != 1 or em.side != -1:
        raise NotAdjacent("essential cones are not on the expected sides")
    box_minus = {tuple(b.q): b for b in T_minus.box_elements()}
    roots = {}
    allth = {Fraction(0)}
    lcm = 1
    for b in T_plus.box_elements():
        ess = _in_essential_box(T_plus.maximal_cones, ep.cones, b)
        th = root_angles(circ, b.q)
        targets = {}
        for t in th:
            q = tuple(_frac_mod1(Fraction(x) + hj * t) for x, hj in zip(b.q, circ.h))
            targets[t] = box_minus.get(q)
            lcm = lcm * t.denominator // math.gcd(lcm, t.denominator)
        roots[tuple(b.v)] = SectorRoots(b, ess, th, targets)
        allth |= set(th)
    gl = tuple(sorted(allth, key=lambda t: (abs(_centered(t)), _centered(t))))
    ctx = FlipContext(T_plus, T_minus, circ, ep.cones, em.cones, roots, gl, lcm)
    ctx.checks["box_correspondence"] = check_box_correspondence(ctx)
    if not all(ctx.checks["box_correspondence"].values()):
        raise NotAdjacent(f"sector correspondence fails: {ctx.checks['box_correspondence']}")
    return ctx


def check_box_correspondence(ctx: FlipContext) -> Dict[str, bool]:
    """Exchange of twisted sectors under the modification (parts i and ii)."""
    Bp = ctx.T_plus.box_elements()
    Bm = ctx.T_minus.box_elements()
    une_p = {(tuple(b.v), b.sigma_v, b.q) for b in Bp if not _in_essential_box(None, ctx.ess_plus, b)}
    une_m = {(tuple(b.v), b.sigma_v, b.q) for b in Bm if not _in_essential_box(None, ctx.ess_minus, b)}
    ess_m = {b.q for b in Bm if _in_essential_box(None, ctx.ess_minus, b)}
    hit = set()
    ok_targets = True
    for sr in ctx.roots.values():
        if not sr.essential:
            continue
        for t in sr.thetas:
            tgt = sr.targets[t]
            if tgt is None or tgt.q not in ess_m:
                ok_targets = False
            else:
                hit.add(tgt.q)
    return {"unessential_unchanged": une_p == une_m, "targets_essential": ok_targets,
            "essential_covered": hit == ess_m}


# ---------------------------------------------------------------------------
# piecewise-linear data

def m_plus(ctx: FlipContext, l, gamma) -> int:
    """Least ``m`` with ``m h_j + l_j + gamma_j`` a nonnegative integer for some ``j`` in ``I_+``."""
    best = None
    for j in ctx.circuit.I_plus:
        c = Fraction(l[j]) + Fraction(gamma[j])
        if c.denominator != 1:
            continue
        m = math.ceil(Fraction(-c, ctx.h[j]))
        best = m if best is None else min(best, m)
    if best is None:
        raise ValueError("no integral coordinate on I_plus")
    return best


def m_minus(ctx: FlipContext, l, gamma, theta=Fraction(0)) -> int:
    """Largest ``m`` with ``m h_j + l_j + gamma_j(t)`` a nonnegative integer for some ``j`` in ``I_-``."""
    g = ctx.gamma_t(gamma, theta)
    best = None
    for j in ctx.circuit.I_minus:
        c = Fraction(l[j]) + g[j]
        if c.denominator != 1:
            continue
        m = math.floor(Fraction(c, -ctx.h[j]))
        best = m if best is None else max(best, m)
    if best is None:
        raise ValueError("no integral coordinate on I_minus")
    return best


# ---------------------------------------------------------------------------
# kernel

def kernel_T(ctx_or_circuit, r, that, sign: float = 1.0):
    """``T(r, t) = 1/(2 pi i (t - 1)) prod_{I_-} (1 - r_j^{-1}) / (1 - r_j^{-1} t^{-h_j})``.

    ``r`` is either a sequence of scalars or of commuting matrices (one
    per vector index; only ``I_-`` entries are used).

    Raises
    ------
    PoleHit
    """
    circ = ctx_or_circuit.circuit if isinstance(ctx_or_circuit, FlipContext) else ctx_or_circuit
    that = complex(that)
    if that == 1:
        raise PoleHit("t = 1")
    pref = sign / (TWO_PI_I * (that - 1))
    if np.ndim(r[circ.I_minus[0]]) == 0:
        out = pref
        for j in circ.I_minus:
            rj = complex(r[j])
            den = 1 - that ** (-circ.h[j]) / rj
            if den == 0:
                raise PoleHit(f"r_{j} t^h_j = 1")
            out *= (1 - 1 / rj) / den
        return out
    m = np.asarray(r[circ.I_minus[0]]).shape[0]
    I = np.eye(m, dtype=complex)
    out = pref * I
    for j in circ.I_minus:
        Rinv = np.linalg.inv(np.asarray(r[j], dtype=complex))
        B = I - that ** (-circ.h[j]) * Rinv
        if np.linalg.cond(B) > 1e12:
            raise PoleHit(f"resolvent for r_{j} is singular")
        out = out @ np.linalg.solve(B, I - Rinv)
    return out


def _kernel_nodes(circ: Circuit, Rinv_blocks, nodes: np.ndarray, sign: float = 1.0) -> np.ndarray:
    """Kernel matrices at many nodes for one sector, shape ``(P, m, m)``."""
    m = Rinv_blocks[circ.I_minus[0]].shape[0]
    I = np.eye(m, dtype=complex)
    out = np.broadcast_to(I, (len(nodes), m, m)).astype(complex)
    out = out * (sign / (TWO_PI_I * (nodes - 1)))[:, None, None]
    for j in circ.I_minus:
        Ri = Rinv_blocks[j]
        B = I[None] - (nodes ** (-circ.h[j]))[:, None, None] * Ri[None]
        X = np.linalg.solve(B, np.broadcast_to(I - Ri, B.shape))
        out = out @ X
    return out


@dataclass
class ContourSet:
    """Counterclockwise circles around ``t = exp(2 pi i theta)``."""

    thetas: Tuple[Fraction, ...]
    radii: Dict[Fraction, float]
    nodes: int = 64

    def center(self, theta) -> complex:
        return root_of_unity(theta)

    def points(self, theta, nodes: Optional[int] = None):
        N = nodes or self.nodes
        c = self.center(theta)
        rho = self.radii[theta]
        e = np.exp(2j * np.pi * (np.arange(N) + 0.5) / N)
        pts = c + rho * e
        weights = (pts - c) * (TWO_PI_I / N)  # d t = i (t - c) d phi
        return pts, weights


def contour_set(thetas, nodes: int = 64, fraction: float = 0.5) -> ContourSet:
    """Radii: a fraction of the distance to the other centers and to 0."""
    centers = {t: root_of_unity(t) for t in thetas}
    radii = {}
    for t, c in centers.items():
        d = [abs(c)] + [abs(c - o) for s, o in centers.items() if s != t]
        radii[t] = fraction * min(d)
    return ContourSet(tuple(thetas), radii, nodes)


# ---------------------------------------------------------------------------
# Mellin-Barnes side

def _sector_blocks(K: KRing, k: int):
    s = K.sectors[k]
    sl = s.slice()
    N = [M[sl, sl] for M in K.N]
    Ri = [M[sl, sl] for M in K.R_inv]
    R = [M[sl, sl] for M in K.R]
    return s, sl, N, R, Ri


def _series_on_sector(N, gamma, enum: SupportEnumerator, z, shift=None, logz=None):
    m = N[0].shape[0]
    e = np.zeros(m, dtype=complex)
    e[0] = 1.0
    if not len(enum):
        P = 1 if shift is None else shift.shape[0]
        return np.zeros((P, m), dtype=complex), np.zeros((P, 0, m), dtype=complex)
    vecs = sector_terms(N, e, gamma, enum.as_array(), z, shift, logz=logz)
    return vecs[:, ::-1, :].sum(axis=1), vecs


def _probe_vectors(N, gamma, arr, z, logz=None):
    e = np.zeros(N[0].shape[0], dtype=complex)
    e[0] = 1.0
    return sector_terms(N, e, gamma, arr, z, logz=logz)[0]


@dataclass
class MBResult:
    vector: np.ndarray
    per_sector: Dict[str, dict]
    quadrature: Dict[str, float]
    phi_annihilation: float
    tail_bound: float


def phi_annihilation(ctx: FlipContext, K: Optional[KRing] = None) -> float:
    """``|| prod_{I_+} (I - R_j^{-1}) ||`` on the ``+`` K-ring."""
    K = K or ctx.K_plus
    P = np.eye(K.dim, dtype=complex)
    for j in ctx.circuit.I_plus:
        P = P @ (np.eye(K.dim) - K.R_inv[j])
    return float(np.max(np.abs(P), initial=0.0))


def kernel_vanishes(ctx: FlipContext, tol: float = 1e-10) -> bool:
    """Whether ``prod_{I_-} (I - R_j^{-1})`` vanishes on the ``+`` K-ring.

    Then the kernel is identically zero there and both sides of the
    diagram reduce to the ``-`` series; a sign change of the kernel cannot
    be detected.
    """
    K = ctx.K_plus
    P = np.eye(K.dim, dtype=complex)
    for j in ctx.circuit.I_minus:
        P = P @ (np.eye(K.dim) - K.R_inv[j])
    return float(np.max(np.abs(P), initial=0.0)) <= tol


def _contour_integral(ctx, K, k, gamma_tv, enum, z, theta, contours, nodes, sign, logz=None):
    """``oint T(R, t) Xi^{es}(z, R t^h)(1) dt`` on one sector; returns ``(value, tail)``."""
    s, sl, N, R, Ri = _sector_blocks(K, k)
    pts, wts = contours.points(theta, nodes)
    c = contours.center(theta)
    h = np.array(ctx.h, dtype=float)
    lam = np.log(pts / c) / TWO_PI_I
    shift = lam[:, None] * h[None, :]
    ser, vecs = _series_on_sector(N, gamma_tv, enum, z, shift, logz)
    Tk = _kernel_nodes(ctx.circuit, Ri, pts, sign)
    integrand = np.einsum("pab,pb->pa", Tk, ser)
    val = (integrand * wts[:, None]).sum(axis=0)
    return val, vecs


def mb_continue(ctx: FlipContext, choice: ExponentChoice, z, policy: Optional[TruncationPolicy] = None,
                nodes: int = 64, tol: float = 1e-10, kernel_sign: float = 1.0,
                check_domain: bool = True, branch_shift=None) -> MBResult:
    """Continuation of ``Xi_+(z, R)(1)`` evaluated at ``z`` in the ``-`` domain.

    On the sector of ``v``:
    ``[1 in I(y^v)] Xi_-^{v}(z, R) - sum_t oint T(R, t) Xi_-^{v(t), es}(z, R t^h) dt``
    applied to the sector unit (for ``v`` outside the essential Box only the
    unessential part of the first term survives).  The term with the
    factor ``prod_{I_+} (1 - r_j^{-1})`` is dropped after checking that the
    operator vanishes.

    ``kernel_sign`` and ``branch_shift`` (integers ``k_j`` adding
    ``2 pi i k_j`` to ``log z_j``, i.e. a path winding differently) exist
    only for negative controls.

    Raises
    ------
    PhiTermNotAnnihilated, QuadratureNotConverged, OutsideDomain
    """
    from .gamma_series import OutsideDomain
    policy = policy or TruncationPolicy()
    K = ctx.K_plus
    if check_domain and not domain_contains(domain_for(ctx.T_minus), z):
        raise OutsideDomain("point is outside the minus-side convergence domain")
    phi = phi_annihilation(ctx, K)
    if phi > 1e-10:
        raise PhiTermNotAnnihilated(f"prod (I - R_j^-1) over I_+ has norm {phi:.3e}")
    if choice.T != ctx.T_plus:
        raise ValueError("exponents must be chosen for the plus triangulation")
    Tm = ctx.T_minus
    logz = np.log(np.asarray(z, dtype=complex))
    if branch_shift is not None:
        logz = logz + TWO_PI_I * np.asarray(branch_shift, dtype=float)
    out = np.zeros(K.dim, dtype=complex)
    per, quad = {}, {}
    tail = 0.0
    for k, s in enumerate(K.sectors):
        v = tuple(s.box.v)
        sr = ctx.roots[v]
        gamma = choice.gamma(v)
        _, sl, N, _, _ = _sector_blocks(K, k)
        acc = np.zeros(s.dim, dtype=complex)
        info = {"thetas": [str(t) for t in sr.thetas], "essential": sr.essential}
        if sr.has_one and sr.targets[Fraction(0)] is not None:
            full = enumerate_support(Tm, gamma, policy.bound)
            val, vecs = _series_on_sector(N, gamma, full, z, logz=logz)
            acc += val[0]
            tail += _tail(Tm, gamma, policy, z, vecs[0], full.terms,
                          probe=lambda arr, N=N, gamma=gamma: _probe_vectors(N, gamma, arr, z, logz))
            if not sr.essential:
                es = enumerate_support(Tm, gamma, policy.bound, True, ctx.circuit)
                val_es, _ = _series_on_sector(N, gamma, es, z, logz=logz)
                acc -= val_es[0]
        if sr.essential:
            contours = contour_set(sr.thetas, nodes)
            for th in sr.thetas:
                tgt = sr.targets[th]
                if tgt is None:
                    continue
                theta_c = _centered(th)
                gt = ctx.gamma_t(gamma, theta_c)
                es = enumerate_support(Tm, gt, policy.bound, True, ctx.circuit)
                if not len(es):
                    continue
                I1, vecs = _contour_integral(ctx, K, k, gt, es, z, th, contours, nodes, kernel_sign, logz)
                I2, _ = _contour_integral(ctx, K, k, gt, es, z, th, contours, 2 * nodes, kernel_sign, logz)
                delta = float(np.max(np.abs(I1 - I2), initial=0.0))
                quad[f"{','.join(map(str, v))}@{th}"] = delta
                if delta > tol:
                    raise QuadratureNotConverged(f"node doubling changed the integral by {delta:.3e}")
                acc -= I2
                tail += _tail(Tm, gt, policy, z, np.abs(vecs).max(axis=0), es.terms, True, ctx.circuit)
        out[sl] = acc
        per[",".join(map(str, v))] = info
    return MBResult(out, per, quad, phi, tail)


# ---------------------------------------------------------------------------
# Fourier-Mukai side

def _monomials(n: int, max_degree: int):
    out = []
    for deg in range(max_degree + 1):
        for c in product(range(deg + 1), repeat=n):
            if sum(c) == deg:
                out.append(c)
    return out


def fm_apply(ctx: FlipContext, m, nodes: int = 64, tol: float = 1e-10, kernel_sign: float = 1.0,
             return_delta: bool = False):
    """``FM(prod R_j^{m_j})`` in the ``+`` K-ring via the contour formula.

    ``R^m [1 - sum_{t in I} oint T(R, t) t^{h.m} dt](1)`` with contours
    around every root in the global set on every sector.
    """
    K = ctx.K_plus
    hm = sum(a * b for a, b in zip(ctx.h, m))
    contours = contour_set(ctx.global_thetas, nodes)
    vec = np.zeros(K.dim, dtype=complex)
    worst = 0.0
    for k, s in enumerate(K.sectors):
        _, sl, _, R, Ri = _sector_blocks(K, k)
        e = np.zeros(s.dim, dtype=complex)
        e[0] = 1.0
        corr = []
        for N_ in (nodes, 2 * nodes):
            acc = np.zeros(s.dim, dtype=complex)
            for th in ctx.global_thetas:
                pts, wts = contours.points(th, N_)
                Tk = _kernel_nodes(ctx.circuit, Ri, pts, kernel_sign)
                acc += np.einsum("pab,b,p->a", Tk, e, wts * pts ** hm)
            corr.append(acc)
        delta = float(np.max(np.abs(corr[0] - corr[1]), initial=0.0))
        worst = max(worst, delta)
        if delta > tol:
            raise QuadratureNotConverged(f"node doubling changed the FM integral by {delta:.3e}")
        Rm = np.eye(s.dim, dtype=complex)
        for j, e_j in enumerate(m):
            if e_j:
                Rm = Rm @ np.linalg.matrix_power(R[j] if e_j > 0 else Ri[j], abs(e_j))
        vec[sl] = Rm @ (e - corr[1])
    return (vec, worst) if return_delta else vec


@dataclass
class FMOperator:
    matrix: np.ndarray
    monomials: List[Tuple[int, ...]]
    consistency: float
    quadrature: float


def fm_matrix(ctx: FlipContext, nodes: int = 64, kernel_sign: float = 1.0, route: str = "contour") -> FMOperator:
    """Matrix of FM from the ``-`` K-ring to the ``+`` K-ring.

    Monomial classes ``R^m(1)`` of increasing degree are added until they
    span the ``-`` K-ring; the matrix solves ``FM M = F`` and is checked on
    the next degree of monomials.
    """
    Km = ctx.K_minus
    n = ctx.n
    ones = Km.unit()
    cols, used = [], []
    deg = 0
    while True:
        mons = [m for m in _monomials(n, deg) if sum(m) == deg]
        for m in mons:
            cols.append(Km.monomial(m) @ ones)
            used.append(m)
        M = np.array(cols).T
        if np.linalg.matrix_rank(M, tol=1e-9) == Km.dim:
            break
        deg += 1
        if deg > 2 * Km.dim + 2:
            raise RuntimeError("monomial classes do not span the K-ring")
    extra = [m for m in _monomials(n, deg + 1) if sum(m) == deg + 1]

    def image(m):
        if route == "oracle":
            return fm_oracle(ctx, m), 0.0
        return fm_apply(ctx, m, nodes, kernel_sign=kernel_sign, return_delta=True)

    F, worst = [], 0.0
    for m in used:
        v, dlt = image(m)
        F.append(v)
        worst = max(worst, dlt)
    F = np.array(F).T
    X = F @ np.linalg.pinv(M)
    cons = 0.0
    for m in extra:
        v, dlt = image(m)
        cons = max(cons, float(np.max(np.abs(X @ (Km.monomial(m) @ ones) - v))))
    return FMOperator(X, used, cons, worst)


def fm_on_series(ctx: FlipContext, choice_minus: ExponentChoice, z, policy: Optional[TruncationPolicy] = None,
                 fm: Optional[FMOperator] = None, nodes: int = 64):
    """``FM(Xi_-(z, R)(1))`` as a vector of the ``+`` K-ring."""
    fm = fm or fm_matrix(ctx, nodes)
    Xi = evaluate_Xi(ctx.K_minus, choice_minus, z, policy)
    return fm.matrix @ Xi.vector, Xi


def _hat_polynomial(ctx: FlipContext):
    """Annihilating polynomial of ``R_hat`` from the spectrum of the blowup K-ring.

    Returns coefficients (highest first) of ``prod_t (x - t)^{mu_t}``.
    """
    Kh = ctx.K_hat
    idx = Kh.n - 1
    by_root: Dict[Fraction, int] = {}
    for s in Kh.sectors:
        t = _frac_mod1(s.q[idx])
        blk = Kh.R[idx][s.slice(), s.slice()] - root_of_unity(t) * np.eye(s.dim)
        mu = 1
        P = blk.copy()
        while np.max(np.abs(P), initial=0.0) > 1e-10:
            P = P @ blk
            mu += 1
        by_root[t] = max(by_root.get(t, 0), mu)
    p = np.array([1.0 + 0j])
    for t, mu in sorted(by_root.items()):
        for _ in range(mu):
            p = np.convolve(p, np.array([1.0, -root_of_unity(t)]))
    return p, by_root


def pushforward_negative_powers(ctx: FlipContext, count: int) -> List[np.ndarray]:
    """``(f_+)_*(R_hat^{-a})`` for ``a < count`` on the ``+`` K-ring.

    From the formal series identity
    ``sum_a t^a (f_+)_*(R_hat^{-a}) = 1/(1-t) - t/(1-t) G(t)`` with
    ``G(t) = prod_{I_-} (1 - R_j^{-1}) sum_b R_j^{-b} t^{b |h_j|}``:
    the value is ``1 - sum_{i < a} G_i``.
    """
    K = ctx.K_plus
    one = K.unit()
    I = np.eye(K.dim, dtype=complex)
    circ = ctx.circuit
    # coefficients G_i as operators
    G = [np.zeros((K.dim, K.dim), dtype=complex) for _ in range(count)]
    factors = []
    for j in circ.I_minus:
        hj = -circ.h[j]
        ser = [np.zeros((K.dim, K.dim), dtype=complex) for _ in range(count)]
        b = 0
        while b * hj < count:
            ser[b * hj] = np.linalg.matrix_power(K.R_inv[j], b)
            b += 1
        factors.append(((I - K.R_inv[j]), ser))
    acc = [I.copy()] + [np.zeros_like(I) for _ in range(count - 1)]
    for pre, ser in factors:
        new = [np.zeros_like(I) for _ in range(count)]
        for a in range(count):
            for b in range(a + 1):
                if np.any(ser[b]):
                    new[a] = new[a] + acc[a - b] @ pre @ ser[b]
        acc = new
    G = acc
    out = []
    run = np.zeros(K.dim, dtype=complex)
    for a in range(count):
        out.append(one - run)
        run = run + G[a] @ one
    return out


def pushforward_power(ctx: FlipContext, k: int, cache: Optional[dict] = None) -> np.ndarray:
    """``(f_+)_*(R_hat^k)`` for any integer ``k``.

    Negative powers come from the series identity; a positive power is
    reduced to negative ones with the annihilating polynomial ``p`` of
    ``R_hat``: ``x^{k+N-1} mod p`` gives ``R_hat^k = sum_a e_a R_hat^{-a}``.
    """
    cache = {} if cache is None else cache
    if "p" not in cache:
        cache["p"], _ = _hat_polynomial(ctx)
    p = cache["p"]
    Nn = len(p) - 1
    need = max(Nn, -k + 1 if k <= 0 else Nn)
    if cache.get("count", 0) < need:
        cache["neg"] = pushforward_negative_powers(ctx, need)
        cache["count"] = need
    P = cache["neg"]
    if k <= 0:
        return P[-k]
    num = np.zeros(k + Nn, dtype=complex)
    num[0] = 1.0  # x^{k+N-1}, highest first
    _, rem = np.polydiv(num, p)
    rem = np.concatenate([np.zeros(Nn - len(rem), dtype=complex), rem])  # coefficients of x^{N-1} .. x^0
    out = np.zeros(ctx.K_plus.dim, dtype=complex)
    for a in range(Nn):
        out = out + rem[a] * P[a]
    return out


def pushforward_recurrence_defect(ctx: FlipContext, count: int = 12) -> float:
    """How far the pushforward sequence is from the recurrence given by ``p``."""
    cache: dict = {}
    p, _ = _hat_polynomial(ctx)
    P = pushforward_negative_powers(ctx, count + len(p))
    worst = 0.0
    Nn = len(p) - 1
    # p(R_hat) R_hat^{-a-N} = 0 for every a >= 0
    for a in range(count):
        acc = sum(p[i] * P[a + i] for i in range(Nn + 1))
        worst = max(worst, float(np.max(np.abs(acc))))
    return worst


def fm_oracle(ctx: FlipContext, m, cache: Optional[dict] = None) -> np.ndarray:
    """``FM(prod R_j^{m_j}) = R^m (f_+)_*(R_hat^{h.m})`` without contours."""
    if cache is None:
        cache = ctx.__dict__.setdefault("_oracle_cache", {})
    K = ctx.K_plus
    hm = sum(a * b for a, b in zip(ctx.h, m))
    return K.monomial(m) @ pushforward_power(ctx, hm, cache)


# ---------------------------------------------------------------------------
# the diagram

@dataclass
class DiagramReport:
    passed: bool
    tolerance: float
    samples: List[dict]
    fm_consistency: float
    fm_quadrature: float
    phi_annihilation: float
    order: int

    def to_dict(self) -> dict:
        return {"passed": self.passed, "tolerance": self.tolerance, "samples": self.samples,
                "fm_consistency": self.fm_consistency, "fm_quadrature": self.fm_quadrature,
                "phi_annihilation": self.phi_annihilation, "root_order": self.order}


def verify_diagram(ctx: FlipContext, beta, samples, policy: Optional[TruncationPolicy] = None,
                   tolerance: float = 1e-6, nodes: int = 64, kernel_sign: float = 1.0,
                   branch_shift=None) -> DiagramReport:
    """``|| MB(Xi_+)(z) - FM(Xi_-(z))(1) ||_inf`` at each sample point."""
    policy = policy or TruncationPolicy()
    ch_p = choose_exponents(ctx.T_plus, beta)
    ch_m = choose_exponents(ctx.T_minus, beta)
    fm = fm_matrix(ctx, nodes)
    rows = []
    ok = True
    phi = phi_annihilation(ctx)
    for z in samples:
        mb = mb_continue(ctx, ch_p, z, policy, nodes, kernel_sign=kernel_sign, branch_shift=branch_shift)
        fmv, Xi = fm_on_series(ctx, ch_m, z, policy, fm)
        diff = mb.vector - fmv
        res = float(np.max(np.abs(diff)))
        ok = ok and res <= tolerance
        per = {}
        for s in ctx.K_plus.sectors:
            per[",".join(map(str, s.box.v))] = float(np.max(np.abs(diff[s.slice()])))
        rows.append({"z": [[float(np.real(x)), float(np.imag(x))] for x in z], "residual": res,
                     "per_sector": per, "mb_tail_bound": mb.tail_bound, "fm_tail_bound": Xi.tail_bound,
                     "quadrature": mb.quadrature,
                     "scale": float(max(np.max(np.abs(mb.vector)), np.max(np.abs(fmv))))})
    return DiagramReport(ok, tolerance, rows, fm.consistency, fm.quadrature, phi, ctx.order)


# ---------------------------------------------------------------------------
# combinatorial checks

def _in_support(T, gamma, l, cones) -> bool:
    return witness_cone(cones, support(l, gamma)) is not None


def check_supports(ctx: FlipContext, beta=None, bound: int = 10) -> Dict[str, bool]:
    """Exhaustive support-set checks for ``||l|| <= bound``.

    * without ``1`` in ``I(y^v)`` the essential support is everything;
      with it, the unessential parts of both sides agree;
    * the essential supports have the same image modulo ``h``;
    * ``m h + l`` is in the essential supports exactly above ``m_+`` and
      below ``m_-``.
    """
    Tp, Tm = ctx.T_plus, ctx.T_minus
    ch = choose_exponents(Tp, beta)
    h = ctx.h
    ball = lattice_ball(Tp, bound)
    res = {"sss_i": True, "sss_ii": True, "mm": True}
    span = bound + 2 * max(abs(x) for x in h) + 4
    for v, sr in ctx.roots.items():
        g = ch.gamma(v)
        Sp = [l for l in ball if _in_support(Tp, g, l, Tp.maximal_cones)]
        Sp_es = [l for l in ball if _in_support(Tp, g, l, ctx.ess_plus)]
        if not sr.has_one:
            res["sss_i"] &= sorted(Sp) == sorted(Sp_es)
        else:
            Sm = [l for l in ball if _in_support(Tm, g, l, Tm.maximal_cones)]
            Sm_es = [l for l in ball if _in_support(Tm, g, l, ctx.ess_minus)]
            res["sss_i"] &= sorted(set(Sp) - set(Sp_es)) == sorted(set(Sm) - set(Sm_es))
        for th in sr.thetas:
            gt = ctx.gamma_t(g, _centered(th))

            def line_hits(l, gam, cones):
                return [m for m in range(-span, span + 1)
                        if _in_support(Tp, gam, tuple(a + m * b for a, b in zip(l, h)), cones)]

            for l in ball:
                plus = _in_support(Tp, g, l, ctx.ess_plus)
                minus = _in_support(Tm, gt, l, ctx.ess_minus)
                if plus and not any(_in_support(Tm, gt, tuple(a + m * b for a, b in zip(l, h)), ctx.ess_minus)
                                    for m in range(-span, span + 1)):
                    res["sss_ii"] = False
                if minus and not any(_in_support(Tp, g, tuple(a + m * b for a, b in zip(l, h)), ctx.ess_plus)
                                     for m in range(-span, span + 1)):
                    res["sss_ii"] = False
                if not (plus or minus):
                    continue
                try:
                    mp = m_plus(ctx, l, g)
                    mm_ = m_minus(ctx, l, g, _centered(th))
                except ValueError:
                    res["mm"] = False
                    continue
                for m in range(-span, span + 1):
                    lm = tuple(a + m * b for a, b in zip(l, h))
                    if _in_support(Tp, g, lm, ctx.ess_plus) != (m >= mp):
                        res["mm"] = False
                    if _in_support(Tm, gt, lm, ctx.ess_minus) != (m <= mm_):
                        res["mm"] = False
    return res


def unessential_fixed(ctx: FlipContext, J, phi_monomials, nodes: int = 64) -> float:
    """``max || FM(prod_J (1 - R_j) R^m) - prod_J (1 - R_j) R^m ||`` over ``m``.

    Images in different K-rings are compared through the FM matrix, whose
    input is the class in the ``-`` ring and whose output lies in the
    ``+`` ring; the class itself is transported by the same polynomial.
    """
    Kp, Km = ctx.K_plus, ctx.K_minus
    fm = fm_matrix(ctx, nodes)
    worst = 0.0
    for m in phi_monomials:
        Pm = np.eye(Km.dim, dtype=complex)
        Pp = np.eye(Kp.dim, dtype=complex)
        for j in J:
            Pm = Pm @ (np.eye(Km.dim) - Km.R[j])
            Pp = Pp @ (np.eye(Kp.dim) - Kp.R[j])
        lhs = fm.matrix @ (Pm @ Km.monomial(m) @ Km.unit())
        rhs = Pp @ Kp.monomial(m) @ Kp.unit()
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def sample_points(T_plus: Triangulation, T_minus: Triangulation, count: int = 3):
    """Endpoints in the ``-`` domain of distinct A1-A3 paths.

    The paths differ in length ``A`` along ``h`` (the minimal feasible
    value and larger ones), in the argument jitter and in the depth of the
    base point, so both moduli and phases of the samples vary.
    """
    from .secondary_geometry import PathInfeasible, build_path
    out, paths = [], []
    U = domain_for(T_minus)
    A0 = build_path(T_plus, T_minus).A
    specs = [(0, 0.0, Fraction(0)), (1, 0.05, Fraction(1, 2)), (2, 0.1, Fraction(1)),
             (3, 0.15, Fraction(3, 2)), (1, 0.02, Fraction(0)), (2, 0.08, Fraction(0)),
             (3, 0.12, Fraction(0)), (4, 0.04, Fraction(2))]
    for dA, jitter, depth in specs:
        p = None
        for k in range(10):
            try:
                p = build_path(T_plus, T_minus, A=A0 + dA, jitter=jitter, depth=depth + 2 ** k - 1)
                break
            except PathInfeasible:
                continue
        if p is None:
            continue
        z = p.z_minus
        if domain_contains(U, z):
            out.append(z)
            paths.append(p)
        if len(out) >= count:
            break
    return out, paths
