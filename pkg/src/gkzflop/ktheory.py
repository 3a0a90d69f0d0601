"""Complexified K-theory of toric DM stacks as commuting block operators.

The ring is assembled from its Box-sector decomposition: on the sector of
``v`` each ``R_j`` acts as ``y_j^v exp(D_j)`` where ``D_j`` lives in the
Stanley-Reisner algebra of the quotient fan.
"""
from __future__ import annotations

import cmath
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations, product
from math import factorial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np

from .lattice_core import inverse, solve_rational
from .sr_ring import PolynomialSR, SRQuotient, polynomial_sr_quotient
from .triangulation import BoxElement, StackyFan, Triangulation, quotient_fan

TWO_PI_I = 2j * np.pi


class PresentationViolation(RuntimeError):
    pass


class SingularPoint(ValueError):
    pass


class ContourCollision(ValueError):
    pass


def root_of_unity(q: Fraction) -> complex:
    """``exp(2 pi i q)`` for an exact rational ``q``, via mpmath."""
    q = Fraction(q) % 1
    z = mpmath.expjpi(2 * mpmath.mpf(q.numerator) / q.denominator)
    return complex(z)


def nilpotent_exp(D: np.ndarray, scale: complex = 1.0) -> np.ndarray:
    """``exp(scale * D)`` for nilpotent ``D`` by its finite Taylor sum."""
    m = D.shape[0]
    out = np.eye(m, dtype=complex)
    term = np.eye(m, dtype=complex)
    for k in range(1, m + 1):
        term = term @ (scale * D) / k
        if not np.any(term):
            break
        out = out + term
    return out


def nilpotency_order(D: np.ndarray, tol: float = 1e-12) -> int:
    """Smallest ``k`` with ``D^k = 0``."""
    m = D.shape[0]
    P = np.eye(m, dtype=complex)
    for k in range(1, m + 2):
        P = P @ D
        if np.max(np.abs(P), initial=0.0) <= tol:
            return k
    raise ValueError("matrix is not nilpotent")


@dataclass
class Sector:
    """One local factor of the K-ring.

    Attributes
    ----------
    box : the Box element ``v``
    algebra : Stanley-Reisner algebra of the quotient fan
    D : per-vector nilpotent operators on this sector (ambient indexing).
        For ``j`` in ``sigma(v)`` the operator is the combination of star
        divisors forced by the linear relations.
    """

    box: BoxElement
    algebra: PolynomialSR
    D: List[np.ndarray]
    D_exact: List[List[List[Fraction]]]
    offset: int

    @property
    def dim(self) -> int:
        return self.algebra.dim

    @property
    def q(self):
        return self.box.q

    def y(self) -> np.ndarray:
        return np.array([root_of_unity(x) for x in self.box.q])

    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.dim)


@dataclass
class KRing:
    fan: StackyFan
    sectors: List[Sector]
    R: List[np.ndarray]
    R_inv: List[np.ndarray]
    N: List[np.ndarray]
    checks: Dict[str, float] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return sum(s.dim for s in self.sectors)

    @property
    def n(self) -> int:
        return self.fan.n

    def unit(self) -> np.ndarray:
        """The class ``1``: sum of the sector units."""
        e = np.zeros(self.dim, dtype=complex)
        for s in self.sectors:
            e[s.offset] = 1.0
        return e

    def projector(self, k: int) -> np.ndarray:
        P = np.zeros((self.dim, self.dim), dtype=complex)
        sl = self.sectors[k].slice()
        P[sl, sl] = np.eye(self.sectors[k].dim)
        return P

    def sector_of(self, v) -> Optional[int]:
        for k, s in enumerate(self.sectors):
            if tuple(s.box.v) == tuple(v):
                return k
        return None

    def sector_by_angles(self, q) -> Optional[int]:
        q = tuple(Fraction(x) % 1 for x in q)
        for k, s in enumerate(self.sectors):
            if tuple(s.box.q) == q:
                return k
        return None

    def monomial(self, m) -> np.ndarray:
        """Operator ``prod_j R_j^{m_j}`` (negative exponents allowed)."""
        out = np.eye(self.dim, dtype=complex)
        for j, e in enumerate(m):
            if e > 0:
                out = out @ np.linalg.matrix_power(self.R[j], e)
            elif e < 0:
                out = out @ np.linalg.matrix_power(self.R_inv[j], -e)
        return out


def _sector_operators(fan: StackyFan, box: BoxElement, alg: PolynomialSR):
    """Nilpotent operators of a sector in the ambient vector indexing."""
    n = fan.n
    m = alg.dim
    sigma = box.sigma_v
    D_exact = [alg.D_exact[j] if j not in sigma else None for j in range(n)]
    if sigma:
        # rational dual vectors to the generators of sigma inside span(sigma)
        d = fan.dim
        Vs = [fan.vectors[j] for j in sigma]
        for a, j in enumerate(sigma):
            # m_a with <m_a, v_b> = delta_ab for b in sigma; any completion works
            rhs = [Fraction(int(a == b)) for b in range(len(sigma))]
            m_a = solve_rational(Vs, rhs)
            M = [[Fraction(0)] * m for _ in range(m)]
            for k in alg.rays:
                c = sum(x * y for x, y in zip(m_a, fan.vectors[k]))
                if c:
                    for r in range(m):
                        for s in range(m):
                            M[r][s] -= c * alg.D_exact[k][r][s]
            D_exact[j] = M
    D = [np.array([[float(x) for x in row] for row in M], dtype=float).reshape(m, m) for M in D_exact]
    return D, D_exact


def build_kring(fan, tol: float = 1e-10, verify: bool = True) -> KRing:
    """Assemble the K-ring of a stacky fan from its sectors.

    Parameters
    ----------
    fan : StackyFan or Triangulation
    tol : tolerance for the presentation checks

    Raises
    ------
    PresentationViolation
    """
    if isinstance(fan, Triangulation):
        fan = fan.fan
    n = fan.n
    rays = set(fan.rays())
    sectors = []
    offset = 0
    for b in fan.box_elements():
        alg = polynomial_sr_quotient(quotient_fan(fan, b.sigma_v))
        D, D_exact = _sector_operators(fan, b, alg)
        sectors.append(Sector(b, alg, D, D_exact, offset))
        offset += alg.dim
    dim = offset
    R, R_inv, N = [], [], []
    for j in range(n):
        Rj = np.zeros((dim, dim), dtype=complex)
        Rij = np.zeros((dim, dim), dtype=complex)
        Nj = np.zeros((dim, dim), dtype=complex)
        for s in sectors:
            sl = s.slice()
            y = root_of_unity(s.q[j])
            Rj[sl, sl] = y * nilpotent_exp(s.D[j])
            Rij[sl, sl] = (1 / y) * nilpotent_exp(s.D[j], -1.0)
            Nj[sl, sl] = s.D[j] / TWO_PI_I
        R.append(Rj)
        R_inv.append(Rij)
        N.append(Nj)
    K = KRing(fan, sectors, R, R_inv, N)
    if verify:
        K.checks = verify_presentation(K, tol)
    return K


def verify_presentation(K: KRing, tol: float = 1e-10) -> Dict[str, float]:
    """Check the Laurent and Stanley-Reisner relations as matrix identities."""
    fan = K.fan
    n, d = fan.n, fan.dim
    I = np.eye(K.dim)
    worst = {"commute": 0.0, "inverse": 0.0, "laurent": 0.0, "sr": 0.0, "non_ray": 0.0}
    for a in range(n):
        worst["inverse"] = max(worst["inverse"], np.max(np.abs(K.R[a] @ K.R_inv[a] - I), initial=0))
        for b in range(a + 1, n):
            c = K.R[a] @ K.R[b] - K.R[b] @ K.R[a]
            worst["commute"] = max(worst["commute"], np.max(np.abs(c), initial=0))
    for i in range(d):
        m = [fan.vectors[j][i] for j in range(n)]
        worst["laurent"] = max(worst["laurent"], np.max(np.abs(K.monomial(m) - I), initial=0))
    rays = set(fan.rays())
    for j in range(n):
        if j not in rays:
            worst["non_ray"] = max(worst["non_ray"], np.max(np.abs(K.R[j] - I), initial=0))
    for size in range(1, d + 1):
        for J in combinations(range(n), size):
            if fan.is_cone(J) and all(j in rays for j in J):
                continue
            P = I.astype(complex)
            for j in J:
                P = P @ (I - K.R[j])
            worst["sr"] = max(worst["sr"], np.max(np.abs(P), initial=0))
    for k, v in worst.items():
        if v > tol:
            raise PresentationViolation(f"{k} relation violated: {v:.3e}")
    worst["dimension"] = K.dim
    return worst


# ---------------------------------------------------------------------------
# functional calculus

class JetFunction:
    """Analytic function of ``n`` variables with Taylor data at base points.

    Parameters
    ----------
    func : callable taking a sequence of complex numbers
    variables : indices the function actually depends on
    taylor : optional callable ``(base, orders) -> dict`` returning the
        coefficients ``d^J f(base) / J!`` for ``J_j < orders[j]``.  When
        omitted, mpmath numerical differentiation is used.
    singular : optional predicate on base points
    """

    def __init__(self, func, n: int, variables=None, taylor=None, singular=None, name=""):
        self.func = func
        self.n = n
        self.variables = tuple(range(n)) if variables is None else tuple(variables)
        self._taylor = taylor
        self.singular = singular
        self.name = name

    def __call__(self, r):
        return self.func(r)

    def taylor(self, base, orders) -> Dict[Tuple[int, ...], complex]:
        if self.singular is not None and self.singular(base):
            raise SingularPoint(f"{self.name} is not analytic at {base}")
        if self._taylor is not None:
            return self._taylor(base, orders)
        return numeric_taylor(self.func, base, orders, self.variables)

    def check(self, base, orders, rtol: float = 1e-6) -> bool:
        """Cross-check supplied Taylor data against numerical differentiation."""
        a = self.taylor(base, orders)
        b = numeric_taylor(self.func, base, orders, self.variables)
        for J in set(a) | set(b):
            x, y = a.get(J, 0), b.get(J, 0)
            if abs(x - y) > rtol * max(1.0, abs(y)):
                return False
        return True

    @classmethod
    def separable(cls, factors: Dict[int, Callable], n: int, jets: Dict[int, Callable] = None, name=""):
        """Product of univariate functions ``prod_j f_j(r_j)``.

        ``jets[j](x, k)`` returns the first ``k`` Taylor coefficients of
        ``f_j`` at ``x``; numerical differentiation is used otherwise.
        """
        jets = jets or {}

        def func(r):
            out = 1.0 + 0j
            for j, f in factors.items():
                out *= f(r[j])
            return out

        def taylor(base, orders):
            per = {}
            for j, f in factors.items():
                k = orders[j]
                if j in jets:
                    per[j] = list(jets[j](base[j], k))
                else:
                    c = numeric_taylor(lambda r, f=f: f(r[0]), (base[j],), (k,), (0,))
                    per[j] = [c[(i,)] for i in range(k)]
            out = {}
            idx = sorted(per)
            for J in product(*[range(orders[j]) for j in idx]):
                c = 1.0 + 0j
                for j, e in zip(idx, J):
                    c *= per[j][e]
                full = [0] * n
                for j, e in zip(idx, J):
                    full[j] = e
                out[tuple(full)] = c
            return out

        return cls(func, n, variables=tuple(sorted(factors)), taylor=taylor, name=name)


def numeric_taylor(func, base, orders, variables, radius: float = 0.05, nodes: int = 24):
    """Taylor coefficients by numerical differentiation.

    mpmath differentiation is used when ``func`` accepts mpmath numbers;
    otherwise the coefficients come from an FFT of samples on a small torus.
    """
    variables = [j for j in variables if orders[j] > 0]
    n = len(base)
    base = [complex(b) for b in base]
    if not variables:
        return {tuple([0] * n): complex(func(base))}
    try:
        return _mp_taylor(func, base, orders, variables)
    except (TypeError, AttributeError):
        pass
    theta = 2 * np.pi * np.arange(nodes) / nodes
    grid = np.meshgrid(*[base[j] + radius * np.exp(1j * theta) for j in variables], indexing="ij")
    F = np.empty(grid[0].shape, dtype=complex)
    r = list(base)
    for idx in np.ndindex(F.shape):
        for j, g in zip(variables, grid):
            r[j] = g[idx]
        F[idx] = func(r)
    C = np.fft.fftn(F) / F.size
    out = {}
    for J in product(*[range(orders[j]) for j in variables]):
        full = [0] * n
        for j, e in zip(variables, J):
            full[j] = e
        out[tuple(full)] = complex(C[J]) / radius ** sum(J)
    return out


def _mp_taylor(func, base, orders, variables):
    n = len(base)
    out = {}
    with mpmath.workdps(30):
        mbase = [mpmath.mpc(b) for b in base]

        for J in product(*[range(orders[j]) for j in variables]):
            def g(*xs):
                r = list(mbase)
                for j, x in zip(variables, xs):
                    r[j] = x
                val = func(r)
                if not isinstance(val, (mpmath.mpf, mpmath.mpc)):
                    raise TypeError("not an mpmath value")
                return val

            val = mpmath.diff(g, [mbase[j] for j in variables], J)
            denom = 1
            for e in J:
                denom *= factorial(e)
            full = [0] * n
            for j, e in zip(variables, J):
                full[j] = e
            out[tuple(full)] = complex(val) / denom
    return out


def apply_function(K: KRing, f: JetFunction) -> np.ndarray:
    """``f(R_1, ..., R_n)`` by Taylor jets on each sector."""
    out = np.zeros((K.dim, K.dim), dtype=complex)
    for s in K.sectors:
        sl = s.slice()
        y = s.y()
        blocks = [K.R[j][sl, sl] - y[j] * np.eye(s.dim) for j in range(K.n)]
        orders = [nilpotency_order(b) if j in f.variables else 1 for j, b in enumerate(blocks)]
        coeffs = f.taylor(tuple(y), tuple(orders))
        acc = np.zeros((s.dim, s.dim), dtype=complex)
        for J, c in coeffs.items():
            if c == 0:
                continue
            term = c * np.eye(s.dim, dtype=complex)
            for j, e in enumerate(J):
                if e:
                    term = term @ np.linalg.matrix_power(blocks[j], e)
            acc += term
        out[sl, sl] = acc
    return out


def default_radii(K: KRing, fraction: float = 0.5):
    """Per-vector circle radius: a fraction of the gap between distinct eigenvalues."""
    radii = []
    for j in range(K.n):
        eig = sorted({(round(c.real, 12), round(c.imag, 12)) for c in (s.y()[j] for s in K.sectors)})
        pts = [complex(a, b) for a, b in eig]
        gap = min([abs(a - b) for a, b in combinations(pts, 2)] + [1.0])
        radii.append(fraction * gap)
    return radii


def cauchy_function(K: KRing, f: JetFunction, radii=None, nodes: int = 32) -> np.ndarray:
    """``f(R)`` by iterated trapezoidal Cauchy integrals on each sector.

    Only the variables ``f`` depends on are integrated; the Cauchy integral
    of a constant function in ``r_j`` over a circle enclosing the spectrum
    of ``R_j`` is the identity.
    """
    radii = default_radii(K) if radii is None else list(radii)
    out = np.zeros((K.dim, K.dim), dtype=complex)
    theta = 2 * np.pi * np.arange(nodes) / nodes
    circle = np.exp(1j * theta)
    for s in K.sectors:
        sl = s.slice()
        y = s.y()
        for j in f.variables:
            for t in K.sectors:
                yt = t.y()[j]
                if abs(yt - y[j]) > 1e-12 and abs(yt - y[j]) <= radii[j]:
                    raise ContourCollision(f"circle around {y[j]} for r_{j} contains {yt}")
        vars_ = list(f.variables)
        m = s.dim
        if not vars_:
            out[sl, sl] = f(list(y)) * np.eye(m)
            continue
        pts = {j: y[j] + radii[j] * circle for j in vars_}
        w = {j: radii[j] * circle / nodes for j in vars_}
        res = {}
        for j in vars_:
            B = K.R[j][sl, sl]
            res[j] = np.array([np.linalg.solve(lam * np.eye(m) - B, np.eye(m)) for lam in pts[j]])
        # tensor of function values over the node grid
        grids = np.meshgrid(*[pts[j] for j in vars_], indexing="ij")
        F = np.empty(grids[0].shape, dtype=complex)
        r = list(y)
        for idx in np.ndindex(F.shape):
            for j, g in zip(vars_, grids):
                r[j] = g[idx]
            F[idx] = f(r)
        # contract one variable at a time, last first
        A = F[..., None, None] * np.eye(m)
        for j in reversed(vars_):
            A = np.einsum("...kab,kbc,k->...ac", A, res[j], w[j])
        out[sl, sl] = A
    return out


def ch_isomorphism(K: KRing, S: SRQuotient, tol: float = 1e-10) -> np.ndarray:
    """Matrix of the identification of the K-ring with ``C[K, Sigma]/(Z)``.

    The sector monomial ``D^alpha`` of ``v`` goes to
    ``(2 pi i)^{|alpha|} x^v x^{alpha . v}``.  With this normalization the
    map intertwines ``R_j`` with ``y_j^v exp(2 pi i D_j)``.
    """
    if S.dim != K.dim:
        raise PresentationViolation("K-ring and SR quotient have different dimensions")
    pts = S.T.config.points
    C = np.zeros((S.dim, K.dim), dtype=complex)
    for s in K.sectors:
        for col, alpha in enumerate(s.algebra.basis):
            w = tuple(s.box.v)
            ok = True
            for j, e in enumerate(alpha):
                for _ in range(e):
                    p = S.multiply(w, pts[j])
                    if p is None:
                        ok = False
                        break
                    w = p
                if not ok:
                    break
            if ok:
                C[:, s.offset + col] = (TWO_PI_I ** sum(alpha)) * S.reduce_monomial(w)
    if abs(np.linalg.det(C)) < 1e-12:
        raise PresentationViolation("Ch is not invertible")
    for j in range(K.n):
        Dk = np.zeros((K.dim, K.dim), dtype=complex)
        for s in K.sectors:
            sl = s.slice()
            Dk[sl, sl] = s.D[j]
        err = np.max(np.abs(C @ Dk - TWO_PI_I * S.D[j] @ C), initial=0)
        if err > tol:
            raise PresentationViolation(f"Ch does not intertwine D_{j}: {err:.3e}")
    return C
