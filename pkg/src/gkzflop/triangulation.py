"""Point configurations, regular triangulations, stacky fans and circuits.

Indices of points are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations, product
from math import factorial
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .lattice_core import (
    IntegerMatrix,
    LatticeError,
    LatticeVector,
    determinant,
    dot,
    hermite_normal_form,
    inverse,
    kernel_lattice,
    lattice_index,
    nullspace,
    primitive,
    rank,
    smith_invariants,
    solve_rational,
)

Cone = Tuple[int, ...]


class ConfigurationError(ValueError):
    pass


class NotGraded(ConfigurationError):
    pass


class NotGenerating(ConfigurationError):
    pass


class DegenerateHeight(ConfigurationError):
    pass


class NotAdjacent(ConfigurationError):
    pass


class NotACone(ConfigurationError):
    pass


@dataclass(frozen=True)
class PointConfiguration:
    """A graded point configuration generating ``Z^d``."""

    points: Tuple[LatticeVector, ...]
    height: LatticeVector
    relation_basis: Tuple[LatticeVector, ...]

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def d(self) -> int:
        return len(self.points[0])

    @property
    def matrix(self) -> IntegerMatrix:
        return IntegerMatrix.from_columns(self.points)

    @property
    def rank_L(self) -> int:
        return len(self.relation_basis)

    def degree(self, w) -> int:
        return dot(self.height, w)

    def combine(self, coeffs):
        """``sum_j coeffs[j] * v_j`` (rational coefficients allowed)."""
        out = [0] * self.d
        for c, v in zip(coeffs, self.points):
            if c:
                out = [a + c * b for a, b in zip(out, v)]
        return tuple(out)


def validate_configuration(points, h=None) -> PointConfiguration:
    """Build a configuration, checking grading and generation.

    Parameters
    ----------
    points : sequence of integer vectors
    h : integer covector, optional
        Height functional.  When omitted it is solved for.

    Raises
    ------
    NotGraded, NotGenerating
    """
    pts = tuple(tuple(int(x) for x in p) for p in points)
    if not pts:
        raise ConfigurationError("empty point configuration")
    d = len(pts[0])
    if any(len(p) != d for p in pts):
        raise ConfigurationError("points have different dimensions")
    if h is None:
        sol = solve_rational(pts, [1] * len(pts))
        if sol is None or any(x.denominator != 1 for x in sol):
            raise NotGraded("no integral height functional with h(v_j) = 1")
        h = tuple(int(x) for x in sol)
    h = tuple(int(x) for x in h)
    if len(h) != d:
        raise ConfigurationError("height functional has the wrong length")
    bad = [j for j, p in enumerate(pts) if dot(h, p) != 1]
    if bad:
        raise NotGraded(f"h(v_j) != 1 for j in {bad}")
    A = IntegerMatrix.from_columns(pts)
    inv = smith_invariants(A)
    if len(inv) < d or any(x != 1 for x in inv):
        raise NotGenerating(f"points generate a sublattice; invariant factors {inv}")
    L = tuple(kernel_lattice(A))
    return PointConfiguration(pts, h, L)


# ---------------------------------------------------------------------------
# stacky fans

@dataclass(frozen=True)
class BoxElement:
    """Lattice point ``v = sum q_j v_j`` of a half-open parallelepiped."""

    v: LatticeVector
    q: Tuple[Fraction, ...]
    sigma_v: Cone

    @property
    def angles(self) -> Tuple[Fraction, ...]:
        """Exact angles ``q_j`` with ``y_j = exp(2 pi i q_j)``."""
        return self.q

    def roots_of_unity(self) -> np.ndarray:
        return np.array([np.exp(2j * np.pi * float(x)) for x in self.q])

    @property
    def age(self) -> Fraction:
        return sum(self.q, Fraction(0))


@dataclass(frozen=True)
class StackyFan:
    """Simplicial fan given by vectors and maximal cones (index tuples).

    Vectors need not be primitive and some may not be rays of the fan.
    """

    vectors: Tuple[Tuple[int, ...], ...]
    cones: Tuple[Cone, ...]

    @property
    def n(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return len(self.vectors[0]) if self.vectors else 0

    def rays(self) -> Tuple[int, ...]:
        return tuple(sorted({j for c in self.cones for j in c}))

    def is_cone(self, S) -> bool:
        S = set(S)
        return any(S <= set(c) for c in self.cones)

    def containing(self, S):
        S = set(S)
        return [c for c in self.cones if S <= set(c)]

    def star(self, S) -> Tuple[int, ...]:
        """Indices j such that ``S + {j}`` spans a cone (excluding ``S``)."""
        out = {j for c in self.containing(S) for j in c}
        return tuple(sorted(out - set(S)))

    def box_elements(self) -> List[BoxElement]:
        return fan_box_elements(self)

    def cone_index(self, c) -> int:
        return lattice_index([self.vectors[j] for j in c])


def fan_box_elements(fan: StackyFan) -> List[BoxElement]:
    """Box elements of a simplicial fan, sorted lexicographically by ``v``.

    For each maximal cone the coset representatives of ``Z^d`` modulo the
    lattice spanned by its generators are read off a Hermite form; each
    is mapped into the half-open parallelepiped.
    """
    n = fan.n
    found: Dict[LatticeVector, BoxElement] = {}
    for c in fan.cones:
        V = [fan.vectors[j] for j in c]  # rows are generators
        H, _ = hermite_normal_form(IntegerMatrix.from_rows(V))
        diag = [H.entries[i][i] for i in range(len(c))]
        Vinv_t = inverse([list(col) for col in zip(*V)])  # inverse of columns matrix
        for x in product(*[range(p) for p in diag]):
            coeff = [sum(Fraction(a) * b for a, b in zip(row, x)) for row in Vinv_t]
            frac = [a - (a.numerator // a.denominator) for a in coeff]
            v = [Fraction(0)] * fan.dim
            for f, g in zip(frac, V):
                v = [a + f * b for a, b in zip(v, g)]
            v = tuple(int(a) for a in v)
            if v in found:
                continue
            q = [Fraction(0)] * n
            for f, j in zip(frac, c):
                q[j] = f
            sigma = tuple(j for j in c if q[j] != 0)
            found[v] = BoxElement(v, tuple(q), sigma)
        if len([b for b in found.values() if set(b.sigma_v) <= set(c)]) != fan.cone_index(c):
            raise LatticeError("box enumeration inconsistent with lattice index")
    return [found[k] for k in sorted(found)]


def quotient_fan(fan: StackyFan, sigma_v) -> StackyFan:
    """Quotient fan ``fan / sigma`` in ``N / (N cap span sigma)``.

    Vectors keep their original indices; those in ``sigma`` map to zero.
    Coordinates on the quotient lattice are given by a basis of the
    annihilator of ``sigma`` in the dual lattice.
    """
    sigma = tuple(sorted(sigma_v))
    if sigma and not fan.is_cone(sigma):
        raise NotACone(f"{sigma} is not a cone of the fan")
    if not sigma:
        return fan
    M = IntegerMatrix.from_rows([fan.vectors[j] for j in sigma])
    mprime = kernel_lattice(M)
    images = tuple(tuple(dot(m, v) for m in mprime) for v in fan.vectors)
    cones = sorted({tuple(j for j in c if j not in sigma) for c in fan.containing(sigma)})
    cones = tuple(c for c in cones)
    return StackyFan(images, cones)


# ---------------------------------------------------------------------------
# triangulations

@dataclass(frozen=True)
class Triangulation:
    config: PointConfiguration
    maximal_cones: Tuple[Cone, ...]
    height: Tuple[Fraction, ...]
    name: str = ""

    @property
    def fan(self) -> StackyFan:
        return StackyFan(self.config.points, self.maximal_cones)

    def box_elements(self) -> List[BoxElement]:
        return box_elements(self)

    def rays(self):
        return self.fan.rays()


def regular_triangulation(config: PointConfiguration, omega, name: str = "") -> Triangulation:
    """Regular triangulation induced by the height vector ``omega``.

    A d-subset ``B`` is a cell iff the linear functional matching ``omega``
    on ``B`` lies strictly below ``omega`` at every other point.

    Raises
    ------
    DegenerateHeight
        If some point lies on the lifted hyperplane of a cell.
    """
    omega = tuple(Fraction(x) for x in omega)
    if len(omega) != config.n:
        raise ConfigurationError("height vector has the wrong length")
    d, n = config.d, config.n
    cells = []
    for B in combinations(range(n), d):
        rows = [config.points[j] for j in B]
        if determinant(rows) == 0:
            continue
        psi = solve_rational(rows, [omega[j] for j in B])
        ok = True
        for k in range(n):
            if k in B:
                continue
            val = dot(psi, config.points[k])
            if val == omega[k]:
                raise DegenerateHeight(f"point {k} lies on the lift of cell {B}")
            if val > omega[k]:
                ok = False
                break
        if ok:
            cells.append(B)
    T = Triangulation(config, tuple(cells), omega, name)
    vol = normalized_volume(config)
    got = sum(lattice_index([config.points[j] for j in c]) for c in cells)
    if got != vol:
        raise DegenerateHeight(f"cells have volume {got}, polytope has {vol}")
    return T


def _hyperplane_coordinates(config: PointConfiguration) -> np.ndarray:
    """Lattice coordinates of the points inside the hyperplane ``h = 1``."""
    h = IntegerMatrix.from_rows([[x] for x in config.height])
    _, U = hermite_normal_form(h)
    # U h^T = e_1, so Q = U^{-T} has first row h
    Q = [[Fraction(x) for x in r] for r in zip(*inverse(U.to_list()))]
    Q = [list(r) for r in zip(*Q)]
    coords = []
    for p in config.points:
        y = [sum(a * b for a, b in zip(row, p)) for row in Q]
        coords.append([int(a) for a in y[1:]])
    return np.array(coords, dtype=float)


def normalized_volume(config: PointConfiguration) -> int:
    """Normalized volume of ``Conv(A)``, computed from its convex hull.

    This does not use any triangulation, so it serves as an independent
    check on cell volumes.
    """
    k = config.d - 1
    if k == 0:
        return 1
    X = _hyperplane_coordinates(config)
    if k == 1:
        return int(round(X.max() - X.min()))
    from scipy.spatial import ConvexHull

    vol = ConvexHull(X).volume * factorial(k)
    out = int(round(vol))
    if abs(vol - out) > 1e-6:
        raise LatticeError("non-integral normalized volume")
    return out


def box_elements(T: Triangulation) -> List[BoxElement]:
    return fan_box_elements(T.fan)


def cells_meet_properly(T: Triangulation) -> bool:
    """Check that any two cells meet along a common face.

    For a pair of cells a separating functional vanishing on the common
    face is searched for among differences of the cell height functionals,
    which always works for regular triangulations.
    """
    pts = T.config.points
    psis = {}
    for c in T.maximal_cones:
        psis[c] = solve_rational([pts[j] for j in c], [T.height[j] for j in c])
    for c1, c2 in combinations(T.maximal_cones, 2):
        f = [a - b for a, b in zip(psis[c1], psis[c2])]
        common = set(c1) & set(c2)
        if any(dot(f, pts[j]) != 0 for j in common):
            return False
        if any(dot(f, pts[j]) < 0 for j in c1) or any(dot(f, pts[j]) > 0 for j in c2):
            return False
        if any(dot(f, pts[j]) == 0 for j in set(c1) - common):
            return False
        if any(dot(f, pts[j]) == 0 for j in set(c2) - common):
            return False
    return True


# ---------------------------------------------------------------------------
# circuits

@dataclass(frozen=True)
class Circuit:
    h: LatticeVector
    I_plus: Tuple[int, ...]
    I_minus: Tuple[int, ...]

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(sorted(self.I_plus + self.I_minus))

    def cones_for(self, F, side: int):
        """Cones ``F + (I minus v)`` for ``v`` on the given side (+1 or -1)."""
        I = set(self.support)
        vs = self.I_plus if side > 0 else self.I_minus
        return [tuple(sorted(set(F) | (I - {v}))) for v in vs]

    def flipped(self) -> "Circuit":
        return Circuit(tuple(-x for x in self.h), self.I_minus, self.I_plus)


def _circuit_from_vector(h) -> Circuit:
    return Circuit(tuple(h), tuple(j for j, x in enumerate(h) if x > 0),
                   tuple(j for j, x in enumerate(h) if x < 0))


def _separating_sets(cones, circuit: Circuit, side: int):
    """Return the sets F for cones of form F + (I minus v), v on ``side``."""
    I = set(circuit.support)
    vs = set(circuit.I_plus if side > 0 else circuit.I_minus)
    Fs = set()
    for c in cones:
        missing = I - set(c)
        if len(missing) != 1 or not missing <= vs:
            return None
        Fs.add(tuple(sorted(set(c) - I)))
    return Fs


def find_circuit(T_plus: Triangulation, T_minus: Triangulation) -> Circuit:
    """Circuit relating two adjacent triangulations.

    The sign is chosen so that the removed cones of ``T_plus`` are the
    cones ``F + (I minus v)`` with ``v`` in ``I_plus``.

    Raises
    ------
    NotAdjacent
    """
    if T_plus.config != T_minus.config:
        raise NotAdjacent("triangulations of different configurations")
    P, M = set(T_plus.maximal_cones), set(T_minus.maximal_cones)
    removed, added = P - M, M - P
    if not removed or not added:
        raise NotAdjacent("triangulations coincide or are not of flip form")
    verts = sorted({j for c in removed | added for j in c})
    pts = T_plus.config.points
    d = T_plus.config.d
    for size in range(2, d + 2):
        for S in combinations(verts, size):
            ns = nullspace([[pts[j][i] for j in S] for i in range(d)])
            if len(ns) != 1 or any(x == 0 for x in ns[0]):
                continue
            base = [0] * len(pts)
            for j, x in zip(S, primitive(ns[0])):
                base[j] = x
            for sign in (1, -1):
                circ = _circuit_from_vector([sign * x for x in base])
                Fs = _separating_sets(removed, circ, +1)
                if Fs is None:
                    continue
                exp_removed = {c for F in Fs for c in circ.cones_for(F, +1)}
                exp_added = {c for F in Fs for c in circ.cones_for(F, -1)}
                if exp_removed == removed and exp_added == added:
                    return circ
    raise NotAdjacent("symmetric difference is not a single circuit modification")


@dataclass(frozen=True)
class EssentialData:
    side: int
    cones: Tuple[Cone, ...]
    separating_sets: Tuple[Cone, ...]


def essential_cones(T: Triangulation, circuit: Circuit) -> EssentialData:
    """Essential maximal cones of ``T`` with respect to a circuit.

    A cone ``F + (I minus v)`` (``v`` on T's side) is essential when
    ``F + (I minus v')`` is a cone of ``T`` for every ``v'`` on that side.
    """
    I = set(circuit.support)
    cones = set(T.maximal_cones)
    for side in (1, -1):
        vs = circuit.I_plus if side > 0 else circuit.I_minus
        Fs = set()
        for c in cones:
            missing = I - set(c)
            if len(missing) == 1 and missing <= set(vs):
                F = tuple(sorted(set(c) - I))
                if all(x in cones for x in circuit.cones_for(F, side)):
                    Fs.add(F)
        if Fs:
            es = sorted({x for F in Fs for x in circuit.cones_for(F, side)})
            return EssentialData(side, tuple(es), tuple(sorted(Fs)))
    raise NotAdjacent("triangulation is not supported on the circuit")


def apply_modification(T: Triangulation, circuit: Circuit) -> Tuple[Cone, ...]:
    """Cones obtained from ``T`` by the modification along ``circuit``."""
    ess = essential_cones(T, circuit)
    keep = [c for c in T.maximal_cones if c not in ess.cones]
    new = [x for F in ess.separating_sets for x in circuit.cones_for(F, -ess.side)]
    return tuple(sorted(set(keep) | set(new)))


def hat_fan(T_plus: Triangulation, T_minus: Triangulation, circuit: Optional[Circuit] = None):
    """The common weighted blowup fan of a flip.

    The new vector ``v_hat = sum_{I_plus} h_j v_j`` gets index ``n``.
    Every essential cone is replaced by the cones
    ``F + {v_hat} + I minus {v_plus, v_minus}``.

    Returns
    -------
    (StackyFan, v_hat)
    """
    if circuit is None:
        circuit = find_circuit(T_plus, T_minus)
    cfg = T_plus.config
    vhat = cfg.combine([circuit.h[j] if j in circuit.I_plus else 0 for j in range(cfg.n)])
    ess_p = essential_cones(T_plus, circuit)
    ess_m = essential_cones(T_minus, circuit)
    common = [c for c in T_plus.maximal_cones if c not in ess_p.cones]
    if sorted(common) != sorted(c for c in T_minus.maximal_cones if c not in ess_m.cones):
        raise NotAdjacent("unessential cones differ between the two sides")
    I = set(circuit.support)
    new = set()
    for F in ess_p.separating_sets:
        for vp in circuit.I_plus:
            for vm in circuit.I_minus:
                new.add(tuple(sorted(set(F) | (I - {vp, vm}) | {cfg.n})))
    vectors = tuple(cfg.points) + (tuple(vhat),)
    return StackyFan(vectors, tuple(sorted(set(common) | new))), tuple(vhat)
