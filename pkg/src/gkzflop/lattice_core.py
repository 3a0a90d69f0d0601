"""Exact integer and rational linear algebra.

Everything here works over Python integers and ``fractions.Fraction``;
there is no floating point in this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from itertools import combinations
from math import gcd
from typing import Iterable, Optional, Sequence, Tuple

LatticeVector = Tuple[int, ...]
RationalVector = Tuple[Fraction, ...]


class LatticeError(ValueError):
    """Raised on degenerate input to a lattice routine."""


@dataclass(frozen=True)
class IntegerMatrix:
    """Immutable integer matrix stored row-major."""

    entries: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.entries) == 0:
            return
        width = len(self.entries[0])
        if any(len(r) != width for r in self.entries):
            raise LatticeError("ragged matrix")

    @classmethod
    def from_rows(cls, rows, cols: Optional[int] = None) -> "IntegerMatrix":
        rows = tuple(tuple(int(x) for x in r) for r in rows)
        if cols is not None and len(rows) == 0:
            return cls(())
        return cls(rows)

    @classmethod
    def from_columns(cls, columns) -> "IntegerMatrix":
        columns = [tuple(int(x) for x in c) for c in columns]
        if not columns:
            return cls(())
        return cls(tuple(zip(*columns)))

    @classmethod
    def identity(cls, n: int) -> "IntegerMatrix":
        return cls(tuple(tuple(int(i == j) for j in range(n)) for i in range(n)))

    @property
    def rows(self) -> int:
        return len(self.entries)

    @property
    def cols(self) -> int:
        return len(self.entries[0]) if self.entries else 0

    def column(self, j: int) -> LatticeVector:
        return tuple(r[j] for r in self.entries)

    def columns(self):
        return [self.column(j) for j in range(self.cols)]

    def transpose(self) -> "IntegerMatrix":
        if not self.entries:
            return IntegerMatrix(())
        return IntegerMatrix(tuple(zip(*self.entries)))

    def __matmul__(self, other):
        if isinstance(other, IntegerMatrix):
            cols = list(zip(*other.entries))
            return IntegerMatrix(tuple(
                tuple(sum(a * b for a, b in zip(r, c)) for c in cols)
                for r in self.entries))
        return tuple(sum(a * b for a, b in zip(r, other)) for r in self.entries)

    def to_list(self):
        return [list(r) for r in self.entries]


# ---------------------------------------------------------------------------
# rational linear algebra helpers

def _frac_rows(rows) -> list:
    return [[Fraction(x) for x in r] for r in rows]


def rref(rows):
    """Reduced row echelon form over Q.

    Returns
    -------
    (R, pivots) : list of Fraction rows and the pivot column indices.
    """
    m = _frac_rows(rows)
    if not m:
        return [], []
    ncols = len(m[0])
    pivots = []
    r = 0
    for c in range(ncols):
        p = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if p is None:
            continue
        m[r], m[p] = m[p], m[r]
        inv = 1 / m[r][c]
        m[r] = [x * inv for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == len(m):
            break
    return m[:r], pivots


def rank(rows) -> int:
    return len(rref(rows)[1])


def nullspace(rows, ncols: Optional[int] = None):
    """Basis of the right kernel {x : rows . x = 0} over Q."""
    rows = list(rows)
    if not rows:
        if ncols is None:
            raise LatticeError("need ncols for an empty matrix")
        return [tuple(Fraction(int(i == j)) for j in range(ncols)) for i in range(ncols)]
    ncols = len(rows[0])
    R, piv = rref(rows)
    free = [c for c in range(ncols) if c not in piv]
    basis = []
    for f in free:
        x = [Fraction(0)] * ncols
        x[f] = Fraction(1)
        for i, p in enumerate(piv):
            x[p] = -R[i][f]
        basis.append(tuple(x))
    return basis


def solve_rational(rows, rhs) -> Optional[RationalVector]:
    """One solution of rows . x = rhs over Q, or None."""
    rows = list(rows)
    ncols = len(rows[0])
    aug = [list(r) + [b] for r, b in zip(rows, rhs)]
    R, piv = rref(aug)
    if ncols in piv:
        return None
    x = [Fraction(0)] * ncols
    for i, p in enumerate(piv):
        x[p] = R[i][ncols]
    return tuple(x)


def determinant(rows) -> Fraction:
    m = _frac_rows(rows)
    n = len(m)
    if n == 0:
        return Fraction(1)
    if any(len(r) != n for r in m):
        raise LatticeError("determinant of a non-square matrix")
    det = Fraction(1)
    for c in range(n):
        p = next((i for i in range(c, n) if m[i][c] != 0), None)
        if p is None:
            return Fraction(0)
        if p != c:
            m[c], m[p] = m[p], m[c]
            det = -det
        det *= m[c][c]
        for i in range(c + 1, n):
            if m[i][c] != 0:
                f = m[i][c] / m[c][c]
                m[i] = [a - f * b for a, b in zip(m[i], m[c])]
    return det


def inverse(rows):
    """Inverse over Q of a square matrix, as a list of Fraction rows."""
    n = len(rows)
    aug = [list(r) + [int(i == j) for j in range(n)] for i, r in enumerate(rows)]
    R, piv = rref(aug)
    if piv[:n] != list(range(n)):
        raise LatticeError("singular matrix")
    return [row[n:] for row in R]


def primitive(vec) -> LatticeVector:
    """Scale a rational vector by a positive factor to a primitive integer vector."""
    vec = [Fraction(x) for x in vec]
    den = reduce(lambda a, b: a * b // gcd(a, b), (x.denominator for x in vec), 1)
    ints = [int(x * den) for x in vec]
    g = reduce(gcd, (abs(x) for x in ints), 0)
    if g == 0:
        return tuple(ints)
    return tuple(x // g for x in ints)


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# normal forms

def hermite_normal_form(M: IntegerMatrix):
    """Row-style Hermite normal form.

    Parameters
    ----------
    M : IntegerMatrix

    Returns
    -------
    H, U : IntegerMatrix
        ``U`` is unimodular and ``U @ M == H``.  ``H`` is in row echelon
        form with positive pivots and entries above each pivot reduced
        into ``[0, pivot)``.
    """
    m, n = M.rows, M.cols
    H = [list(r) for r in M.entries]
    U = [[int(i == j) for j in range(m)] for i in range(m)]
    r = 0
    for c in range(n):
        if r == m:
            break
        # Euclid on column c among rows r..m-1
        while True:
            nz = [i for i in range(r, m) if H[i][c] != 0]
            if not nz:
                break
            p = min(nz, key=lambda i: abs(H[i][c]))
            H[r], H[p] = H[p], H[r]
            U[r], U[p] = U[p], U[r]
            done = True
            for i in range(r + 1, m):
                if H[i][c] != 0:
                    q = H[i][c] // H[r][c]
                    H[i] = [a - q * b for a, b in zip(H[i], H[r])]
                    U[i] = [a - q * b for a, b in zip(U[i], U[r])]
                    if H[i][c] != 0:
                        done = False
            if done:
                break
        if all(H[i][c] == 0 for i in range(r, m)):
            continue
        if H[r][c] < 0:
            H[r] = [-a for a in H[r]]
            U[r] = [-a for a in U[r]]
        for i in range(r):
            q = H[i][c] // H[r][c]
            if q:
                H[i] = [a - q * b for a, b in zip(H[i], H[r])]
                U[i] = [a - q * b for a, b in zip(U[i], U[r])]
        r += 1
    return IntegerMatrix.from_rows(H), IntegerMatrix.from_rows(U)


def hnf_pivots(H: IntegerMatrix):
    """Pivot columns of an echelon matrix, one per nonzero row."""
    piv = []
    for row in H.entries:
        nz = next((j for j, x in enumerate(row) if x != 0), None)
        if nz is None:
            break
        piv.append(nz)
    return piv


def smith_invariants(M: IntegerMatrix):
    """Invariant factors of an integer matrix (nonzero ones only)."""
    A = [list(r) for r in M.entries]
    m, n = M.rows, M.cols
    out = []
    t = 0
    while t < min(m, n):
        nz = [(abs(A[i][j]), i, j) for i in range(t, m) for j in range(t, n) if A[i][j] != 0]
        if not nz:
            break
        _, pi, pj = min(nz)
        A[t], A[pi] = A[pi], A[t]
        for row in A:
            row[t], row[pj] = row[pj], row[t]
        while True:
            changed = False
            for i in range(t + 1, m):
                if A[i][t]:
                    q = A[i][t] // A[t][t]
                    A[i] = [a - q * b for a, b in zip(A[i], A[t])]
                    if A[i][t]:
                        A[t], A[i] = A[i], A[t]
                        changed = True
            for j in range(t + 1, n):
                if A[t][j]:
                    q = A[t][j] // A[t][t]
                    for row in A:
                        row[j] -= q * row[t]
                    if A[t][j]:
                        for row in A:
                            row[t], row[j] = row[j], row[t]
                        changed = True
            if changed:
                continue
            bad = next(((i, j) for i in range(t + 1, m) for j in range(t + 1, n)
                        if A[i][j] % A[t][t]), None)
            if bad is None:
                break
            A[t] = [a + b for a, b in zip(A[t], A[bad[0]])]
        out.append(abs(A[t][t]))
        t += 1
    return out


def lll_reduce(basis, delta=Fraction(3, 4)):
    """LLL reduction of an integer basis (exact arithmetic)."""
    b = [list(v) for v in basis]
    k = len(b)
    if k <= 1:
        return [tuple(v) for v in b]

    def gso(vs):
        star, mu = [], [[Fraction(0)] * len(vs) for _ in vs]
        for i, v in enumerate(vs):
            w = [Fraction(x) for x in v]
            for j in range(i):
                mu[i][j] = dot(v, star[j]) / dot(star[j], star[j])
                w = [a - mu[i][j] * c for a, c in zip(w, star[j])]
            star.append(w)
        return star, mu

    i = 1
    while i < k:
        star, mu = gso(b)
        for j in range(i - 1, -1, -1):
            q = round(mu[i][j])
            if q:
                b[i] = [a - q * c for a, c in zip(b[i], b[j])]
                star, mu = gso(b)
        if dot(star[i], star[i]) >= (delta - mu[i][i - 1] ** 2) * dot(star[i - 1], star[i - 1]):
            i += 1
        else:
            b[i], b[i - 1] = b[i - 1], b[i]
            i = max(i - 1, 1)
    return [tuple(v) for v in b]


def _sign_normalize(v):
    nz = next((x for x in v if x != 0), 0)
    return tuple(-x for x in v) if nz < 0 else tuple(v)


def kernel_lattice(M: IntegerMatrix):
    """Z-basis of the integer kernel ``{l : M l = 0}``.

    The basis comes from the left transform of a Hermite form of ``M^T``,
    so it spans the full kernel lattice.  It is then LLL reduced and each
    vector is signed so its first nonzero entry is positive.
    """
    n = M.cols
    if M.rows == 0:
        return [tuple(int(i == j) for j in range(n)) for i in range(n)]
    H, U = hermite_normal_form(M.transpose())
    r = len(hnf_pivots(H))
    basis = [U.entries[i] for i in range(r, n)]
    basis = lll_reduce(basis)
    return [_sign_normalize(v) for v in basis]


def solve_integer(M: IntegerMatrix, rhs) -> Optional[LatticeVector]:
    """One integer solution of ``M x = rhs`` or None."""
    n = M.cols
    H, U = hermite_normal_form(M.transpose())
    piv = hnf_pivots(H)
    # x^T M^T = rhs^T with x^T = y^T U, so y^T H = rhs^T
    y = [0] * n
    resid = list(rhs)
    for i, c in enumerate(piv):
        if resid[c] % H.entries[i][c]:
            return None
        y[i] = resid[c] // H.entries[i][c]
        resid = [a - y[i] * b for a, b in zip(resid, H.entries[i])]
    if any(resid):
        return None
    return tuple(sum(y[i] * U.entries[i][j] for i in range(n)) for j in range(n))


def lattice_index(vectors) -> int:
    """Index of the sublattice spanned by ``d`` vectors in ``Z^d``."""
    det = determinant(vectors)
    if det == 0:
        raise LatticeError("vectors are linearly dependent")
    return abs(int(det))


# ---------------------------------------------------------------------------
# cones

@dataclass(frozen=True)
class RationalCone:
    """Cone of nonnegative combinations of finitely many generators."""

    generators: Tuple[RationalVector, ...]
    ambient_dim: int
    _dual: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        for g in self.generators:
            if len(g) != self.ambient_dim:
                raise LatticeError("generator dimension mismatch")

    @classmethod
    def from_generators(cls, gens, ambient_dim: Optional[int] = None) -> "RationalCone":
        gens = [tuple(Fraction(x) for x in g) for g in gens]
        gens = [g for g in gens if any(g)]
        if ambient_dim is None:
            if not gens:
                raise LatticeError("ambient dimension required for the zero cone")
            ambient_dim = len(gens[0])
        seen, uniq = set(), []
        for g in gens:
            key = primitive(g)
            if key not in seen:
                seen.add(key)
                uniq.append(tuple(Fraction(x) for x in key))
        return cls(tuple(uniq), ambient_dim)

    @classmethod
    def orthant(cls, d: int) -> "RationalCone":
        return cls.from_generators([[int(i == j) for j in range(d)] for i in range(d)])

    @classmethod
    def whole_space(cls, d: int) -> "RationalCone":
        gens = []
        for i in range(d):
            e = [int(i == j) for j in range(d)]
            gens += [e, [-x for x in e]]
        return cls.from_generators(gens, d)

    @property
    def dim(self) -> int:
        return rank(self.generators) if self.generators else 0

    def dual(self) -> "RationalCone":
        if not self._dual:
            self._dual.append(dual_cone(self))
        return self._dual[0]

    def contains(self, x) -> bool:
        return cone_contains(self, x)

    def is_full_dimensional(self) -> bool:
        return self.dim == self.ambient_dim

    def is_pointed(self) -> bool:
        return self.dual().is_full_dimensional()

    def interior_point(self) -> RationalVector:
        """Sum of generators; lies in the relative interior."""
        s = [Fraction(0)] * self.ambient_dim
        for g in self.generators:
            s = [a + b for a, b in zip(s, g)]
        return tuple(s)

    def integer_generators(self):
        return [primitive(g) for g in self.generators]


def dual_cone(C: RationalCone) -> RationalCone:
    """Dual cone ``{u : <u, x> >= 0 for all x in C}``.

    Extreme rays of the pointed part are found by brute force over tight
    constraint subsets; the lineality space (the orthogonal complement of
    the span of ``C``) is added as a pair of opposite generators per basis
    vector.  Fine for the small cones used here.
    """
    d = C.ambient_dim
    G = list(C.generators)
    if not G:
        return RationalCone.whole_space(d)
    k = rank(G)
    W = nullspace(G)  # lineality of the dual
    lineality = []
    for w in W:
        lineality.append(primitive(w))
        lineality.append(tuple(-x for x in primitive(w)))
    if k == 0:
        return RationalCone.from_generators(lineality, d)
    found = set()
    for S in combinations(range(len(G)), k - 1):
        rows = [G[i] for i in S] + list(W)
        if rows:
            ns = nullspace(rows)
        else:
            ns = [tuple(Fraction(int(i == j)) for j in range(d)) for i in range(d)]
        if len(ns) != 1:
            continue
        u = ns[0]
        for cand in (u, tuple(-x for x in u)):
            if all(dot(g, cand) >= 0 for g in G):
                key = primitive(cand)
                found.add(key)
    return RationalCone.from_generators(sorted(found) + lineality, d)


def cone_contains(C: RationalCone, x) -> bool:
    """Exact membership, decided by the facet description of ``C``.

    ``x`` lies in a closed cone iff it pairs nonnegatively with every
    generator of the dual cone.
    """
    x = [Fraction(v) for v in x]
    if len(x) != C.ambient_dim:
        raise LatticeError("dimension mismatch")
    if not any(x):
        return True
    return all(dot(f, x) >= 0 for f in C.dual().generators)


def cones_equal(C1: RationalCone, C2: RationalCone) -> bool:
    """Set equality by mutual containment of generators."""
    return (all(cone_contains(C2, g) for g in C1.generators)
            and all(cone_contains(C1, g) for g in C2.generators))


# ---------------------------------------------------------------------------
# semigroups

def grading_functional(A: IntegerMatrix) -> Tuple[Fraction, ...]:
    """The covector h with h(a) = 1 on every column of ``A``."""
    cols = A.columns()
    sol = solve_rational(cols, [1] * len(cols))
    if sol is None:
        raise LatticeError("columns do not lie on an affine hyperplane")
    return sol


class SemigroupOracle:
    """Membership in the semigroup generated by the columns of ``A``.

    Depth-first search by degree with memoized failures; every
    intermediate remainder is kept inside the cone spanned by the
    columns, which prunes most branches.
    """

    def __init__(self, A: IntegerMatrix, h=None):
        self.A = A
        self.columns = A.columns()
        self.h = tuple(Fraction(x) for x in h) if h is not None else grading_functional(A)
        cone = RationalCone.from_generators(self.columns, A.rows)
        self.facets = [primitive(f) for f in cone.dual().generators]
        self._fail = set()
        self.nodes_visited = 0

    def degree(self, target) -> Fraction:
        return dot(self.h, target)

    def in_cone(self, target) -> bool:
        return all(dot(f, target) >= 0 for f in self.facets)

    def member(self, target) -> Optional[LatticeVector]:
        target = tuple(int(x) for x in target)
        k = self.degree(target)
        if k < 0 or k.denominator != 1:
            return None
        k = int(k)
        if k == 0:
            return tuple(0 for _ in self.columns) if not any(target) else None
        if not self.in_cone(target):
            return None
        path = []
        if self._search(target, k, path):
            counts = [0] * len(self.columns)
            for j in path:
                counts[j] += 1
            return tuple(counts)
        return None

    def _search(self, target, k, path) -> bool:
        # explicit stack to avoid deep recursion
        stack = [(target, k, 0)]
        while stack:
            t, kk, j = stack[-1]
            if kk == 0:
                if not any(t):
                    return True
                self._fail.add(t)
                stack.pop()
                if path:
                    path.pop()
                continue
            if j >= len(self.columns):
                self._fail.add(t)
                stack.pop()
                if path:
                    path.pop()
                continue
            stack[-1] = (t, kk, j + 1)
            nxt = tuple(a - b for a, b in zip(t, self.columns[j]))
            self.nodes_visited += 1
            if nxt in self._fail or not self.in_cone(nxt):
                continue
            path.append(j)
            stack.append((nxt, kk - 1, 0))
        return False


def semigroup_member(A: IntegerMatrix, target, h=None) -> Optional[LatticeVector]:
    """Nonnegative integer ``x`` with ``A x = target``, or None.

    Examples
    --------
    >>> A = IntegerMatrix.from_columns([(1, 0), (1, 1), (1, 2)])
    >>> semigroup_member(A, (1, 3)) is None
    True
    """
    return SemigroupOracle(A, h).member(target)
