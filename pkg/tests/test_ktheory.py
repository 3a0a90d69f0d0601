import cmath
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkzflop.ktheory import (ContourCollision, JetFunction, SingularPoint, apply_function, build_kring,
                             cauchy_function, ch_isomorphism, default_radii, nilpotency_order, nilpotent_exp,
                             numeric_taylor, root_of_unity, verify_presentation)
from gkzflop.sr_ring import quotient_basis
from gkzflop.triangulation import normalized_volume, regular_triangulation, validate_configuration

from battery import _poly_jet, battery
from conftest import A1_POINTS


def radii_for(K):
    # contours stay clear of the poles at 0 and 3 used by the battery
    return [min(0.4, r) for r in default_radii(K)]


@pytest.fixture(scope="module")
def krings(all_triangulations):
    return [(T, build_kring(T)) for T in all_triangulations]


class TestScalars:
    def test_roots(self):
        assert root_of_unity(Fraction(0)) == 1
        assert abs(root_of_unity(Fraction(1, 2)) + 1) < 1e-16
        assert abs(root_of_unity(Fraction(1, 4)) - 1j) < 1e-16
        assert abs(root_of_unity(Fraction(-1, 3)) - cmath.exp(-2j * cmath.pi / 3)) < 1e-15

    def test_nilpotent(self):
        D = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex)
        assert nilpotency_order(D) == 3
        E = nilpotent_exp(D, 2.0)
        assert np.allclose(E, np.eye(3) + 2 * D + 2 * D @ D)
        assert np.allclose(nilpotent_exp(D) @ nilpotent_exp(D, -1.0), np.eye(3))
        with pytest.raises(ValueError):
            nilpotency_order(np.eye(2))


class TestPresentation:
    def test_dimensions(self, krings):
        for T, K in krings:
            assert K.dim == normalized_volume(T.config)

    def test_relations(self, krings):
        for _, K in krings:
            w = verify_presentation(K)
            assert max(v for k, v in w.items() if k != "dimension") <= 1e-10

    def test_a1_coarse(self, a1):
        K = build_kring(a1["coarse"])
        # two sectors: untwisted and the twisted sector with angles (1/2, 0, 1/2)
        assert [tuple(s.box.v) for s in K.sectors] == [(0, 0), (1, 1)]
        assert np.allclose(np.diag(K.R[0]), [1, -1])
        assert np.allclose(K.R[1], np.eye(2))
        assert K.sector_by_angles((Fraction(1, 2), 0, Fraction(1, 2))) == 1

    def test_a1_fine_unipotent(self, a1):
        K = build_kring(a1["fine"])
        for j in range(3):
            assert nilpotency_order(K.R[j] - np.eye(2)) <= 2
        # (1 - R_0)(1 - R_2) = 0 since {0, 2} is not a cone
        assert np.allclose((np.eye(2) - K.R[0]) @ (np.eye(2) - K.R[2]), 0)

    def test_monomial_inverse(self, krings):
        for _, K in krings:
            m = list(range(1, K.n + 1))
            assert np.allclose(K.monomial(m) @ K.monomial([-x for x in m]), np.eye(K.dim))

    def test_unit(self, krings):
        for _, K in krings:
            e = K.unit()
            assert e.sum() == len(K.sectors)
            for k in range(len(K.sectors)):
                assert np.allclose(K.projector(k) @ K.projector(k), K.projector(k))


class TestCh:
    def test_intertwines(self, krings):
        for T, K in krings:
            S = quotient_basis(T)
            C = ch_isomorphism(K, S)
            assert abs(np.linalg.det(C)) > 1e-8


class TestFunctionalCalculus:
    def test_battery_agrees(self, krings):
        for _, K in krings:
            radii = radii_for(K)
            for f in battery(K.n):
                a = apply_function(K, f)
                c = cauchy_function(K, f, radii, 64)
                assert np.max(np.abs(a - c)) <= 1e-10, (f.name, K.dim)

    def test_node_doubling(self, a1, conifold):
        for T in (a1["fine"], a1["coarse"], conifold["plus"]):
            K = build_kring(T)
            radii = radii_for(K)
            for f in battery(K.n):
                delta = np.max(np.abs(cauchy_function(K, f, radii, 64) - cauchy_function(K, f, radii, 128)))
                assert delta <= 1e-10, f.name

    def test_polynomial_exact(self, a1):
        # a polynomial by jets is the matrix polynomial
        K = build_kring(a1["fine"])
        f = battery(K.n)[1]  # r^2 - 2r in the last variable
        R = K.R[K.n - 1]
        assert np.allclose(apply_function(K, f), R @ R - 2 * R)

    def test_jets_match_numeric(self):
        for f in battery(3):
            assert f.check((1.0 + 0j, -1.0 + 0j, 0.5 + 0.5j), (3, 1, 3)), f.name

    def test_numeric_taylor_fft(self):
        # a plain Python function that rejects mpmath input goes through the FFT route
        def g(r):
            return complex(np.exp(complex(r[0])))

        c = numeric_taylor(g, (0.3 + 0j,), (4,), (0,))
        for k in range(4):
            assert abs(c[(k,)] - cmath.exp(0.3) / [1, 1, 2, 6][k]) < 1e-10

    def test_singular(self, a1):
        K = build_kring(a1["coarse"])
        f = JetFunction(lambda r: 1 / r[0], 3, variables=(0,), singular=lambda b: abs(b[0] + 1) < 1e-12)
        with pytest.raises(SingularPoint):
            apply_function(K, f)

    def test_collision(self, a1):
        K = build_kring(a1["coarse"])
        with pytest.raises(ContourCollision):
            cauchy_function(K, battery(3)[0], [2.5, 2.5, 2.5])

    @given(st.lists(st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False),
                    min_size=3, max_size=3))
    @settings(max_examples=20, deadline=None)
    def test_linear_functions(self, c):
        # f = sum c_j r_j has f(R) = sum c_j R_j exactly
        n = 3
        f = JetFunction.separable({0: lambda x: x}, n, {0: _poly_jet([0, 1])})
        T = regular_triangulation(validate_configuration(A1_POINTS), (0, 1, 0))
        K = build_kring(T)
        total = sum(cj * R for cj, R in zip(c, K.R))
        got = sum(cj * apply_function(K, JetFunction.separable({j: lambda x: x}, n, {j: _poly_jet([0, 1])}))
                  for j, cj in enumerate(c))
        assert np.allclose(got, total)
        assert np.allclose(apply_function(K, f), K.R[0])
