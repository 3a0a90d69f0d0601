from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkzflop.gamma_series import (OutsideDomain, TailBoundExceeded, TruncationPolicy, choose_exponents,
                                  enumerate_support, evaluate_leading, evaluate_Psi, evaluate_Xi,
                                  leading_module, ms_map, reciprocal_gamma_taylor, rgamma_taylor_batch,
                                  series_terms, support, support_in_series_cone, witness_cone, xi_residuals)
from gkzflop.cli import default_point
from gkzflop.ktheory import build_kring, ch_isomorphism
from gkzflop.secondary_geometry import lattice_norm
from gkzflop.sr_ring import quotient_basis

from conftest import point


def scalar_series(z, h, gamma, c, ks):
    """``sum_k prod_j z_j^{k h_j + gamma_j + c_j e} / Gamma(k h_j + gamma_j + c_j e + 1)`` as a function of e."""
    def F(e):
        s = mpmath.mpc(0)
        for k in ks:
            t = mpmath.mpc(1)
            for j in range(len(h)):
                g = Fraction(gamma[j])
                a = k * h[j] + mpmath.mpf(g.numerator) / g.denominator + c[j] * e
                t *= mpmath.exp(a * mpmath.log(z[j])) * mpmath.rgamma(a + 1)
            s += t
        return s
    return F


class TestReciprocalGamma:
    @given(st.floats(-6, 6, allow_nan=False), st.integers(1, 5))
    @settings(max_examples=40, deadline=None)
    def test_against_mpmath(self, x, order):
        got = reciprocal_gamma_taylor(x, order)
        ref = mpmath.taylor(lambda t: mpmath.rgamma(t + 1), x, order - 1)
        for a, b in zip(got, ref):
            assert abs(a - complex(b)) <= 1e-12 * max(1, abs(complex(b)))

    def test_integer_zeros(self):
        # 1/Gamma(s + 1) vanishes at s = -1, -2, ... with derivative (-1)^{k-1} (k-1)!
        assert reciprocal_gamma_taylor(-1.0, 2)[:2] == [0, 1]
        c = reciprocal_gamma_taylor(-3.0, 2)
        assert c[0] == 0 and abs(c[1] - 2) < 1e-14

    def test_batch(self):
        s = np.array([0.25, -2.0, 3.5])
        B = rgamma_taylor_batch(s, 4)
        for row, x in zip(B, s):
            assert np.allclose(row, reciprocal_gamma_taylor(float(x), 4), atol=1e-12)


class TestExponents:
    def test_a1(self, a1):
        assert choose_exponents(a1["fine"]).gamma((0, 0)) == (0, 0, 0)
        ch = choose_exponents(a1["coarse"])
        assert ch.gamma((1, 1)) == (Fraction(1, 2), -1, Fraction(1, 2))

    def test_relation(self, all_triangulations):
        # sum_j gamma_j v_j = beta and the fractional parts are the Box angles
        for T in all_triangulations:
            cfg = T.config
            beta = cfg.points[0]
            ch = choose_exponents(T, beta)
            for b in T.box_elements():
                g = ch.gamma(tuple(b.v))
                assert tuple(sum(x * p[i] for x, p in zip(g, cfg.points)) for i in range(cfg.d)) == tuple(beta)
                assert tuple(Fraction(x) % 1 for x in g) == tuple(b.q)


class TestSupport:
    def test_support_sets(self, a1):
        assert support((1, -2, 1), (0, 0, 0)) == (1,)
        assert support((-1, 2, -1), (0, 0, 0)) == (0, 2)
        assert witness_cone(a1["fine"].maximal_cones, (1,)) == (0, 1)
        assert witness_cone(a1["fine"].maximal_cones, (0, 2)) is None

    def test_enumeration(self, a1):
        assert enumerate_support(a1["fine"], (0, 0, 0), 4).terms == ((0, 0, 0), (1, -2, 1), (2, -4, 2))
        g = choose_exponents(a1["coarse"]).gamma((1, 1))
        assert enumerate_support(a1["coarse"], g, 4).terms == ((-1, 2, -1), (-2, 4, -2))

    def test_in_series_cone(self, all_triangulations):
        for T in all_triangulations:
            ch = choose_exponents(T)
            for b in T.box_elements():
                enum = enumerate_support(T, ch.gamma(tuple(b.v)), 6)
                assert support_in_series_cone(T, enum)


class TestXi:
    def test_a1_fine_oracle(self, a1):
        T = a1["fine"]
        K = build_kring(T)
        z = point([9, -9, 9], [0.1, -0.2, 0.1])
        v = evaluate_Xi(K, choose_exponents(T), z, TruncationPolicy(bound=12)).vector
        # the sector is C[e]/e^2 with N_j = c_j e
        c = [complex(N[1, 0]) for N in K.N]
        F = scalar_series(z, (1, -2, 1), (0, 0, 0), c, range(30))
        assert abs(v[0] - complex(F(0))) < 1e-13
        assert abs(v[1] - complex(mpmath.diff(F, 0))) < 1e-12

    def test_a1_coarse_twisted_oracle(self, a1):
        T = a1["coarse"]
        K = build_kring(T)
        z = point([-9, 9, -9], [0.1, -0.2, 0.1])
        ch = choose_exponents(T)
        v = evaluate_Xi(K, ch, z, TruncationPolicy(bound=12)).vector
        F = scalar_series(z, (1, -2, 1), ch.gamma((1, 1)), (0, 0, 0), range(-30, 1))
        assert abs(v[K.sector_of((1, 1))] - complex(F(0))) < 1e-13
        assert abs(v[K.sector_of((0, 0))] - 1) < 1e-14

    def test_simplex(self, simplex):
        T = simplex["simplex"]
        K = build_kring(T)
        ch = choose_exponents(T, (3, 1, 1))
        # a single term z_0 z_1 z_2 / (Gamma(2) Gamma(2) Gamma(2))
        v = evaluate_Xi(K, ch, [2.0, 3.0, 0.5]).vector
        assert abs(v[0] - 3.0) < 1e-14

    def test_tail_bound_dominates(self, a1, a2):
        # truncation error against a long truncation, with an eps-sized floor for summation order
        for T in (a1["fine"], a1["coarse"], a2["left"], a2["right"], a2["coarse"]):
            K = build_kring(T)
            for idx in range(2):
                z = default_point(T, idx)
                ch = choose_exponents(T)
                hi = evaluate_Xi(K, ch, z, TruncationPolicy(bound=30))
                for b in (2, 4, 8, 12):
                    lo = evaluate_Xi(K, ch, z, TruncationPolicy(bound=b))
                    err = np.max(np.abs(lo.vector - hi.vector))
                    assert err <= lo.tail_bound + 1e-15 * np.max(np.abs(hi.vector)), (T.name, b)

    def test_leading_terms_near_origin(self, a2):
        # the exponent choice keeps some support element of every sector at small norm
        for k in ("left", "right", "coarse"):
            T = a2[k]
            ch = choose_exponents(T)
            for b in T.box_elements():
                enum = enumerate_support(T, ch.gamma(tuple(b.v)), 4)
                assert len(enum) and min(lattice_norm(l) for l in enum.terms) <= 2

    def test_outside_domain(self, a1):
        K = build_kring(a1["fine"])
        with pytest.raises(OutsideDomain):
            evaluate_Xi(K, choose_exponents(a1["fine"]), [1.0, 1.0, 1.0])

    def test_tolerance(self, a1):
        K = build_kring(a1["fine"])
        z = point([4, -4, 4], [0.1, -0.2, 0.1])
        with pytest.raises(TailBoundExceeded):
            evaluate_Xi(K, choose_exponents(a1["fine"]), z, TruncationPolicy(bound=2, tolerance=1e-30))

    def test_ms_map(self, a1):
        T = a1["fine"]
        K = build_kring(T)
        ch = choose_exponents(T)
        z = point([9, -9, 9], [0.1, -0.2, 0.1])
        v = evaluate_Xi(K, ch, z).vector
        assert ms_map(K, ch, [0, 1], z) == pytest.approx(v[1], abs=1e-15)
        assert ms_map(K, ch, [0, 0], z) == 0

    def test_psi_matches_ch(self, a1):
        # the cohomology-valued series is the image of the K-valued one under Ch
        T = a1["fine"]
        K = build_kring(T)
        S = quotient_basis(T)
        ch = choose_exponents(T)
        z = point([9, -9, 9], [0.1, -0.2, 0.1])
        xi = evaluate_Xi(K, ch, z).vector
        psi = evaluate_Psi(S, ch, z).vector
        assert np.allclose(ch_isomorphism(K, S) @ xi, psi, atol=1e-12)


class TestResiduals:
    def test_a1(self, a1):
        for T, w in ((a1["fine"], [6, -6, 6]), (a1["coarse"], [-6, 6, -6])):
            K = build_kring(T)
            for beta in ((0, 0), (-2, -2)):
                r = xi_residuals(K, choose_exponents(T, beta), point(w, [0.1, -0.2, 0.1]))
                assert max(r["max_box"], r["max_euler"]) <= r["bound"] <= 1e-8

    def test_terms_cover_series(self, a1):
        T = a1["fine"]
        K = build_kring(T)
        ch = choose_exponents(T)
        z = point([9, -9, 9], [0.1, -0.2, 0.1])
        F = series_terms(K, ch, 12)
        assert np.allclose(F.evaluate(z), evaluate_Xi(K, ch, z).vector, atol=1e-13)


class TestLeading:
    def test_a1_interior(self, a1):
        T = a1["coarse"]
        M = leading_module(T, (-2, -2))
        assert M.basis == [(1, 1), (2, 2)]
        ch = choose_exponents(T, (-2, -2))
        z = point([-6, 6, -6], [0.1, -0.2, 0.1])
        v = evaluate_leading(M, ch, z).vector
        assert np.all(np.isfinite(v)) and np.any(np.abs(v) > 0)

    def test_beta_mismatch(self, a1):
        T = a1["coarse"]
        M = leading_module(T, (-2, -2))
        with pytest.raises(ValueError):
            evaluate_leading(M, choose_exponents(T, (0, 0)), point([-6, 6, -6], [0, 0, 0]))
