from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from gkzflop.lattice_core import determinant, lattice_index
from gkzflop.triangulation import (DegenerateHeight, NotACone, NotAdjacent, NotGenerating, NotGraded,
                                   apply_modification, box_elements, cells_meet_properly, essential_cones,
                                   find_circuit, hat_fan, normalized_volume, quotient_fan,
                                   regular_triangulation, validate_configuration)

from conftest import A1_POINTS, A2_POINTS, CONIFOLD_POINTS


class TestConfiguration:
    def test_a1(self, a1):
        cfg = a1["config"]
        assert cfg.relation_basis in (((1, -2, 1),), ((-1, 2, -1),))
        assert cfg.height == (1, 0)

    def test_not_graded(self):
        with pytest.raises(NotGraded):
            validate_configuration([(2, 0), (2, 2)], (1, 0))

    def test_not_generating(self):
        with pytest.raises(NotGenerating):
            validate_configuration([(1, 0), (1, 2)])

    def test_relations(self, all_triangulations):
        for T in all_triangulations:
            cfg = T.config
            for l in cfg.relation_basis:
                assert all(sum(l[j] * cfg.points[j][i] for j in range(cfg.n)) == 0 for i in range(cfg.d))


class TestRegularTriangulation:
    def test_a1(self, a1):
        assert a1["coarse"].maximal_cones == ((0, 2),)
        assert a1["fine"].maximal_cones == ((0, 1), (1, 2))

    def test_conifold(self, conifold):
        assert conifold["minus"].maximal_cones == ((0, 1, 3), (0, 2, 3))
        assert conifold["plus"].maximal_cones == ((0, 1, 2), (1, 2, 3))

    def test_degenerate(self, a1):
        with pytest.raises(DegenerateHeight):
            regular_triangulation(a1["config"], (0, 0, 0))

    def test_volume_and_tiling(self, all_triangulations):
        for T in all_triangulations:
            vol = sum(lattice_index([T.config.points[j] for j in c]) for c in T.maximal_cones)
            assert vol == normalized_volume(T.config)
            assert cells_meet_properly(T)

    @given(st.lists(st.integers(-6, 6), min_size=4, max_size=4))
    @settings(max_examples=40, deadline=None)
    def test_random_heights_a2(self, w):
        cfg = validate_configuration(A2_POINTS)
        try:
            T = regular_triangulation(cfg, w)
        except DegenerateHeight:
            return
        assert sum(lattice_index([cfg.points[j] for j in c]) for c in T.maximal_cones) == 3
        assert cells_meet_properly(T)

    def test_volumes(self, a1, a2, conifold, simplex):
        assert normalized_volume(a1["config"]) == 2
        assert normalized_volume(a2["config"]) == 3
        assert normalized_volume(conifold["config"]) == 2
        assert normalized_volume(simplex["config"]) == 1


class TestBox:
    def test_a1(self, a1):
        B = box_elements(a1["coarse"])
        assert [b.v for b in B] == [(0, 0), (1, 1)]
        assert B[1].q == (Fraction(1, 2), 0, Fraction(1, 2)) and B[1].sigma_v == (0, 2)
        assert [b.v for b in box_elements(a1["fine"])] == [(0, 0)]

    def test_conifold(self, conifold):
        for k in ("plus", "minus"):
            assert [b.v for b in box_elements(conifold[k])] == [(0, 0, 0)]

    def test_invariants(self, all_triangulations):
        for T in all_triangulations:
            B = box_elements(T)
            assert B == sorted(B, key=lambda b: b.v)
            for b in B:
                v = tuple(sum(q * T.config.points[j][i] for j, q in enumerate(b.q)) for i in range(T.config.d))
                assert v == b.v
                assert all(0 <= q < 1 for q in b.q)
                assert all(q == 0 for j, q in enumerate(b.q) if j not in b.sigma_v)
                assert set(b.sigma_v) == {j for j, q in enumerate(b.q) if q}
            # one element per coset per cell, counted with cells containing sigma(v)
            for c in T.maximal_cones:
                inside = [b for b in B if set(b.sigma_v) <= set(c)]
                assert len(inside) == lattice_index([T.config.points[j] for j in c])


class TestCircuit:
    def test_a1(self, a1):
        c = find_circuit(a1["fine"], a1["coarse"])
        assert c.h == (1, -2, 1) and c.I_plus == (0, 2) and c.I_minus == (1,)

    def test_conifold(self, conifold):
        c = find_circuit(conifold["plus"], conifold["minus"])
        assert c.h == (1, -1, -1, 1) and c.I_plus == (0, 3) and c.I_minus == (1, 2)

    def test_same(self, a1):
        with pytest.raises(NotAdjacent):
            find_circuit(a1["fine"], a1["fine"])

    def test_essential(self, a1, conifold):
        c = find_circuit(a1["fine"], a1["coarse"])
        e = essential_cones(a1["fine"], c)
        assert e.cones == ((0, 1), (1, 2)) and e.separating_sets == ((),)
        assert essential_cones(a1["coarse"], c).cones == ((0, 2),)
        cc = find_circuit(conifold["plus"], conifold["minus"])
        assert essential_cones(conifold["plus"], cc).cones == ((0, 1, 2), (1, 2, 3))

    def test_modification_round_trip(self, a1, a2, conifold):
        pairs = [(a1["fine"], a1["coarse"]), (conifold["plus"], conifold["minus"]),
                 (a2["fine"], a2["left"]), (a2["fine"], a2["right"]), (a2["left"], a2["coarse"])]
        for Tp, Tm in pairs:
            c = find_circuit(Tp, Tm)
            assert sum(h * p[i] for h, p in zip(c.h, Tp.config.points) for i in [0]) == 0
            assert tuple(sorted(apply_modification(Tp, c))) == tuple(sorted(Tm.maximal_cones))


class TestHatFan:
    def test_a1(self, a1):
        fan, vhat = hat_fan(a1["fine"], a1["coarse"])
        assert vhat == (2, 2)
        assert fan.cones == ((0, 3), (2, 3))

    def test_conifold(self, conifold):
        fan, vhat = hat_fan(conifold["plus"], conifold["minus"])
        assert vhat == (2, 1, 1)  # v_0 + v_3
        assert sorted(fan.cones) == sorted([(0, 1, 4), (1, 3, 4), (2, 3, 4), (0, 2, 4)])


class TestQuotientFan:
    def test_trivial(self, a1):
        assert quotient_fan(a1["fine"].fan, ()).cones == a1["fine"].fan.cones

    def test_point(self, a1):
        Q = quotient_fan(a1["coarse"].fan, (0, 2))
        assert Q.cones == ((),)

    def test_line(self, a1):
        Q = quotient_fan(a1["fine"].fan, (1,))
        assert Q.cones == ((0,), (2,))
        assert Q.vectors[0] == tuple(-x for x in Q.vectors[2]) and Q.vectors[1] == (0,)

    def test_not_a_cone(self, a1):
        with pytest.raises(NotACone):
            quotient_fan(a1["fine"].fan, (0, 2))


def test_volume_matches_determinant_sum(all_triangulations):
    # the simplices of a triangulation tile the hull, so their |det| add up to the normalized volume
    for T in all_triangulations:
        pts = T.config.points
        total = sum(abs(determinant([pts[j] for j in c])) for c in T.maximal_cones)
        assert total == normalized_volume(T.config), T.name
