"""End-to-end acceptance checks on the bundled configurations.

Each criterion records one ``PASS``/``FAIL`` line (with its runtime) that
is printed in the terminal summary, then asserts.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from gkzflop import continuation as cont
from gkzflop.cli import cmd_verify, dumps, load_config
from gkzflop.gamma_series import TruncationPolicy, choose_exponents, evaluate_leading, leading_module, xi_residuals
from gkzflop.ktheory import apply_function, build_kring, cauchy_function, default_radii
from gkzflop.lattice_core import RationalCone, dot
from gkzflop.secondary_geometry import _lift, cmath_rect, domain_contains, domain_for
from gkzflop.sr_ring import mbeta_quotient, quotient_basis
from gkzflop.triangulation import normalized_volume

from battery import battery
from conftest import ACCEPTANCE_LINES

# a lattice point of -K strictly inside, for each configuration
INTERIOR_BETA = {2: {3: (-2, -2), 4: (-2, -3)}, 3: {4: (-4, -2, -2), 3: (-3, -1, -1)}}


def interior_beta(T):
    return INTERIOR_BETA[T.config.d][T.config.n]


def in_minus_interior(T, beta):
    facets = RationalCone.from_generators([tuple(p) for p in T.config.points]).dual().generators
    return all(dot(f, [-b for b in beta]) > 0 for f in facets)


def record(number, title, passed, seconds, limit, detail=""):
    ok = bool(passed) and seconds < limit
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  ({seconds:.2f} s, limit {limit:g} s)"
    if detail:
        line += f"  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def domain_samples(T, count=3):
    """Points at increasing depth in the convergence domain with small mixed arguments."""
    U = domain_for(T)
    out = []
    for k in range(count):
        w = _lift(T, [(2 + Fraction(k, 2)) * x for x in U.offset]) if T.config.rank_L else [0] * T.config.n
        args = [(-1) ** (j + k) * (0.1 + 0.05 * ((j + k) % 3)) for j in range(T.config.n)]
        z = [cmath_rect(math.exp(-float(x)), a) for x, a in zip(w, args)]
        assert domain_contains(U, z)
        out.append(z)
    return out


@pytest.fixture(scope="module")
def flips(a1, conifold):
    return {"a1": cont.build_flip_context(a1["fine"], a1["coarse"]),
            "conifold": cont.build_flip_context(conifold["plus"], conifold["minus"])}


def test_criterion_01_volume(all_triangulations):
    worst, bad = 0.0, []
    for T in all_triangulations:
        t = time.perf_counter()
        if quotient_basis(T).dim != normalized_volume(T.config):
            bad.append(T.name)
        worst = max(worst, time.perf_counter() - t)
    assert record(1, "dim of the semigroup quotient equals the volume", not bad, worst, 5,
                  f"slowest triangulation, failures {bad}")


def test_criterion_02_leading_module(all_triangulations):
    t = time.perf_counter()
    bad = []
    for T in all_triangulations:
        cfg = T.config
        vol = normalized_volume(cfg)
        bi = interior_beta(T)
        assert in_minus_interior(T, bi)
        if mbeta_quotient(T, bi).dim != vol:
            bad.append((T.name, bi))
        for beta in ((0,) * cfg.d, tuple(cfg.points[0])):
            if mbeta_quotient(T, beta).dim < vol:
                bad.append((T.name, beta))
    assert record(2, "leading term module dimensions", not bad, time.perf_counter() - t, 10, f"failures {bad}")


def test_criterion_03_presentation(all_triangulations):
    worst_t, worst = 0.0, 0.0
    for T in all_triangulations:
        t = time.perf_counter()
        c = build_kring(T).checks
        worst = max(worst, c["laurent"], c["sr"])
        worst_t = max(worst_t, time.perf_counter() - t)
    assert record(3, "K-theory presentation relations", worst <= 1e-10, worst_t, 5, f"max defect {worst:.1e}")


def test_criterion_04_functional_calculus(all_triangulations):
    t = time.perf_counter()
    agree = doubling = 0.0
    for T in all_triangulations:
        K = build_kring(T)
        radii = [min(0.4, r) for r in default_radii(K)]
        for f in battery(K.n):
            c64 = cauchy_function(K, f, radii, 64)
            c128 = cauchy_function(K, f, radii, 128)
            agree = max(agree, float(np.max(np.abs(apply_function(K, f) - c64))))
            doubling = max(doubling, float(np.max(np.abs(c64 - c128))))
    assert record(4, "jets agree with contour integrals on 12 functions", agree <= 1e-10 and doubling < 1e-10,
                  time.perf_counter() - t, 10, f"agreement {agree:.1e}, node doubling {doubling:.1e}")


def test_criterion_05_residuals(all_triangulations):
    t = time.perf_counter()
    policy = TruncationPolicy(bound=12)
    worst, bad, count = 0.0, [], 0
    for T in all_triangulations:
        K = build_kring(T)
        for beta in ((0,) * T.config.d, interior_beta(T)):
            ch = choose_exponents(T, beta)
            for z in domain_samples(T):
                r = xi_residuals(K, ch, z, policy)
                res = max(r["max_box"], r["max_euler"])
                worst = max(worst, res)
                count += 1
                if not (res <= r["bound"] and res <= 1e-8):
                    bad.append((T.name, beta))
    assert record(5, "box and Euler residuals within the tail bound", not bad, time.perf_counter() - t, 30,
                  f"{count} evaluations, max residual {worst:.1e}")


def test_criterion_06_independence(all_triangulations):
    t = time.perf_counter()
    smallest = math.inf
    for T in all_triangulations:
        beta = interior_beta(T)
        M = leading_module(T, beta)
        ch = choose_exponents(T, beta)
        X = np.array([evaluate_leading(M, ch, z).vector for z in domain_samples(T, 5)])
        assert X.shape[1] == normalized_volume(T.config)
        X = X / np.linalg.norm(X, axis=0)
        smallest = min(smallest, float(np.linalg.svd(X, compute_uv=False).min()))
    assert record(6, "solutions are linearly independent", smallest > 1e-6, time.perf_counter() - t, 30,
                  f"smallest normalized singular value {smallest:.1e}")


def test_criterion_07_combinatorics(flips):
    t = time.perf_counter()
    results = {}
    for name, ctx in flips.items():
        results.update({f"{name}:{k}": v for k, v in ctx.checks["box_correspondence"].items()})
        results.update({f"{name}:{k}": v for k, v in cont.check_supports(ctx, None, 10).items()})
    bad = [k for k, v in results.items() if not v]
    assert record(7, "box, support and line-crossing checks", not bad, time.perf_counter() - t, 30,
                  f"{len(results)} checks, failures {bad}")


def test_criterion_08_diagram(flips, a1, conifold):
    t = time.perf_counter()
    policy = TruncationPolicy(bound=12)
    out = {}
    for name, (Tp, Tm) in {"a1": (a1["fine"], a1["coarse"]),
                           "conifold": (conifold["plus"], conifold["minus"])}.items():
        ctx = flips[name]
        zs, paths = cont.sample_points(Tp, Tm, 3)
        assert len(zs) >= 3 and all(all(p.checks["A2"]) for p in paths)
        beta = (0,) * Tp.config.d
        good = cont.verify_diagram(ctx, beta, zs, policy, 1e-6)
        neg = cont.verify_diagram(ctx, beta, zs, policy, 1e-6, kernel_sign=-1.0)
        shift = [0] * ctx.n
        shift[ctx.circuit.I_plus[0]] = 1
        br = cont.verify_diagram(ctx, beta, zs, policy, 1e-6, branch_shift=shift)
        out[name] = (good, neg, br, cont.kernel_vanishes(ctx))
    g1, n1, _, v1 = out["a1"]
    g2, n2, b2, v2 = out["conifold"]
    res = max(r["residual"] for g in (g1, g2) for r in g.samples)
    neg_a1 = min(r["residual"] for r in n1.samples)
    branch_con = min(r["residual"] for r in b2.samples)
    # the conifold kernel vanishes identically, so flipping its sign is a no-op there;
    # the shifted branch of the logarithm serves as the failing control instead
    passed = (g1.passed and g2.passed and not n1.passed and neg_a1 > 1e-2 and not v1
              and v2 and n2.passed and branch_con > 1e-2)
    assert record(8, "MB and FM agree across the flip", passed, time.perf_counter() - t, 180,
                  f"max residual {res:.1e}, A1 sign control {neg_a1:.1e}, "
                  f"conifold kernel zero, branch control {branch_con:.1e}")


def test_criterion_09_fm_oracle(flips):
    t = time.perf_counter()
    worst = 0.0
    for ctx in flips.values():
        for m in cont._monomials(ctx.n, 3):
            worst = max(worst, float(np.max(np.abs(cont.fm_apply(ctx, m) - cont.fm_oracle(ctx, m)))))
    assert record(9, "pushforward-pullback matches the oracle", worst <= 1e-8, time.perf_counter() - t, 60,
                  f"max difference {worst:.1e}")


def test_criterion_10_determinism():
    t = time.perf_counter()
    a = dumps(cmd_verify(load_config("a1")))
    b = dumps(cmd_verify(load_config("a1")))
    assert record(10, "verify output is byte-identical across runs", a == b, time.perf_counter() - t, math.inf)
