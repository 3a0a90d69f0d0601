"""Analytic test functions for the functional calculus, with Taylor jets."""
import cmath
from math import factorial

import mpmath
from scipy.special import rgamma

from gkzflop.ktheory import JetFunction


def _poly_jet(coeffs):
    # coefficients of sum c_k x^k, re-expanded at x0
    def jet(x0, k):
        out = []
        for i in range(k):
            s = 0
            for p, c in enumerate(coeffs):
                if p >= i:
                    s += c * (factorial(p) // (factorial(i) * factorial(p - i))) * x0 ** (p - i)
            out.append(complex(s))
        return out
    return jet


def _exp_jet(a):
    return lambda x0, k: [cmath.exp(a * x0) * a ** i / factorial(i) for i in range(k)]


def _inv_jet(c):
    # 1 / (c - x)
    return lambda x0, k: [1 / (c - x0) ** (i + 1) for i in range(k)]


def _power_jet(p):
    # x^p for integer p (possibly negative)
    return lambda x0, k: [complex(mpmath.binomial(p, i)) * x0 ** (p - i) for i in range(k)]


def battery(n):
    """Twelve functions of ``n`` variables; contours must avoid ``0`` and ``3``."""
    last = n - 1
    fs = [
        JetFunction.separable({0: lambda x: x}, n, {0: _poly_jet([0, 1])}, name="r0"),
        JetFunction.separable({last: lambda x: x * x - 2 * x}, n, {last: _poly_jet([0, -2, 1])},
                              name="r_last^2-2r_last"),
        JetFunction.separable({0: lambda x: 1 / x}, n, {0: _power_jet(-1)}, name="1/r0"),
        JetFunction.separable({1 % n: lambda x: x ** -3}, n, {1 % n: _power_jet(-3)}, name="r1^-3"),
        JetFunction.separable({0: cmath.exp}, n, {0: _exp_jet(1)}, name="exp r0"),
        JetFunction.separable({last: lambda x: cmath.exp(2j * x)}, n, {last: _exp_jet(2j)}, name="exp 2i r"),
        JetFunction.separable({0: lambda x: 1 / (3 - x)}, n, {0: _inv_jet(3)}, name="1/(3-r0)"),
        JetFunction.separable({0: lambda x: x ** 2, last: lambda x: 1 / x}, n,
                              {0: _power_jet(2), last: _power_jet(-1)}, name="r0^2/r_last"),
        JetFunction.separable({0: lambda x: x, last: lambda x: x}, n,
                              {0: _poly_jet([0, 1]), last: _poly_jet([0, 1])}, name="r0 r_last"),
        JetFunction.separable({0: cmath.sin, last: cmath.cos}, n, name="sin r0 cos r_last"),
        JetFunction(lambda r: (r[0] + r[last]) ** 3, n, variables=sorted({0, last}), name="(r0+r_last)^3"),
        JetFunction(lambda r: complex(rgamma(r[0] + 2 * r[last] + 5)), n,
                    variables=sorted({0, last}), name="1/Gamma(r0+2r_last+5)"),
    ]
    return fs
