"""Independent reference computations used by the tests."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq


# ---------------------------------------------------------------------------
# g_scal through the conserved momentum of the geodesic problem
#
# The length element (1 - b) (f(b)^q |a'|^q + |b'|^q)^(1/q) does not depend on
# a, so lam = m(b) y^(1/q') with m(b) = (1 - b) f(b) and y = a-share of the
# q-norm is constant along a minimizer. A symmetric path from b = 1 down to
# the turning point m(b_min) = lam and back gives
#     s(lam) = 2 int (1/f) (y / (1 - y))^(1/q) db,
#     G(lam) = 2 int (1 - b) (1 - y)^(-1/q) db,    y = (lam / m)^q'.
# The crack path through b = 0 costs exactly 1.


def _m(b, p, ell):
    return ell * b * (1.0 - b) ** (1.0 - p)


def _turning_point(lam, p, ell):
    return brentq(lambda b: _m(b, p, ell) - lam, 0.0, 1.0 - 1e-15, xtol=1e-300, rtol=1e-15)


def _path_integrals(lam, p, q, ell):
    qp = q / (q - 1.0)
    b0 = _turning_point(lam, p, ell)
    width = 1.0 - b0

    def parts(t):
        b = b0 + width * t ** qp
        jac = width * qp * t ** (qp - 1.0)
        logy = qp * (math.log(lam) - math.log(_m(b, p, ell)))
        one_minus_y = -math.expm1(logy)
        if one_minus_y <= 0.0:
            one_minus_y = qp * (_dm(b0, p, ell) / lam) * width * t ** qp
        y = math.exp(logy)
        f = ell * b / (1.0 - b) ** p
        ds = (y / one_minus_y) ** (1.0 / q) / f * jac
        dg = (1.0 - b) * one_minus_y ** (-1.0 / q) * jac
        return ds, dg

    s = quad(lambda t: parts(t)[0], 0.0, 1.0, limit=400, epsabs=1e-13, epsrel=1e-11)[0]
    g = quad(lambda t: parts(t)[1], 0.0, 1.0, limit=400, epsabs=1e-13, epsrel=1e-11)[0]
    return 2.0 * s, 2.0 * g


def _dm(b, p, ell):
    return ell * (1.0 - b) ** (-p) * (1.0 - b + (p - 1.0) * b)


def g_scal_oracle(s, p=2.0, q=2.0, ell=1.0, lam_grid=None):
    """Minimal length over symmetric geodesics with increment ``s``, capped by the crack cost 1."""
    if lam_grid is None:
        lam_grid = np.logspace(-8, 6, 281)
    svals = np.array([_path_integrals(l, p, q, ell)[0] for l in lam_grid])
    best = 1.0
    for k in range(len(lam_grid) - 1):
        a, b = svals[k] - s, svals[k + 1] - s
        if a == 0.0:
            best = min(best, _path_integrals(lam_grid[k], p, q, ell)[1])
        elif a * b < 0.0:
            lam = brentq(lambda l: _path_integrals(l, p, q, ell)[0] - s, lam_grid[k], lam_grid[k + 1],
                         xtol=1e-14, rtol=1e-12)
            best = min(best, _path_integrals(lam, p, q, ell)[1])
    return best


# ---------------------------------------------------------------------------
# truncated crack cost for q = 2


def crack_window_cost(T):
    """Cost ``coth(T/4)`` of the broken profile on ``[-T/2, T/2]`` with ``beta = 1`` at both ends (q = 2)."""
    return 1.0 / math.tanh(T / 4.0)


# ---------------------------------------------------------------------------
# brute-force lower convex hull


def brute_force_hull(xs, ys):
    """``min`` over all chords ``x_j <= x_i <= x_k`` of the interpolated value (O(n^3))."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n = len(xs)
    out = ys.copy()
    for i in range(n):
        for j in range(i + 1):
            for k in range(i, n):
                if k == j:
                    continue
                t = (xs[i] - xs[j]) / (xs[k] - xs[j])
                out[i] = min(out[i], (1 - t) * ys[j] + t * ys[k])
    return out


# ---------------------------------------------------------------------------
# finite differences


def central_gradient(f, x, step=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
