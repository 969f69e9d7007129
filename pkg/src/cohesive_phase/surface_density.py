"""One-dimensional optimal-profile problems for the limiting surface density.

Both cell problems handled here share a structure that is exploited by the
solvers: at fixed phase profile ``beta`` the displacement enters only through
``sum_k c_k phi(d_k / h) h`` with ``sum_k d_k = z``, where ``phi`` is
q-homogeneous and convex and ``c_k`` depends on ``beta``. The minimizing
increments are ``d_k ~ h c_k^{-1/(q-1)}`` and the minimum is

    phi(z) * (sum_k h c_k^{-1/(q-1)})^{1-q}

so the descent runs over ``beta`` alone and the displacement profile is
recovered in closed form. Intervals with ``c_k = inf`` (``beta = 1``) carry no
increment, intervals with ``c_k = 0`` (``beta = 0``) absorb the whole jump.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import minimize

from .errors import DivergenceError, InputError, InvariantError

log = logging.getLogger(__name__)

DEFAULT_T_SCHEDULE = (4.0, 8.0, 16.0, 32.0)
DEFAULT_SPACING = 4.0 / 1000.0


@dataclass(frozen=True)
class SurfaceParams:
    """Exponents ``p``, ``q`` and scale ``ell`` of the degradation function."""

    p: float = 2.0
    q: float = 2.0
    ell: float = 1.0

    def __post_init__(self):
        if not self.p > 1.0:
            raise InputError("p must exceed 1")
        if not self.q > 1.0:
            raise InputError("q must exceed 1")
        if not self.ell > 0.0:
            raise InputError("ell must be positive")

    @property
    def qprime(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def kappa(self) -> float:
        """Dissipation normalization ``q' q^(q'/q)``."""
        qp = self.qprime
        return qp * self.q ** (qp / self.q)


def _check_unit_interval(t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise InputError("argument must lie in [0, 1]")
    return t


def f_p(t, params: SurfaceParams):
    """``ell t / (1 - t)^p``; returns ``inf`` at ``t = 1``."""
    t = _check_unit_interval(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(t < 1.0, params.ell * t / (1.0 - t) ** params.p, np.inf)
    return float(out) if out.ndim == 0 else out


def f_eps(t, eps: float, params: SurfaceParams):
    """``min(1, eps^(1-1/q) f_p(t))`` with the value 1 at ``t = 1``."""
    if not eps > 0:
        raise InputError("eps must be positive")
    fp = np.asarray(f_p(t, params))
    out = np.minimum(1.0, eps ** (1.0 - 1.0 / params.q) * fp)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# profiles


@dataclass
class Profile:
    """Discrete pair ``(alpha, beta)`` on ``[-T/2, T/2]`` with ``N`` nodes."""

    T: float
    alpha: np.ndarray
    beta: np.ndarray
    z: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        self.nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        alpha = np.asarray(self.alpha, dtype=float)
        self.alpha = alpha.reshape(len(self.beta), -1)

    @property
    def N(self) -> int:
        return len(self.beta)

    @property
    def step(self) -> float:
        return self.T / (self.N - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.T / 2, self.T / 2, self.N)

    def validate(self, atol: float = 1e-12):
        if self.N < 3 or not self.T > 0:
            raise InvariantError("profile needs T > 0 and at least 3 nodes")
        b = self.beta
        if np.any(~np.isfinite(b)) or np.any(b < -atol) or np.any(b > 1 + atol):
            raise InvariantError("beta must lie in [0, 1]")
        if abs(b[0] - 1) > atol or abs(b[-1] - 1) > atol:
            raise InvariantError("beta must equal 1 at both ends")
        if np.any(np.abs(self.alpha[0]) > atol) or np.any(np.abs(self.alpha[-1] - self.z) > atol * (1 + np.abs(self.z))):
            raise InvariantError("alpha must go from 0 to z")
        return self


def crack_lower_bound(profile: Profile) -> float:
    """``sum (1 - beta_mid) |beta'| step``; a lower bound for the cell energy."""
    b = profile.beta
    return float(np.sum((1.0 - 0.5 * (b[1:] + b[:-1])) * np.abs(np.diff(b))))


def _coefficient(bmid, params, M):
    fq = np.asarray(f_p(np.clip(bmid, 0.0, 1.0), params)) ** params.q
    if math.isfinite(M):
        fq = np.minimum(fq, M ** (params.q - 1.0))
    return fq


def cell_energy(profile: Profile, psi_inf, params: SurfaceParams, M: float = math.inf) -> float:
    """Midpoint/forward-difference discretization of the 1D cell functional."""
    b = profile.beta
    if np.any(b < -1e-12) or np.any(b > 1 + 1e-12):
        raise InvariantError("beta must lie in [0, 1]")
    h = profile.step
    da = np.diff(profile.alpha, axis=0) / h
    xi = da[:, :, None] * profile.nu[None, None, :]
    phi = np.atleast_1d(psi_inf.eval(xi))
    bmid = 0.5 * (b[1:] + b[:-1])
    coef = _coefficient(bmid, params, M)
    with np.errstate(invalid="ignore"):
        bulk = np.where(phi == 0.0, 0.0, coef * phi)
    diss = (1.0 - bmid) ** params.qprime / params.kappa
    grad = np.abs(np.diff(b) / h) ** params.q
    return float(np.sum(bulk + diss + grad) * h)


# ---------------------------------------------------------------------------
# reduced functionals over beta


def _log_weight(bmid, params, M, scal, second=False):
    """``log w`` and its b-derivatives for ``w = c^(-1/(q-1))``.

    ``scal`` selects the reparametrized (length-to-the-q) functional, whose
    coefficient carries an extra ``(1 - b)^q``.
    """
    qp, p = params.qprime, params.p
    pe = p - 1.0 if scal else p
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = -qp * (math.log(params.ell) + np.log(bmid) - pe * np.log1p(-bmid))
        bs = np.clip(bmid, 1e-100, 1.0 - 1e-16)
        d1 = -qp * (1.0 / bs + pe / (1.0 - bs))
        d2 = qp * (1.0 / bs ** 2 - pe / (1.0 - bs) ** 2) if second else None
    if math.isfinite(M):
        clamp = logw < -math.log(M)
        logw = np.where(clamp, -math.log(M), logw)
        d1 = np.where(clamp, 0.0, d1)
        if second:
            d2 = np.where(clamp, 0.0, d2)
    return logw, d1, d2


class _ReducedProblem:
    """Energy over interior ``beta`` nodes with the displacement eliminated.

    The Hessian is tridiagonal plus a rank-one term coming from the
    eliminated displacement, which :func:`_projected_newton` exploits.
    """

    def __init__(self, N, h, phi_z, params, M=math.inf, scal=False):
        self.N, self.h, self.phi_z = N, h, phi_z
        self.params, self.M, self.scal = params, M, scal
        self.nfev = 0

    def full(self, x):
        b = np.empty(self.N)
        b[0] = b[-1] = 1.0
        b[1:-1] = x
        return b

    def bulk(self, beta, second=False):
        """Bulk value with b-derivatives and the displacement shares ``r``.

        Returns ``(B, gb, hb_diag, u, c, r)`` where the b-Hessian of the bulk
        term is ``diag(hb_diag) + c u u^T``.
        """
        q = self.params.q
        bmid = 0.5 * (beta[1:] + beta[:-1])
        zero = np.zeros_like(bmid)
        if self.phi_z == 0.0:
            return 0.0, zero, zero, zero, 0.0, zero
        logw, d1, d2 = _log_weight(bmid, self.params, self.M, self.scal, second)
        if np.any(np.isposinf(logw)):
            share = np.isposinf(logw).astype(float)
            return 0.0, zero, zero, zero, 0.0, share / share.sum()
        top = np.max(logw)
        if top == -np.inf:
            return math.inf, zero, zero, zero, 0.0, zero
        wn = np.exp(logw - top)
        r = wn / wn.sum()
        logW = top + math.log(wn.sum() * self.h)
        B = self.phi_z * math.exp((1.0 - q) * logW)
        live = r > 0
        u = np.where(live, r * np.where(live, d1, 0.0), 0.0)
        gb = (1.0 - q) * B * u
        hb = None
        if second:
            hb = np.where(live, (1.0 - q) * B * r * (np.where(live, d1, 0.0) ** 2 + np.where(live, d2, 0.0)), 0.0)
        return B, gb, hb, u, q * (q - 1.0) * B, r

    def _local(self, beta, second=False):
        """Per-interval dissipation/gradient terms and their derivatives."""
        p, q, h = self.params, self.params.q, self.h
        bmid = 0.5 * (beta[1:] + beta[:-1])
        d = np.diff(beta)
        a = np.clip(1.0 - bmid, 0.0, None)
        ad = np.abs(d)
        sg = np.sign(d)
        hq = h ** (1.0 - q)
        out = {}
        if self.scal:
            aq, dq = a ** q, ad ** q
            out["e"] = hq * np.sum(aq * dq)
            out["eb"] = -q * hq * a ** (q - 1.0) * dq
            out["ed"] = q * hq * aq * ad ** (q - 1.0) * sg
            if second:
                ac = np.maximum(a, 1e-12)
                dc = np.maximum(ad, 1e-12)
                out["ebb"] = q * (q - 1.0) * hq * ac ** (q - 2.0) * dq
                out["edd"] = q * (q - 1.0) * hq * aq * dc ** (q - 2.0)
                out["ebd"] = -q * q * hq * a ** (q - 1.0) * ad ** (q - 1.0) * sg
        else:
            qp, kap = p.qprime, p.kappa
            out["e"] = h * np.sum(a ** qp) / kap + hq * np.sum(ad ** q)
            out["eb"] = -h * qp * a ** (qp - 1.0) / kap
            out["ed"] = q * hq * ad ** (q - 1.0) * sg
            if second:
                ac = np.maximum(a, 1e-12)
                dc = np.maximum(ad, 1e-12)
                out["ebb"] = h * qp * (qp - 1.0) * ac ** (qp - 2.0) / kap
                out["edd"] = q * (q - 1.0) * hq * dc ** (q - 2.0)
                out["ebd"] = np.zeros_like(a)
        return out

    def __call__(self, x):
        self.nfev += 1
        beta = self.full(x)
        B, gb, _, _, _, _ = self.bulk(beta)
        loc = self._local(beta)
        gmid = gb + loc["eb"]
        g = np.zeros(self.N)
        g[:-1] += 0.5 * gmid - loc["ed"]
        g[1:] += 0.5 * gmid + loc["ed"]
        return B + loc["e"], g[1:-1]

    def hessian(self, x, psd=False):
        """Tridiagonal part ``(diag, off)`` and rank-one ``(c, U)`` on interior nodes.

        With ``psd`` every 2x2 interval block is projected onto the PSD cone,
        which makes the model convex.
        """
        beta = self.full(x)
        _, _, hb, u, c, _ = self.bulk(beta, second=True)
        loc = self._local(beta, second=True)
        P = hb + loc["ebb"]
        Q = loc["ebd"]
        R = loc["edd"]
        a = 0.25 * P - Q + R
        cc = 0.25 * P + Q + R
        b = 0.25 * P - R
        if psd:
            blk = np.stack([np.stack([a, b], -1), np.stack([b, cc], -1)], -2)
            ev, vec = np.linalg.eigh(blk)
            ev = np.maximum(ev, 0.0)
            blk = np.einsum("kij,kj,klj->kil", vec, ev, vec)
            a, b, cc = blk[:, 0, 0], blk[:, 0, 1], blk[:, 1, 1]
        diag = np.zeros(self.N)
        diag[:-1] += a
        diag[1:] += cc
        U = np.zeros(self.N)
        U[:-1] += 0.5 * u
        U[1:] += 0.5 * u
        return diag[1:-1], b[1:-1], c, U[1:-1]


@dataclass
class CellOptions:
    max_iters: int = 500
    gtol: float = 1e-10
    ftol: float = 1e-15
    maxcor: int = 30
    starts: int = 3
    kkt_tol: float = 1e-7
    method: str = "newton"


@dataclass
class CellSolution:
    profile: Profile
    value: float
    reduced_value: float
    iterations: int
    kkt: float
    converged: bool
    history: list = field(default_factory=list)
    lower_bound: float = 0.0

    def __iter__(self):
        yield self.profile
        yield self.value


def _kkt_residual(x, g, lo=0.0, hi=1.0):
    pg = g.copy()
    pg[(x <= lo) & (g > 0)] = 0.0
    pg[(x >= hi) & (g < 0)] = 0.0
    return float(np.max(np.abs(pg))) if len(pg) else 0.0


def _solve_tri_rank1(diag, off, c, U, rhs, free):
    """Solve ``(T + c U U^T) d = rhs`` on ``free`` indices (identity elsewhere)."""
    n = len(diag)
    dg = np.where(free, diag, 1.0)
    of = np.where(free[:-1] & free[1:], off, 0.0)
    ab = np.zeros((3, n))
    ab[0, 1:] = of
    ab[1] = dg
    ab[2, :-1] = of
    Uf = np.where(free, U, 0.0)
    rf = np.where(free, rhs, 0.0)
    sol = solve_banded((1, 1), ab, np.column_stack([rf, Uf]), check_finite=False)
    y, zz = sol[:, 0], sol[:, 1]
    den = 1.0 + c * Uf.dot(zz)
    if c != 0.0 and abs(den) > 1e-300:
        y = y - (c * Uf.dot(y) / den) * zz
    return y


def _projected_newton(problem: _ReducedProblem, x0, opts: CellOptions):
    """Bound-constrained Newton iteration with projected Armijo backtracking."""
    x = np.clip(np.asarray(x0, dtype=float), 0.0, 1.0)
    f, g = problem(x)
    if not math.isfinite(f):
        raise DivergenceError("initial profile has infinite energy", state=x)
    history = [f]
    scale = problem.h
    nit = 0
    for nit in range(1, opts.max_iters + 1):
        kkt = _kkt_residual(x, g) / scale
        if kkt <= opts.kkt_tol:
            nit -= 1
            break
        eps_act = min(1e-10, float(np.max(np.abs(x - np.clip(x - g / scale, 0.0, 1.0)))))
        active = ((x <= eps_act) & (g > 0)) | ((x >= 1.0 - eps_act) & (g < 0))
        free = ~active
        d = None
        for psd in (False, True):
            diag, off, c, U = problem.hessian(x, psd=psd)
            if psd:
                diag = diag + 1e-12 * max(1.0, float(np.max(np.abs(diag))))
            try:
                dd = -_solve_tri_rank1(diag, off, c, U, g, free)
            except (np.linalg.LinAlgError, ValueError):
                continue
            if not np.all(np.isfinite(dd)):
                continue
            curv = dd[free].dot(diag[free] * dd[free]) + 2.0 * np.sum(off * dd[:-1] * dd[1:] * (free[:-1] & free[1:])) \
                + c * np.dot(U[free], dd[free]) ** 2
            if g[free].dot(dd[free]) < 0 and curv > 0:
                d = dd
                break
        if d is None:
            d = -g / max(1.0, float(np.max(np.abs(diag))))
        dscale = np.where(active, -g / max(1.0, float(np.max(np.abs(diag)))), d)
        t = 1.0
        accepted = False
        for _ in range(60):
            xt = np.clip(x + t * dscale, 0.0, 1.0)
            ft, gt = problem(xt)
            pred = -np.dot(g[free], xt[free] - x[free]) + np.dot(g[active], x[active] - xt[active])
            if math.isfinite(ft) and ft <= f - 1e-4 * max(pred, 0.0) and ft <= f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        if not math.isfinite(ft):
            raise DivergenceError("non-finite energy during descent", state=x, history=history)
        done = f - ft <= opts.ftol * max(1.0, abs(f))
        x, f, g = xt, ft, gt
        history.append(f)
        if done and _kkt_residual(x, g) / scale <= 1e3 * opts.kkt_tol:
            break
    kkt = _kkt_residual(x, g) / scale
    return x, f, nit, kkt, history


def _lbfgs(problem: _ReducedProblem, x0, opts: CellOptions):
    history = []
    f0, _ = problem(x0)
    if not math.isfinite(f0):
        raise DivergenceError("initial profile has infinite energy", state=x0)
    history.append(f0)

    def cb(xk):
        fk, _ = problem(xk)
        if not math.isfinite(fk):
            raise DivergenceError("non-finite energy during descent", state=xk, history=history)
        history.append(fk)

    res = minimize(problem, x0, jac=True, method="L-BFGS-B",
                   bounds=[(0.0, 1.0)] * len(x0), callback=cb,
                   options=dict(maxiter=opts.max_iters, gtol=opts.gtol, ftol=opts.ftol,
                                maxcor=opts.maxcor, maxls=50))
    x = np.clip(res.x, 0.0, 1.0)
    f, g = problem(x)
    if f > f0:
        x, f = x0, f0
        g = problem(x0)[1]
    return x, f, int(res.nit), _kkt_residual(x, g) / problem.h, history


def _descend(problem: _ReducedProblem, x0, opts: CellOptions):
    if opts.method == "lbfgs":
        return _lbfgs(problem, x0, opts)
    return _projected_newton(problem, x0, opts)


def dip_profile(nodes, width, depth_min, center=0.0):
    """Piecewise-linear well reaching ``depth_min`` at ``center``."""
    s = np.clip(np.abs(nodes - center) / (0.5 * width), 0.0, 1.0)
    b = depth_min + (1.0 - depth_min) * s
    b[0] = b[-1] = 1.0
    return b


def default_starts(size, p, count):
    """Initial well depths: the default ``1 - |z|^(1/(p+1))``, a crack and a midpoint."""
    # stay below 1: beta = 1 everywhere has infinite stiffness for any z != 0
    bmin = min(max(0.0, 1.0 - size ** (1.0 / (p + 1.0))), 1.0 - 1e-8)
    cands = [(bmin, 1.0), (0.0, 2.0), (0.5 * (1.0 + bmin), 2.0)]
    return cands[:max(1, count)]


def _alpha_from_shares(z, shares):
    # Accumulate from both ends towards the largest share so that rounding
    # lands where the coefficient is smallest, not in the stiff tails.
    k = int(np.argmax(shares))
    left = np.concatenate([[0.0], np.cumsum(shares[:k])])
    right = 1.0 - np.concatenate([np.cumsum(shares[k + 1:][::-1])[::-1], [0.0]])
    frac = np.concatenate([left, right])
    return frac[:, None] * z[None, :]


def minimize_cell(z, nu, T: float, N: int, psi_inf, params: SurfaceParams, M: float = math.inf,
                  init: Profile | np.ndarray | None = None, opts: CellOptions | None = None
                  ) -> CellSolution:
    """Minimize the discrete cell energy on ``[-T/2, T/2]`` with ``N`` nodes.

    Without ``init`` several well-shaped starting profiles are tried and the
    lowest energy is kept.
    """
    opts = opts or CellOptions()
    z = np.atleast_1d(np.asarray(z, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
        raise InputError("nu must be a unit vector")
    if N < 3 or not T > 0:
        raise InputError("need T > 0 and N >= 3")
    h = T / (N - 1)
    phi_z = float(psi_inf.eval(np.outer(z, nu)))
    prob = _ReducedProblem(N, h, phi_z, params, M)
    nodes = np.linspace(-T / 2, T / 2, N)

    if init is None:
        size = phi_z ** (1.0 / params.q)
        starts = [dip_profile(nodes, w, d) for d, w in default_starts(size, params.p, opts.starts)]
        if phi_z == 0.0:
            starts = [np.ones(N)]
    else:
        b0 = init.beta if isinstance(init, Profile) else np.asarray(init, dtype=float)
        if len(b0) != N:
            raise InputError("initial profile has the wrong node count")
        starts = [np.clip(b0, 0.0, 1.0)]

    best = None
    for b0 in starts:
        x, f, nit, kkt, hist = _descend(prob, b0[1:-1].copy(), opts)
        if best is None or f < best[1]:
            best = (x, f, nit, kkt, hist)
    x, f, nit, kkt, hist = best
    beta = prob.full(x)
    shares = prob.bulk(beta)[-1]
    if phi_z == 0.0:
        shares = np.full(N - 1, 1.0 / (N - 1))
    profile = Profile(T, _alpha_from_shares(z, shares), beta, z, nu)
    value = cell_energy(profile, psi_inf, params, M)
    lb = crack_lower_bound(profile)
    return CellSolution(profile, value, f, nit, kkt, kkt <= opts.kkt_tol or nit < opts.max_iters,
                        hist, lb)


def extend_profile(beta, N_new):
    """Pad a profile with ``beta = 1`` symmetrically to ``N_new`` nodes."""
    extra = N_new - len(beta)
    if extra < 0:
        raise InputError("cannot shrink a profile")
    left = extra // 2
    return np.concatenate([np.ones(left), beta, np.ones(extra - left)])


@dataclass
class GEstimate:
    value: float
    T_used: float
    N_used: int
    M_used: float
    profile: Profile
    convergence_history: list = field(default_factory=list)
    converged: bool = True
    lower_bound: float = 0.0
    iterations: int = 0


def g_of(z, nu, psi_inf, params: SurfaceParams, T_schedule: Sequence[float] = DEFAULT_T_SCHEDULE,
         M: float = math.inf, tol: float = 1e-3, spacing: float = DEFAULT_SPACING,
         opts: CellOptions | None = None) -> GEstimate:
    """Surface density ``g(z, nu)`` by increasing the window length ``T``.

    The node spacing stays fixed; each window is warm-started from the
    previous optimum padded with ``beta = 1``. With finite ``M`` the truncated
    coefficient is used; ``M`` is the cap on the unit cube, and a window of
    length ``T`` is the unit cube blown up by ``T``, so the cap applied to the
    window is ``M T``.
    """
    T_schedule = list(T_schedule)
    if len(T_schedule) < 2 or np.any(np.diff(T_schedule) <= 0):
        raise InputError("T_schedule must be increasing with at least two entries")
    history = []
    prev = None
    sol = None
    its = 0
    converged = False
    for T in T_schedule:
        N = int(round(T / spacing)) + 1
        init = None if prev is None else extend_profile(prev.profile.beta, N)
        if init is not None:
            # keep the window symmetric when the pad is odd
            init = init[:N] if len(init) >= N else extend_profile(init, N)
        sol = minimize_cell(z, nu, T, N, psi_inf, params, M * T, init=init, opts=opts)
        its += sol.iterations
        history.append((T, sol.value))
        if prev is not None:
            change = abs(sol.value - prev.value)
            if change <= tol * abs(sol.value) or change <= 1e-12:
                converged = True
                prev = sol
                break
        prev = sol
    return GEstimate(sol.value, history[-1][0], sol.profile.N, M, sol.profile, history,
                     converged, sol.lower_bound, its)


# ---------------------------------------------------------------------------
# scalar isotropic density


@dataclass
class GScalSolution:
    value: float
    beta: np.ndarray
    alpha: np.ndarray
    iterations: int
    kkt: float


def g_scal_solve(s: float, params: SurfaceParams, N: int = 2000,
                 opts: CellOptions | None = None) -> GScalSolution:
    """Minimize the reparametrization-invariant scalar functional on ``(0, 1)``.

    The length functional is replaced by its q-th power (the energy of a
    path), whose minimum over parametrizations is the length to the q-th
    power; the returned value is the q-th root of the minimized energy.
    """
    if not s >= 0 or not math.isfinite(s):
        raise InputError("s must be a finite nonnegative number")
    opts = opts or CellOptions()
    h = 1.0 / (N - 1)
    if s == 0.0:
        return GScalSolution(0.0, np.ones(N), np.zeros(N), 0, 0.0)
    prob = _ReducedProblem(N, h, s ** params.q, params, math.inf, scal=True)
    nodes = np.linspace(-0.5, 0.5, N)
    best = None
    for d, _ in default_starts(s, params.p, opts.starts):
        # full-span wells: flat parts of a start are stationary for this functional
        b0 = dip_profile(nodes, 1.0, d)
        x, f, nit, kkt, _ = _descend(prob, b0[1:-1].copy(), opts)
        if best is None or f < best[1]:
            best = (x, f, nit, kkt)
    x, f, nit, kkt = best
    beta = prob.full(x)
    shares = prob.bulk(beta)[-1]
    alpha = _alpha_from_shares(np.array([s]), shares)[:, 0]
    return GScalSolution(f ** (1.0 / params.q), beta, alpha, nit, kkt)


def g_scal(s: float, params: SurfaceParams, N: int = 2000, opts: CellOptions | None = None) -> float:
    """Isotropic surface density ``g_scal(s)``."""
    return g_scal_solve(s, params, N, opts).value


def g_scal_length(beta, alpha, params: SurfaceParams) -> float:
    """Discrete length ``sum (1-b)(f_p^q(b)|da|^q + |db|^q)^(1/q)`` of a path."""
    b = np.asarray(beta, dtype=float)
    bmid = 0.5 * (b[1:] + b[:-1])
    da = np.abs(np.diff(alpha))
    db = np.abs(np.diff(b))
    fp = np.asarray(f_p(np.clip(bmid, 0, 1), params))
    with np.errstate(invalid="ignore"):
        term = np.where(da == 0.0, 0.0, (fp * da) ** params.q)
    return float(np.sum((1.0 - bmid) * (term + db ** params.q) ** (1.0 / params.q)))


def fit_small_z_exponent(params: SurfaceParams, s_grid=None, solver=None):
    """Least-squares slope of ``log g`` against ``log s``.

    ``solver`` maps ``s`` to ``g``; by default the scalar isotropic solver.
    Returns ``(exponent, r2, values)``.
    """
    if s_grid is None:
        s_grid = np.logspace(-3, -1, 7)
    s_grid = np.asarray(s_grid, dtype=float)
    if len(s_grid) < 5:
        raise InputError("need at least 5 grid points")
    solver = solver or (lambda s: g_scal(s, params))
    vals = np.array([solver(float(s)) for s in s_grid])
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise InputError("surface density values must be finite and positive for the fit")
    x, y = np.log(s_grid), np.log(vals)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    r2 = 1.0 - np.sum(resid ** 2) / np.sum((y - y.mean()) ** 2)
    return float(slope), float(r2), vals


def growth_constant_estimate(values, sizes, p):
    """Smallest ``C`` with ``g/C <= |z|^(2/(p+1)) ^ 1 <= C g`` on the samples."""
    ref = np.minimum(np.asarray(sizes, dtype=float) ** (2.0 / (p + 1.0)), 1.0)
    vals = np.asarray(values, dtype=float)
    return float(max(np.max(vals / ref), np.max(ref / vals)))
