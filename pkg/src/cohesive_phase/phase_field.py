"""Finite-difference phase-field energy on uniform 1D/2D node grids.

Nodal fields ``u`` (``shape + (m,)``) and ``v`` (``shape``) are sampled on a
grid of spacing ``h``. Every cell carries ``v_c``, the mean of its corner
nodes, and forward-difference gradients: one in 1D, four in 2D, each pairing
one of the two x-edge differences with one of the two y-edge differences
(the P1 gradients of both diagonal triangulations of the cell). Gradient
terms are averaged over them, which keeps checkerboard modes out of the
kernel.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.optimize import brentq, minimize
from scipy.sparse.linalg import splu

from .energy_models import h_delta
from .errors import DivergenceError, InputError, InvariantError, ShapeError
from .sbv_toolkit import DEFAULT_JUMP_THRESHOLD, DiscreteSBV
from .surface_density import SurfaceParams, g_of, g_scal

log = logging.getLogger(__name__)

CELL_M_NUM = 1e12


# ---------------------------------------------------------------------------
# state and boundary data


@dataclass
class PhaseFieldState:
    """Nodal pair ``(u, v)`` with spacing ``h``, length scale ``eps`` and grid origin."""

    u: np.ndarray
    v: np.ndarray
    h: float
    eps: float
    origin: tuple = ()

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if u.shape == self.v.shape:
            u = u[..., None]
        if u.shape[:-1] != self.v.shape:
            raise ShapeError(f"u has shape {u.shape}, expected {self.v.shape} + (m,)")
        self.u = u
        if self.v.ndim not in (1, 2):
            raise ShapeError("only 1D and 2D grids are supported")
        if any(s < 2 for s in self.v.shape):
            raise ShapeError("need at least two nodes per axis")
        if not self.origin:
            self.origin = (0.0,) * self.v.ndim

    @property
    def dim(self) -> int:
        return self.v.ndim

    @property
    def shape(self) -> tuple:
        return self.v.shape

    @property
    def m(self) -> int:
        return self.u.shape[-1]

    def coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.h * np.arange(self.shape[axis])

    def mesh(self):
        return np.meshgrid(*[self.coords(a) for a in range(self.dim)], indexing="ij")

    def validate(self, atol: float = 0.0):
        if not self.h > 0 or not self.eps > 0:
            raise InvariantError("h and eps must be positive")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise InvariantError("fields must be finite")
        if np.any(self.v < -atol) or np.any(self.v > 1 + atol):
            raise InvariantError("v must lie in [0, 1]")
        return self

    def copy(self) -> "PhaseFieldState":
        return replace(self, u=self.u.copy(), v=self.v.copy())

    def to_binary(self, path):
        """Flat float64 dump of ``u`` then ``v`` with a ``.hdr`` text header."""
        path = str(path)
        with open(path, "wb") as fh:
            fh.write(self.u.astype("<f8").tobytes())
            fh.write(self.v.astype("<f8").tobytes())
        with open(path + ".hdr", "w") as fh:
            fh.write(f"shape {' '.join(str(s) for s in self.shape)}\n")
            fh.write(f"m {self.m}\nh {self.h!r}\neps {self.eps!r}\n")
            fh.write(f"origin {' '.join(repr(float(o)) for o in self.origin)}\n")
            fh.write("fields u v\n")

    @classmethod
    def from_binary(cls, path) -> "PhaseFieldState":
        path = str(path)
        meta = {}
        with open(path + ".hdr") as fh:
            for line in fh:
                key, _, rest = line.strip().partition(" ")
                meta[key] = rest
        shape = tuple(int(s) for s in meta["shape"].split())
        m = int(meta["m"])
        data = np.fromfile(path, dtype="<f8")
        nu = int(np.prod(shape)) * m
        origin = tuple(float(o) for o in meta["origin"].split())
        return cls(data[:nu].reshape(shape + (m,)), data[nu:].reshape(shape), float(meta["h"]),
                   float(meta["eps"]), origin)


@functools.lru_cache(maxsize=4)
def _bump_marginal_table(dim: int, n: int = 2001):
    """Cumulative marginal of the unit-mass bump ``exp(-1/(1-|x|^2))`` on ``[-1, 1]``."""
    t = np.linspace(-1.0, 1.0, n)
    with np.errstate(divide="ignore", over="ignore"):
        if dim == 1:
            k = np.where(np.abs(t) < 1, np.exp(-1.0 / np.maximum(1.0 - t * t, 1e-300)), 0.0)
        elif dim == 2:
            sig = np.linspace(-1.0, 1.0, 2001)
            w = np.sqrt(np.maximum(1.0 - t * t, 0.0))
            arg = np.maximum((1.0 - t * t)[:, None] * (1.0 - sig * sig)[None, :], 1e-300)
            inner = np.exp(-1.0 / arg)
            k = w * trapezoid(inner, sig, axis=1)
        else:
            raise InputError("mollifier tables exist for dimensions 1 and 2")
    K = cumulative_trapezoid(k, t, initial=0.0)
    return t, K / K[-1]


def mollified_step(t, width: float = 1.0, dim: int = 2):
    """``chi_{t > 0} * phi_width`` evaluated along the normal coordinate ``t``."""
    tab_t, tab_K = _bump_marginal_table(dim)
    return np.interp(np.asarray(t, dtype=float) / width, tab_t, tab_K, left=0.0, right=1.0)


def mollified_band(t, width: float = 1.0, dim: int = 2, half: float = 2.0):
    """``chi_{|t| >= half} * phi_width``."""
    return 1.0 - (mollified_step(t + half, width, dim) - mollified_step(t - half, width, dim))


@dataclass
class BoundaryCondition:
    """Constrained nodes for ``u`` and ``v``.

    ``kind`` is ``dirichlet_u``, ``mollified_jump`` or ``none``. Masks have the
    node shape; the value arrays are used only where the mask is set.
    """

    kind: str
    u_mask: np.ndarray
    u_values: np.ndarray
    v_mask: np.ndarray
    v_values: np.ndarray
    z: np.ndarray | None = None
    nu: np.ndarray | None = None
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in ("dirichlet_u", "mollified_jump", "none"):
            raise InputError(f"unknown boundary condition kind {self.kind!r}")
        self.u_mask = np.asarray(self.u_mask, dtype=bool)
        self.v_mask = np.asarray(self.v_mask, dtype=bool)
        on_boundary = boundary_mask(self.u_mask.shape)
        if np.any(self.u_mask & ~on_boundary) or np.any(self.v_mask & ~on_boundary):
            raise InputError("constrained nodes must lie on the boundary")

    @classmethod
    def none(cls, shape, m: int = 1) -> "BoundaryCondition":
        shape = tuple(shape)
        return cls("none", np.zeros(shape, bool), np.zeros(shape + (m,)), np.zeros(shape, bool),
                   np.ones(shape))

    @classmethod
    def bar(cls, n_nodes: int, z, pin_v: bool = True) -> "BoundaryCondition":
        """1D bar: ``u = 0`` at the left end, ``u = z`` at the right end, optionally ``v = 1`` at both."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        um = np.zeros(n_nodes, bool)
        um[[0, -1]] = True
        uv = np.zeros((n_nodes, len(z)))
        uv[-1] = z
        vm = um.copy() if pin_v else np.zeros(n_nodes, bool)
        return cls("dirichlet_u", um, uv, vm, np.ones(n_nodes), z=z)

    @classmethod
    def mollified_jump(cls, state: PhaseFieldState, z, nu, width: float = 1.0) -> "BoundaryCondition":
        """``u = (z chi_{x.nu > 0}) * phi`` and ``v = chi_{|x.nu| >= 2} * phi`` on the whole boundary."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        if len(nu) != state.dim or abs(np.linalg.norm(nu) - 1.0) > 1e-12:
            raise InputError("nu must be a unit vector of the grid dimension")
        if len(z) != state.m:
            raise ShapeError("z must have one entry per component of u")
        X = state.mesh()
        t = sum(nu[a] * X[a] for a in range(state.dim))
        mask = boundary_mask(state.shape)
        u_vals = mollified_step(t, width, state.dim)[..., None] * z
        v_vals = mollified_band(t, width, state.dim)
        return cls("mollified_jump", mask, u_vals, mask.copy(), v_vals, z=z, nu=nu, width=width)

    def apply(self, state: PhaseFieldState) -> PhaseFieldState:
        out = state.copy()
        out.u[self.u_mask] = self.u_values[self.u_mask]
        out.v[self.v_mask] = self.v_values[self.v_mask]
        return out

    def check(self, state: PhaseFieldState, atol: float = 1e-12):
        if self.u_mask.shape != state.shape:
            raise ShapeError("boundary condition and state live on different grids")
        if np.any(np.abs(state.u[self.u_mask] - self.u_values[self.u_mask]) > atol) or \
                np.any(np.abs(state.v[self.v_mask] - self.v_values[self.v_mask]) > atol):
            raise InvariantError("boundary values are not applied to the state")


def boundary_mask(shape) -> np.ndarray:
    mask = np.zeros(shape, bool)
    for a in range(len(shape)):
        idx = [slice(None)] * len(shape)
        idx[a] = [0, shape[a] - 1]
        mask[tuple(idx)] = True
    return mask


# ---------------------------------------------------------------------------
# discrete operators


def _cell_mean(a, dim):
    if dim == 1:
        return 0.5 * (a[1:] + a[:-1])
    return 0.25 * (a[1:, 1:] + a[:-1, 1:] + a[1:, :-1] + a[:-1, :-1])


def _cell_mean_T(c, dim, node_shape):
    out = np.zeros(tuple(node_shape) + c.shape[dim:])
    if dim == 1:
        out[1:] += 0.5 * c
        out[:-1] += 0.5 * c
    else:
        q = 0.25 * c
        out[1:, 1:] += q
        out[:-1, 1:] += q
        out[1:, :-1] += q
        out[:-1, :-1] += q
    return out


def _grads(a, h, dim):
    """Cell gradients, shape ``(K, cells..., comps..., dim)`` with ``K = 1`` or ``4``."""
    if dim == 1:
        return ((a[1:] - a[:-1]) / h)[None, ..., None]
    dx0 = (a[1:, :-1] - a[:-1, :-1]) / h
    dx1 = (a[1:, 1:] - a[:-1, 1:]) / h
    dy0 = (a[:-1, 1:] - a[:-1, :-1]) / h
    dy1 = (a[1:, 1:] - a[1:, :-1]) / h
    return np.stack([np.stack([dx, dy], axis=-1)
                     for dx in (dx0, dx1) for dy in (dy0, dy1)])


def _grads_T(G, h, dim, node_shape):
    """Adjoint of :func:`_grads`."""
    out = np.zeros(tuple(node_shape) + G.shape[dim + 1:-1])
    if dim == 1:
        g = G[0, ..., 0] / h
        out[1:] += g
        out[:-1] -= g
        return out
    gx0 = (G[0, ..., 0] + G[1, ..., 0]) / h
    gx1 = (G[2, ..., 0] + G[3, ..., 0]) / h
    gy0 = (G[0, ..., 1] + G[2, ..., 1]) / h
    gy1 = (G[1, ..., 1] + G[3, ..., 1]) / h
    out[1:, :-1] += gx0
    out[:-1, :-1] -= gx0
    out[1:, 1:] += gx1
    out[:-1, 1:] -= gx1
    out[:-1, 1:] += gy0
    out[:-1, :-1] -= gy0
    out[1:, 1:] += gy1
    out[1:, :-1] -= gy1
    return out


@functools.lru_cache(maxsize=16)
def _grad_matrices(shape, h):
    """Sparse ``(cells, nodes)`` matrices of every gradient component in :func:`_grads` order."""
    dim = len(shape)
    n = int(np.prod(shape))
    idx = np.arange(n).reshape(shape)
    ncell = int(np.prod([s - 1 for s in shape]))
    rows = np.arange(ncell)

    def diff(plus, minus):
        data = np.concatenate([np.full(ncell, 1.0 / h), np.full(ncell, -1.0 / h)])
        return sp.csr_matrix((data, (np.concatenate([rows, rows]),
                                     np.concatenate([plus.ravel(), minus.ravel()]))), shape=(ncell, n))

    if dim == 1:
        return [[diff(idx[1:], idx[:-1])]]
    dx0 = diff(idx[1:, :-1], idx[:-1, :-1])
    dx1 = diff(idx[1:, 1:], idx[:-1, 1:])
    dy0 = diff(idx[:-1, 1:], idx[:-1, :-1])
    dy1 = diff(idx[1:, 1:], idx[1:, :-1])
    return [[dx, dy] for dx in (dx0, dx1) for dy in (dy0, dy1)]


@functools.lru_cache(maxsize=16)
def _mean_matrix(shape):
    dim = len(shape)
    n = int(np.prod(shape))
    idx = np.arange(n).reshape(shape)
    if dim == 1:
        corners = [idx[1:], idx[:-1]]
    else:
        corners = [idx[1:, 1:], idx[:-1, 1:], idx[1:, :-1], idx[:-1, :-1]]
    ncell = corners[0].size
    rows = np.tile(np.arange(ncell), len(corners))
    cols = np.concatenate([c.ravel() for c in corners])
    return sp.csr_matrix((np.full(len(rows), 1.0 / len(corners)), (rows, cols)), shape=(ncell, n))


# ---------------------------------------------------------------------------
# energy


def _coefficient(vc, params: SurfaceParams, eps: float, cap: float):
    """``min(cap, eps^(q-1) f_p(v)^q)`` and its derivative (zero where capped)."""
    q, p, ell = params.q, params.p, params.ell
    vc = np.clip(vc, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        one_minus = 1.0 - vc
        fp = np.where(vc < 1.0, ell * vc / one_minus ** p, np.inf)
        raw = eps ** (q - 1.0) * fp ** q
        dfp = ell * (1.0 + (p - 1.0) * vc) / one_minus ** (p + 1.0)
        draw = eps ** (q - 1.0) * q * fp ** (q - 1.0) * dfp
    live = raw < cap
    return np.where(live, raw, cap), np.where(live, draw, 0.0)


@dataclass
class Fidelity:
    """Lower-order terms ``eta Psi(grad u) + |u - w|^r`` added to the energy."""

    w: np.ndarray
    r: float = 2.0
    eta: float = 0.0

    def __post_init__(self):
        if not self.r > 1:
            raise InputError("r must exceed 1")
        if self.eta < 0:
            raise InputError("eta must be nonnegative")
        self.w = np.asarray(self.w, dtype=float)


def _cap(params, M):
    return 1.0 if M is None else float(M) ** (params.q - 1.0)


def _parts(state: PhaseFieldState, density, params: SurfaceParams, M=None, need_grad=False,
           fidelity: Fidelity | None = None):
    dim, h, eps = state.dim, state.h, state.eps
    q, qp, kap = params.q, params.qprime, params.kappa
    vol = h ** dim
    vc = _cell_mean(state.v, dim)
    coef, dcoef = _coefficient(vc, params, eps, _cap(params, M))
    Gu = _grads(state.u, h, dim)
    K = Gu.shape[0]
    psi = np.asarray(density.eval(Gu)).reshape(Gu.shape[:-2])
    psi_c = psi.mean(axis=0)
    Gv = _grads(state.v, h, dim)
    nv = np.linalg.norm(Gv, axis=-1)
    diss = (1.0 - vc) ** qp / (kap * eps)
    gradv = eps ** (q - 1.0) * np.mean(nv ** q, axis=0)
    bulk = np.where(psi_c == 0.0, 0.0, coef * psi_c)
    E = math.fsum(np.ravel(bulk + diss + gradv)) * vol
    fid_E = 0.0
    if fidelity is not None:
        if fidelity.w.shape != state.u.shape:
            raise ShapeError("fidelity target must have the shape of u")
        dcell = _cell_mean(state.u - fidelity.w, dim)
        dn = np.linalg.norm(dcell, axis=-1)
        fid_E = math.fsum(np.ravel(fidelity.eta * psi_c + dn ** fidelity.r)) * vol
    if not need_grad:
        return E + fid_E, None, None
    dpsi = density.grad(Gu)
    du = _grads_T(coef[None, ..., None, None] * dpsi / K, h, dim, state.shape) * vol
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(nv > 0, q * nv ** (q - 2.0), 0.0)
    dGv = eps ** (q - 1.0) * fac[..., None] * Gv / K
    dvc = np.where(psi_c == 0.0, 0.0, dcoef * psi_c) - qp * (1.0 - vc) ** (qp - 1.0) / (kap * eps)
    dv = (_cell_mean_T(dvc, dim, state.shape) + _grads_T(dGv, h, dim, state.shape)) * vol
    if fidelity is not None:
        du += _grads_T(fidelity.eta * dpsi / K, h, dim, state.shape) * vol
        r = fidelity.r
        with np.errstate(divide="ignore", invalid="ignore"):
            rf = np.where(dn > 0, r * dn ** (r - 2.0), 0.0)
        du += _cell_mean_T(rf[..., None] * dcell, dim, state.shape) * vol
    return E + fid_E, du, dv


def assemble_energy(state: PhaseFieldState, density, params: SurfaceParams,
                    bc: BoundaryCondition | None = None, M: float | None = None,
                    fidelity: Fidelity | None = None) -> float:
    """Discrete phase-field energy.

    With ``M = None`` the coefficient is ``min(1, eps^(q-1) f_p^q(v))``; a
    finite ``M`` selects the truncated coefficient ``min(M^(q-1), eps^(q-1) f_p^q(v))``
    (pass the recession density for the truncated functional).
    """
    state.validate()
    if bc is not None:
        bc.check(state)
    return _parts(state, density, params, M, False, fidelity)[0]


def energy_gradient(state: PhaseFieldState, density, params: SurfaceParams,
                    bc: BoundaryCondition | None = None, M: float | None = None,
                    fidelity: Fidelity | None = None):
    """Gradient ``(du, dv)`` of :func:`assemble_energy`, zero on constrained nodes."""
    state.validate()
    _, du, dv = _parts(state, density, params, M, True, fidelity)
    if bc is not None:
        du[bc.u_mask] = 0.0
        dv[bc.v_mask] = 0.0
    return du, dv


def add_fidelity(energy: float, grad, state: PhaseFieldState, w, r: float, eta: float, density):
    """Add ``sum_c (eta Psi(grad u_c) + |u_c - w_c|^r) h^dim`` and its gradient to ``(energy, grad)``.

    ``grad`` is a ``(du, dv)`` pair or ``None``.
    """
    fid = Fidelity(w, r, eta)
    zero_params = SurfaceParams()
    base, bdu, bdv = _parts(state, density, zero_params, None, grad is not None)
    full, fdu, fdv = _parts(state, density, zero_params, None, grad is not None, fid)
    extra = full - base
    if grad is None:
        return energy + extra, None
    du, dv = grad
    return energy + extra, (du + (fdu - bdu), dv)


# ---------------------------------------------------------------------------
# staggered minimization


@dataclass
class StaggeredOptions:
    max_outer: int = 300
    tol: float = 1e-9
    inner_iters: int = 500
    inner_gtol: float = 1e-10
    restarts: bool = True
    crack_center: Sequence[float] | None = None


@dataclass
class StaggeredResult:
    state: PhaseFieldState
    energy: float
    history: list
    iterations: int
    converged: bool
    starts: list = field(default_factory=list)

    def __iter__(self):
        yield self.state
        yield self.energy
        yield self.history


class _Problem:
    def __init__(self, density, params, bc, M, fidelity):
        self.density, self.params, self.bc = density, params, bc
        self.M, self.fidelity = M, fidelity

    def energy(self, state, grad=False):
        return _parts(state, self.density, self.params, self.M, grad, self.fidelity)


def _quadratic_u_step(prob: _Problem, state: PhaseFieldState):
    """Exact minimization in ``u`` for the quadratic density."""
    dim, h = state.dim, state.h
    vol = h ** dim
    vc = _cell_mean(state.v, dim)
    coef, _ = _coefficient(vc, prob.params, state.eps, _cap(prob.params, prob.M))
    mats = _grad_matrices(state.shape, h)
    K = len(mats)
    weight = coef.ravel() * vol / K
    fid = prob.fidelity
    if fid is not None:
        weight = weight + fid.eta * vol / K
    W = sp.diags(2.0 * weight)
    A = sum(D.T @ W @ D for comp in mats for D in comp)
    rhs = np.zeros((A.shape[0], state.m))
    if fid is not None:
        if fid.r != 2.0:
            return None
        P = _mean_matrix(state.shape)
        A = A + 2.0 * vol * (P.T @ P)
        rhs += 2.0 * vol * (P.T @ (P @ fid.w.reshape(-1, state.m)))
    A = A.tocsr()
    fixed = prob.bc.u_mask.ravel()
    free = ~fixed
    out = state.copy()
    U = out.u.reshape(-1, state.m)
    if not np.any(free):
        return out
    Aff = A[free][:, free]
    Afc = A[free][:, fixed]
    b = rhs[free] - Afc @ U[fixed]
    # nodes surrounded by fully degraded cells are undetermined; a tiny
    # proximal term keeps them at their current values
    tau = 1e-14 * max(float(Aff.diagonal().max()), 1e-300)
    Aff = (Aff + tau * sp.identity(Aff.shape[0])).tocsc()
    b = b + tau * U[free]
    lu = splu(Aff)
    U[free] = lu.solve(b)
    return out


def _lbfgs_u_step(prob: _Problem, state: PhaseFieldState, opts: StaggeredOptions):
    free = ~prob.bc.u_mask
    work = state.copy()

    def fun(x):
        work.u[free] = x.reshape(-1, state.m)
        E, du, _ = prob.energy(work, True)
        return E, du[free].ravel()

    x0 = state.u[free].ravel()
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options=dict(maxiter=opts.inner_iters, gtol=opts.inner_gtol, ftol=1e-15, maxcor=20))
    work.u[free] = res.x.reshape(-1, state.m)
    return work


def _v_step(prob: _Problem, state: PhaseFieldState, opts: StaggeredOptions):
    free = ~prob.bc.v_mask
    work = state.copy()

    def fun(x):
        work.v[free] = x
        E, _, dv = prob.energy(work, True)
        return E, dv[free]

    x0 = state.v[free]
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * len(x0),
                   options=dict(maxiter=opts.inner_iters, gtol=opts.inner_gtol, ftol=1e-15, maxcor=20))
    work.v[free] = np.clip(res.x, 0.0, 1.0)
    return work


def _run_staggered(prob: _Problem, state: PhaseFieldState, opts: StaggeredOptions):
    quadratic = getattr(prob.density, "is_quadratic", False)
    E = prob.energy(state)[0]
    if not math.isfinite(E):
        raise DivergenceError("initial state has non-finite energy", state=state)
    history = [E]
    converged = False
    it = 0
    for it in range(1, opts.max_outer + 1):
        E_outer = E
        cand = _quadratic_u_step(prob, state) if quadratic else None
        if cand is None:
            cand = _lbfgs_u_step(prob, state, opts)
        for step in range(2):
            if step == 1:
                cand = _v_step(prob, state, opts)
            Ec = prob.energy(cand)[0]
            if not math.isfinite(Ec):
                raise DivergenceError("non-finite energy in staggered iteration", state=state,
                                      history=history)
            if Ec <= E:
                state, E = cand, Ec
            history.append(E)
        if E_outer - E <= opts.tol * max(1.0, abs(E)):
            converged = True
            break
    return state, E, history, it, converged


def crack_initial_state(state: PhaseFieldState, center, axis: int = 0) -> PhaseFieldState:
    """Copy of ``state`` with ``v`` lowered to ``1 - exp(-|x - center| / (2 eps))`` across ``axis``."""
    out = state.copy()
    X = out.mesh()[axis]
    dip = 1.0 - np.exp(-np.abs(X - center) / (2.0 * state.eps))
    out.v = np.minimum(out.v, dip)
    return out


def staggered_minimize(state0: PhaseFieldState, density, params: SurfaceParams, bc: BoundaryCondition,
                       opts: StaggeredOptions | None = None, M: float | None = None,
                       fidelity: Fidelity | None = None) -> StaggeredResult:
    """Alternate exact/L-BFGS minimization in ``u`` and box-constrained L-BFGS in ``v``.

    A half-step is accepted only if it does not raise the energy, so the
    recorded history is nonincreasing. With ``opts.restarts`` a second run
    starts from a cracked profile (``v`` dipping to zero across the first
    axis at ``opts.crack_center``, by default the central cell midpoint), since
    the uncracked state is always a local minimizer; the lower energy wins.
    """
    opts = opts or StaggeredOptions()
    prob = _Problem(density, params, bc, M, fidelity)
    start = bc.apply(state0)
    start.validate()
    inits = [start]
    if opts.restarts:
        center = opts.crack_center
        if center is None:
            # a crack centred on a cell keeps both of its nodes near zero; a
            # node-centred crack is a distinct, costlier local minimizer
            c0 = start.coords(0)
            mids = 0.5 * (c0[1:] + c0[:-1])
            center = mids[np.argmin(np.abs(mids - 0.5 * (c0[0] + c0[-1])))]
        inits.append(bc.apply(crack_initial_state(start, float(np.atleast_1d(center)[0]))))
    best = None
    ends = []
    for init in inits:
        st, E, hist, it, conv = _run_staggered(prob, init, opts)
        ends.append(E)
        if best is None or E < best.energy:
            best = StaggeredResult(st, E, hist, it, conv)
    best.starts = ends
    return best


# ---------------------------------------------------------------------------
# 1D bar, n-D cell problem


def bar_state(z, eps: float, n_cells: int, length: float = 1.0, m: int = 1) -> tuple[PhaseFieldState, BoundaryCondition]:
    """Uncracked bar on ``(0, length)`` with ``u`` linear from ``0`` to ``z`` and ``v = 1``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    x = np.linspace(0.0, length, n_cells + 1)
    u = np.outer(x / length, z)
    st = PhaseFieldState(u, np.ones(n_cells + 1), length / n_cells, eps)
    return st, BoundaryCondition.bar(n_cells + 1, z)


@dataclass
class CellNDResult:
    value: float
    energy: float
    state: PhaseFieldState
    history: list
    converged: bool


def cell_energy_nd(z, nu, T: float, psi_inf, params: SurfaceParams, h: float = 0.25,
                   M_num: float = CELL_M_NUM, opts: StaggeredOptions | None = None) -> CellNDResult:
    """2D cell problem on the square of side ``T`` with mollified jump data, normalized by ``T``.

    ``nu`` must be a coordinate axis. The coefficient is ``min(M_num^(q-1), f_p^q(v))``
    at unit length scale; the run starts from the boundary data extended
    constantly along the interface.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if len(nu) != 2 or np.count_nonzero(nu) != 1 or abs(np.linalg.norm(nu) - 1) > 1e-12:
        raise InputError("nu must be a coordinate axis in the plane")
    n = int(round(T / h))
    if n < 4 or abs(n * h - T) > 1e-9 * T:
        raise InputError("T must be a multiple of h with at least 4 cells")
    base = PhaseFieldState(np.zeros((n + 1, n + 1, len(z))), np.ones((n + 1, n + 1)), h, 1.0,
                           (-T / 2, -T / 2))
    bc = BoundaryCondition.mollified_jump(base, z, nu)
    X = base.mesh()
    t = nu[0] * X[0] + nu[1] * X[1]
    init = replace(base, u=mollified_step(t)[..., None] * z, v=mollified_band(t))
    init = bc.apply(init)
    opts = opts or StaggeredOptions(restarts=False)
    opts = replace(opts, restarts=False)
    res = staggered_minimize(init, psi_inf, params, bc, opts, M=M_num)
    return CellNDResult(res.energy / T, res.energy, res.state, res.history, res.converged)


# ---------------------------------------------------------------------------
# slicing lower bound


def Phi(t):
    """``t - t^2 / 2``."""
    t = np.asarray(t, dtype=float)
    return t - 0.5 * t * t


@dataclass
class SbvThresholdResult:
    ubar: DiscreteSBV
    tbar: float
    lower_bound: float
    delta: float
    energy: float = math.nan
    perimeter: float = 0.0
    coarea_budget: float = 0.0
    coarea_ok: bool = True


def _perimeter(inside, h):
    dim = inside.ndim
    count = sum(int(np.count_nonzero(np.diff(inside.astype(np.int8), axis=a))) for a in range(dim))
    return count * h ** (dim - 1)


def slicing_lower_bound(state: PhaseFieldState, density, params: SurfaceParams, delta: float,
                        bc: BoundaryCondition | None = None, M: float | None = None) -> SbvThresholdResult:
    """Threshold ``Phi(v)`` and bound the energy from below by the thresholded field.

    The threshold ``tbar`` in ``(Phi(delta^q'), Phi(delta))`` minimizes the
    perimeter of ``{Phi(v_c) > tbar}`` over cells (smallest threshold on
    ties). The bound is

        delta^(q'+1) sum h_delta(grad ubar) h^dim + beta_delta Per - h_delta(0) |{v_c <= delta}|

    with ``beta_delta = (1 - delta^q')^(1/q') (Phi(delta) - Phi(delta^q'))``.
    Raises :class:`InvariantError` if the bound exceeds the energy.
    """
    if not 0.0 < delta < 1.0:
        raise InputError("delta must lie in (0, 1)")
    state.validate()
    dim, h = state.dim, state.h
    vol = h ** dim
    qp = params.qprime
    lo, hi = float(Phi(delta ** qp)), float(Phi(delta))
    vc = _cell_mean(state.v, dim)
    pv = Phi(vc)
    cuts = np.unique(pv[(pv > lo) & (pv < hi)])
    edges = np.concatenate([[lo], cuts, [hi]])
    mids = 0.5 * (edges[1:] + edges[:-1])
    pers = [_perimeter(pv > t, h) for t in mids]
    j = int(np.argmin(pers))
    tbar, per = float(mids[j]), float(pers[j])
    inside = pv > tbar

    Gu = _grads(state.u, h, dim)
    hd = np.asarray(h_delta(density, params, delta, Gu)).reshape(Gu.shape[:-2]).mean(axis=0)
    hd0 = float(h_delta(density, params, delta, np.zeros(Gu.shape[-2:])))
    bulk = math.fsum(np.where(inside, hd, hd0).ravel()) * vol
    beta = (1.0 - delta ** qp) ** (1.0 / qp) * (hi - lo)
    low_cells = int(np.count_nonzero(vc <= delta))
    bound = delta ** (qp + 1.0) * bulk + beta * per - hd0 * low_cells * vol

    nv = np.linalg.norm(_grads(state.v, h, dim), axis=-1).mean(axis=0)
    budget = math.fsum(((1.0 - vc) * nv).ravel()) * vol
    coarea_ok = (hi - lo) * per <= budget * (1 + 1e-12) + 1e-15

    ucell = _cell_mean(state.u, dim)
    ubar_vals = np.where(inside[..., None], ucell, 0.0)
    # boundary facets of the threshold set carrying a visible amplitude
    tags = tuple((np.diff(inside.astype(np.int8), axis=a) != 0)
                 & (np.linalg.norm(np.diff(ubar_vals, axis=a), axis=-1) > DEFAULT_JUMP_THRESHOLD * h)
                 for a in range(dim))
    ubar = DiscreteSBV(ubar_vals, h, tags)
    energy = _parts(state, density, params, M)[0]
    if bound > energy + 1e-10 * max(1.0, abs(energy)):
        raise InvariantError(f"slicing lower bound {bound} exceeds the energy {energy}")
    return SbvThresholdResult(ubar, tbar, bound, delta, energy, per, budget, coarea_ok)


# ---------------------------------------------------------------------------
# Gamma sweep


@dataclass
class SweepRow:
    eps: float
    h: float
    energy: float
    min_v: float
    jump: bool
    iterations: int
    ok: bool = True
    message: str = ""


@dataclass
class SweepResult:
    rows: list
    reference: float
    elastic: float
    crack: float
    state: PhaseFieldState | None = None


def elastic_reference(density, z, length: float = 1.0) -> float:
    """``Psi(z / L) L`` for the homogeneous 1D bar (the built-ins are their own envelopes)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    return float(density.eval((z / length).reshape(-1, 1))) * length


def _interp_state(prev: PhaseFieldState, n_cells: int, eps: float, length: float) -> PhaseFieldState:
    x = np.linspace(0.0, length, n_cells + 1)
    xp = prev.coords(0)
    u = np.stack([np.interp(x, xp, prev.u[:, i]) for i in range(prev.m)], axis=-1)
    return PhaseFieldState(u, np.clip(np.interp(x, xp, prev.v), 0, 1), length / n_cells, eps)


def gamma_sweep(z, density, params: SurfaceParams, eps_list: Sequence[float], length: float = 1.0,
                cells_per_eps: int = 4, opts: StaggeredOptions | None = None,
                crack_value: float | None = None) -> SweepResult:
    """Minimize the 1D bar energy for decreasing ``eps`` with ``h <= eps / cells_per_eps``.

    Each run starts from the interpolated previous minimizer and from the
    uncracked and cracked bars; the lowest energy is kept. The reference is
    the smaller of the elastic energy and the crack cost ``g(z)``.
    """
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list) or np.any(np.diff(eps_list) >= 0):
        raise InputError("eps_list must be positive and decreasing")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    opts = opts or StaggeredOptions()
    elastic = elastic_reference(density, z, length)
    if crack_value is None:
        psi_inf = density.recession() if hasattr(density, "recession") else density
        crack_value = g_of(z, np.array([1.0]), psi_inf, params).value
    rows = []
    prev = None
    for eps in eps_list:
        n_cells = int(math.ceil(cells_per_eps * length / eps))
        try:
            st0, bc = bar_state(z, eps, n_cells, length, len(z))
            res = staggered_minimize(st0, density, params, bc, opts)
            if prev is not None:
                warm = staggered_minimize(bc.apply(_interp_state(prev, n_cells, eps, length)), density,
                                          params, bc, replace(opts, restarts=False))
                if warm.energy < res.energy:
                    res = warm
            prev = res.state
            mv = float(res.state.v.min())
            rows.append(SweepRow(eps, length / n_cells, res.energy, mv, mv < 0.5, res.iterations))
        except (DivergenceError, InvariantError) as exc:
            rows.append(SweepRow(eps, length / n_cells, math.nan, math.nan, False, 0, False, str(exc)))
    return SweepResult(rows, min(elastic, crack_value), elastic, crack_value, prev)


def bar_jump_indicator(z, density, params: SurfaceParams, eps: float, length: float = 1.0,
                       cells_per_eps: int = 4, opts: StaggeredOptions | None = None):
    """``(jump, min_v, energy)`` for the bar at one ``eps``."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    n_cells = int(math.ceil(cells_per_eps * length / eps))
    st0, bc = bar_state(z, eps, n_cells, length, len(z))
    res = staggered_minimize(st0, density, params, bc, opts)
    mv = float(res.state.v.min())
    return mv < 0.5, mv, res.energy


def crossover_bisection(lo: float, hi: float, predicate, iterations: int = 20):
    """Bisection for the switch of a monotone boolean ``predicate`` on ``[lo, hi]``.

    Requires ``predicate(lo)`` false and ``predicate(hi)`` true; returns the
    final bracket.
    """
    if predicate(lo) or not predicate(hi):
        raise InputError("predicate must be false at lo and true at hi")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def crossover_reference(params: SurfaceParams, lo: float = 1e-3, hi: float = 10.0, N: int = 400):
    """Root ``z*`` of ``z^q = g_scal(z)`` (the elastic and crack energies of the unit bar cross)."""
    return brentq(lambda s: s ** params.q - g_scal(s, params, N), lo, hi, xtol=1e-8)
