"""Cell-valued SBV fields on uniform grids: quantization, truncation, energies.

A field lives on the cells of a 1D or 2D grid with spacing ``h``. Every
interior facet separates two neighbouring cells and is tagged either as a
jump facet, carrying the raw difference as jump amplitude, or as a diffuse
facet, carrying the difference divided by ``h`` as approximate gradient.
Facet normals always point along the positive coordinate axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InputError, ShapeError

DEFAULT_JUMP_THRESHOLD = 10.0


def _facet_diffs(values, axis):
    return np.diff(values, axis=axis)


@dataclass
class DiscreteSBV:
    """Cell values of shape ``cells + (m,)`` with one boolean tag array per axis."""

    values: np.ndarray
    h: float
    tags: tuple

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim not in (2, 3):
            raise ShapeError("values must have shape cells + (m,) with 1 or 2 cell axes")
        if not np.all(np.isfinite(vals)):
            raise InputError("cell values must be finite")
        if not self.h > 0:
            raise InputError("spacing h must be positive")
        self.values = vals
        tags = tuple(np.asarray(t, dtype=bool) for t in self.tags)
        if len(tags) != self.dim:
            raise ShapeError("need one tag array per axis")
        for a, t in enumerate(tags):
            if t.shape != _facet_diffs(vals[..., 0], a).shape:
                raise ShapeError(f"tag array for axis {a} has shape {t.shape}")
        self.tags = tags

    @property
    def dim(self) -> int:
        return self.values.ndim - 1

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def cells_shape(self) -> tuple:
        return self.values.shape[:-1]

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @property
    def facet_area(self) -> float:
        return self.h ** (self.dim - 1)

    @classmethod
    def from_cells(cls, values, h, jump_threshold: float = DEFAULT_JUMP_THRESHOLD) -> "DiscreteSBV":
        """Classify facets by ``|difference| > jump_threshold * h``."""
        vals = _with_components(values)
        tags = tuple(np.linalg.norm(_facet_diffs(vals, a), axis=-1) > jump_threshold * h
                     for a in range(vals.ndim - 1))
        return cls(vals, h, tags)

    @classmethod
    def piecewise_constant(cls, values, h) -> "DiscreteSBV":
        """Every facet with a nonzero difference is a jump facet."""
        vals = _with_components(values)
        tags = tuple(np.any(_facet_diffs(vals, a) != 0.0, axis=-1) for a in range(vals.ndim - 1))
        return cls(vals, h, tags)

    def diffs(self, axis: int) -> np.ndarray:
        return _facet_diffs(self.values, axis)

    def jump_count(self) -> int:
        return int(sum(int(t.sum()) for t in self.tags))

    def jumps(self):
        """Jump amplitudes ``(k, m)`` and facet normals ``(k, dim)`` of all jump facets."""
        amps, normals = [], []
        for a, t in enumerate(self.tags):
            d = self.diffs(a)[t]
            amps.append(d)
            nrm = np.zeros((len(d), self.dim))
            nrm[:, a] = 1.0
            normals.append(nrm)
        return np.concatenate(amps), np.concatenate(normals)

    def total_variation(self, component: int | None = None) -> float:
        """``|Du|`` (Euclidean per facet) or ``|Du^i|`` for one component."""
        parts = []
        for a in range(self.dim):
            d = self.diffs(a)
            size = np.abs(d[..., component]) if component is not None else np.linalg.norm(d, axis=-1)
            parts.append(size.ravel())
        return math.fsum(np.concatenate(parts)) * self.facet_area

    def cell_gradient(self) -> np.ndarray:
        """Absolutely continuous gradient per cell, shape ``cells + (m, dim)``.

        Each axis component averages the diffuse facet gradients on both
        sides of the cell; jump facets contribute zero.
        """
        out = np.zeros(self.cells_shape + (self.m, self.dim))
        for a, t in enumerate(self.tags):
            g = np.where(t[..., None], 0.0, self.diffs(a) / self.h)
            g = np.moveaxis(g, a, 0)
            acc = np.zeros((g.shape[0] + 1,) + g.shape[1:])
            cnt = np.zeros(g.shape[0] + 1)
            acc[:-1] += g
            acc[1:] += g
            cnt[:-1] += 1
            cnt[1:] += 1
            acc /= np.maximum(cnt, 1).reshape((-1,) + (1,) * (g.ndim - 1))
            out[..., a] = np.moveaxis(acc, 0, a)
        return out

    def to_binary(self, path):
        """Flat little-endian float64 values plus a ``.hdr`` text header; tags as uint8."""
        path = str(path)
        with open(path, "wb") as fh:
            fh.write(self.values.astype("<f8").tobytes())
            for t in self.tags:
                fh.write(t.astype(np.uint8).tobytes())
        with open(path + ".hdr", "w") as fh:
            fh.write(f"shape {' '.join(str(s) for s in self.cells_shape)}\n")
            fh.write(f"h {self.h!r}\nm {self.m}\n")
            fh.write("fields values tags\n")

    @classmethod
    def from_binary(cls, path) -> "DiscreteSBV":
        path = str(path)
        meta = {}
        with open(path + ".hdr") as fh:
            for line in fh:
                key, _, rest = line.strip().partition(" ")
                meta[key] = rest
        shape = tuple(int(s) for s in meta["shape"].split())
        m = int(meta["m"])
        raw = open(path, "rb").read()
        nval = int(np.prod(shape)) * m
        vals = np.frombuffer(raw[:nval * 8], dtype="<f8").reshape(shape + (m,))
        off = nval * 8
        tags = []
        for a in range(len(shape)):
            tshape = tuple(s - 1 if i == a else s for i, s in enumerate(shape))
            k = int(np.prod(tshape))
            tags.append(np.frombuffer(raw[off:off + k], dtype=np.uint8).reshape(tshape).astype(bool))
            off += k
        return cls(vals.copy(), float(meta["h"]), tuple(tags))


def _with_components(values):
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return vals


def _cell_values(u):
    if isinstance(u, DiscreteSBV):
        return u.values, u.h
    vals = _with_components(u)
    return vals, 1.0


# ---------------------------------------------------------------------------
# quantization


def quantize(u, eps: float, rho) -> DiscreteSBV:
    """Piecewise-constant rounding ``e * floor(u / e + rho)`` per component.

    The step is ``e = eps / sqrt(m)`` so that the Euclidean deviation stays
    below ``eps``. A plain array is read as cell values with ``h = 1``.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    vals, h = _cell_values(u)
    m = vals.shape[-1]
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (m,))
    if np.any(rho < 0) or np.any(rho >= 1):
        raise InputError("rho must lie in [0, 1)^m")
    step = eps / math.sqrt(m)
    out = step * np.floor(_scaled(vals, step) + rho)
    return DiscreteSBV.piecewise_constant(out, h)


def _scaled(vals, step):
    """``vals / step`` with values within rounding of an integer snapped onto it."""
    x = vals / step
    xr = np.round(x)
    return np.where(np.abs(x - xr) <= 1e-12 * np.maximum(1.0, np.abs(x)), xr, x)


def _component_tv_for_offsets(x, rhos, chunk_cells: int = 2_000_000):
    """Integer total variation of ``floor(x + rho)`` for every ``rho``."""
    tv = np.zeros(len(rhos))
    step = max(1, chunk_cells // max(1, x.size))
    for start in range(0, len(rhos), step):
        r = rhos[start:start + step]
        k = np.floor(x[None, ...] + r.reshape((-1,) + (1,) * x.ndim))
        for a in range(x.ndim):
            tv[start:start + step] += np.abs(np.diff(k, axis=a + 1)).reshape(len(r), -1).sum(axis=1)
    return tv


def select_rho(u, eps: float) -> np.ndarray:
    """Offsets ``rho_i`` with ``|D u^i_(eps,rho)| <= |D u^i|`` for every component.

    ``rho -> |D u^i_(eps,rho)|`` is piecewise constant with breakpoints at
    the fractional parts of ``-u / e``; all pieces are evaluated and the
    first piece with the smallest variation is taken. Its left end is
    returned when it yields the same rounding as the piece's midpoint.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    vals, h = _cell_values(u)
    m = vals.shape[-1]
    step = eps / math.sqrt(m)
    rho = np.zeros(m)
    for i in range(m):
        x = _scaled(vals[..., i], step)
        br = np.unique(np.concatenate([[0.0], np.mod(-x.ravel(), 1.0)]))
        br = br[br < 1.0]
        ends = np.append(br[1:], 1.0)
        mids = 0.5 * (br + ends)
        tv = _component_tv_for_offsets(x, mids)
        j = int(np.argmin(tv))
        left = br[j]
        same = np.array_equal(np.floor(x + left), np.floor(x + mids[j]))
        rho[i] = left if same else mids[j]
    return rho


# ---------------------------------------------------------------------------
# truncation


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


@dataclass(frozen=True)
class TruncationLadder:
    """Radii ``a_k = base^k`` and a radial cutoff between ``a_k`` and ``a_(k+1)``.

    The radial profile ``psi`` equals ``r`` up to ``a_k`` and vanishes from
    ``a_(k+1)`` on. With ``a = a_k`` and ``s = r - a`` its slope is blended by
    cubic smoothsteps: from ``1`` to ``-1`` on ``[0, a/2]``, constant ``-1`` on
    ``[a/2, a]``, from ``-1`` to ``0`` on ``[a, 2a]``. The slope stays in
    ``[-1, 1]`` and ``psi <= r``, so the map is C^1 with Lipschitz constant 1.
    The construction needs ``a_(k+1) = 3 a_k``.
    """

    base: float = 3.0

    def __post_init__(self):
        if self.base != 3.0:
            raise InputError("the radial profile is built for a_(k+1) = 3 a_k")

    def radius(self, k: int) -> float:
        if k < 1:
            raise InputError("k must be at least 1")
        return self.base ** k

    def profile(self, r, k: int):
        """Radial profile ``psi(r)`` (the norm of the truncated vector)."""
        a = self.radius(k)
        r = np.asarray(r, dtype=float)
        s = r - a
        # integral of a smoothstep ramp over [0, L]: L / 2
        s1 = np.clip(s, 0.0, a / 2)
        ramp1 = s1 - 2.0 * _integral_smoothstep(s1 / (a / 2)) * (a / 2)
        s2 = np.clip(s - a / 2, 0.0, a / 2)
        s3 = np.clip(s - a, 0.0, a)
        ramp3 = -s3 + _integral_smoothstep(s3 / a) * a
        psi = a + ramp1 - s2 + ramp3
        return np.where(r <= a, r, np.where(r >= 3.0 * a, 0.0, psi))

    def slope(self, r, k: int):
        a = self.radius(k)
        s = np.asarray(r, dtype=float) - a
        out = np.where(s < a / 2, 1.0 - 2.0 * _smoothstep(s / (a / 2)),
                       np.where(s < a, -1.0, -1.0 + _smoothstep((s - a) / a)))
        return np.where(s <= 0, 1.0, np.where(s >= 2 * a, 0.0, out))


def _integral_smoothstep(s):
    """``int_0^s (3t^2 - 2t^3) dt`` for ``s`` in ``[0, 1]``."""
    return s ** 3 - 0.5 * s ** 4


def truncate(u, k: int, ladder: TruncationLadder | None = None):
    """Apply the radial truncation to the vector field ``u`` of shape ``(..., m)``.

    A :class:`DiscreteSBV` keeps its facet tags.
    """
    ladder = ladder or TruncationLadder()
    if isinstance(u, DiscreteSBV):
        return DiscreteSBV(truncate(u.values, k, ladder), u.h, u.tags)
    vals = np.asarray(u, dtype=float)
    r = np.linalg.norm(vals, axis=-1, keepdims=True)
    psi = ladder.profile(r, k)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r > 0, psi / np.where(r > 0, r, 1.0), 1.0)
    return vals * scale


# ---------------------------------------------------------------------------
# energies


@dataclass(frozen=True)
class G0Density:
    """Isotropic concave surface density ``ell * s^gamma``."""

    gamma: float = 0.5
    ell: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InputError("gamma must lie in (0, 1)")
        if not self.ell > 0:
            raise InputError("ell must be positive")

    def eval(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise InputError("argument must be nonnegative")
        out = self.ell * s ** self.gamma
        return float(out) if out.ndim == 0 else out

    def __call__(self, z, nu=None):
        """Surface density ``g(z, nu) = g0(|z|)`` on batches ``z`` of shape ``(k, m)``."""
        z = np.asarray(z, dtype=float)
        return self.eval(np.linalg.norm(z, axis=-1) if z.ndim else abs(z))


def _eval_surface(g: Callable, amps, normals):
    if len(amps) == 0:
        return np.zeros(0)
    try:
        out = np.asarray(g(amps, normals), dtype=float)
        if out.shape == (len(amps),):
            return out
    except (TypeError, ValueError, IndexError):
        pass
    return np.array([float(g(a, n)) for a, n in zip(amps, normals)])


def surface_energy(u: DiscreteSBV, g: Callable) -> float:
    """``sum over jump facets of g(jump, normal) * h^(dim-1)``.

    ``g`` is called with batches ``(k, m)`` and ``(k, dim)``; callables that
    only take single facets are evaluated facet by facet.
    """
    amps, normals = u.jumps()
    return math.fsum(_eval_surface(g, amps, normals)) * u.facet_area


def bulk_energy(u: DiscreteSBV, density) -> float:
    """``sum over cells of Psi(grad u) * h^dim`` with the absolutely continuous gradient."""
    grad = u.cell_gradient()
    return math.fsum(np.ravel(density.eval(grad))) * u.cell_volume


def surface_energy_band(u: DiscreteSBV, g: Callable, lo: float, hi: float) -> float:
    """Surface energy restricted to jump facets with ``lo <= |jump| < hi``."""
    amps, normals = u.jumps()
    size = np.linalg.norm(amps, axis=-1)
    keep = (size >= lo) & (size < hi)
    return math.fsum(_eval_surface(g, amps[keep], normals[keep])) * u.facet_area


def gradient_l1(u: DiscreteSBV) -> float:
    return math.fsum(np.linalg.norm(u.cell_gradient(), axis=(-2, -1)).ravel()) * u.cell_volume


@dataclass
class QuantizationReport:
    lhs: float
    rhs_terms: dict
    ratio: float
    sup_deviation: float
    tv_ok: bool
    rho: np.ndarray
    quantized: DiscreteSBV


def verify_quantization_estimate(u: DiscreteSBV, eps: float, delta: float, eta: float,
                                 g0: G0Density) -> QuantizationReport:
    """Quantize with a selected offset and compare ``H_g(u_eps)`` with its bound terms.

    The exact guarantees (sup deviation at most ``eps``, componentwise and
    total variation bounds) are asserted; the constant in the energy bound is
    reported as the smallest ``C`` consistent with the computed terms.
    """
    if not delta > 4.0 * eps:
        raise InputError("need delta > 4 eps")
    if not 0.0 < eta < eps:
        raise InputError("need 0 < eta < eps")
    rho = select_rho(u, eps)
    uq = quantize(u, eps, rho)
    dev = float(np.max(np.linalg.norm(u.values - uq.values, axis=-1)))
    tv_ok = all(uq.total_variation(i) <= u.total_variation(i) * (1 + 1e-12) for i in range(u.m))
    tv_ok = tv_ok and uq.total_variation() <= math.sqrt(u.m) * u.total_variation() * (1 + 1e-12)
    if dev > eps or not tv_ok:
        raise AssertionError("quantization guarantees violated")
    gam = g0.gamma
    hg = surface_energy(u, g0)
    lhs = surface_energy(uq, g0)
    terms = {
        "H_g": hg,
        "eps_over_delta": (eps / delta) ** gam * hg,
        "eta_over_eps": (eta / eps) ** (1.0 - gam) * hg,
        "band": (eps / eta) ** gam * surface_energy_band(u, g0, eta, delta),
        "gradient": eps ** (gam - 1.0) * gradient_l1(u),
    }
    extra = terms["eps_over_delta"] + terms["eta_over_eps"] + terms["band"] + terms["gradient"]
    excess = max(lhs - hg, 0.0)
    ratio = excess / extra if extra > 0 else (0.0 if excess == 0 else math.inf)
    return QuantizationReport(lhs, terms, ratio, dev, tv_ok, rho, uq)


# ---------------------------------------------------------------------------
# BV-ellipticity


def reference_step(n: int, dim: int, z, nu_axis: int = 0) -> np.ndarray:
    """Cell values of ``z chi_{x . e_axis > 0}`` on the centred unit cube with ``n`` cells per side."""
    if n % 2:
        raise InputError("use an even number of cells so the interface is a facet plane")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    centers = (np.arange(n) + 0.5) / n - 0.5
    grids = np.meshgrid(*([centers] * dim), indexing="ij")
    side = grids[nu_axis] > 0
    return side[..., None] * z


def split_competitor(n: int, dim: int, z, ratio: float, nu_axis: int = 0, depth: int | None = None,
                     width: int | None = None) -> DiscreteSBV:
    """Reference step with an intermediate plateau at ``ratio * z``.

    In 1D the plateau occupies ``depth`` cells right of the interface, which
    splits the jump into ``ratio z`` and ``(1 - ratio) z``. In 2D the plateau
    is a box of ``depth`` cells normal to the interface and ``2 width`` cells
    along it, centred, so that the deviation is compactly supported.
    """
    vals = reference_step(n, dim, z, nu_axis)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    depth = depth or max(1, n // 4)
    half = n // 2
    idx = [slice(None)] * dim
    idx[nu_axis] = slice(half, half + depth)
    if dim == 2:
        width = width or max(1, n // 4)
        other = 1 - nu_axis
        idx[other] = slice(half - width, half + width)
    vals[tuple(idx)] = ratio * z
    return DiscreteSBV.piecewise_constant(vals, 1.0 / n)


@dataclass
class BVEllipticityResult:
    lhs: float
    rhs: float
    violated: bool


def bv_ellipticity_test(g: Callable, z, nu, competitor: DiscreteSBV, tol: float = 1e-12
                        ) -> BVEllipticityResult:
    """Compare ``g(z, nu)`` with the surface energy of ``competitor`` on the unit cube.

    ``nu`` must be a coordinate axis. The competitor has to coincide with the
    reference step on the layer of cells touching the cube boundary.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    axes = np.flatnonzero(np.abs(nu) > 0)
    if len(axes) != 1 or abs(nu[axes[0]] - 1.0) > 1e-12 or len(nu) != competitor.dim:
        raise InputError("nu must be a positive coordinate axis of the competitor grid")
    n = competitor.cells_shape[0]
    if any(s != n for s in competitor.cells_shape) or abs(competitor.h * n - 1.0) > 1e-12:
        raise InputError("competitor must live on a uniform grid of the unit cube")
    ref = reference_step(n, competitor.dim, z, int(axes[0]))
    collar = np.zeros(competitor.cells_shape, dtype=bool)
    for a in range(competitor.dim):
        idx = [slice(None)] * competitor.dim
        idx[a] = [0, n - 1]
        collar[tuple(idx)] = True
    if not np.allclose(competitor.values[collar], ref[collar], rtol=0.0, atol=1e-12):
        raise InputError("competitor must equal the reference step on the boundary collar")
    lhs = float(_eval_surface(g, z[None, :], nu[None, :])[0])
    rhs = surface_energy(competitor, g)
    return BVEllipticityResult(lhs, rhs, lhs > rhs + tol)
