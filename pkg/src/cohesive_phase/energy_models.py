"""Bulk energy densities, their q-recession functions and 1D envelopes.

Matrices are handled in batches: an argument ``xi`` of shape ``(..., m, n)``
is evaluated entrywise over the leading axes. The two compressible
densities are only defined for ``m = n = 2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, ShapeError

KINDS = ("power_q", "compressible_plus", "compressible_hat")


def _as_matrix_batch(xi, square2=False):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 0:
        xi = xi.reshape(1, 1)
    elif xi.ndim == 1:
        raise ShapeError(f"expected an m x n matrix (or a batch of them), got shape {xi.shape}")
    if square2 and xi.shape[-2:] != (2, 2):
        raise ShapeError(f"compressible densities need 2x2 matrices, got {xi.shape[-2:]}")
    if not np.all(np.isfinite(xi)):
        raise InputError("matrix argument has non-finite entries")
    return xi


def _frob2(xi):
    return np.sum(xi * xi, axis=(-2, -1))


def _det2(xi):
    return xi[..., 0, 0] * xi[..., 1, 1] - xi[..., 0, 1] * xi[..., 1, 0]


def _cof2(xi):
    """Gradient of det for 2x2 matrices."""
    out = np.empty_like(xi)
    out[..., 0, 0] = xi[..., 1, 1]
    out[..., 0, 1] = -xi[..., 1, 0]
    out[..., 1, 0] = -xi[..., 0, 1]
    out[..., 1, 1] = xi[..., 0, 0]
    return out


def _power_grad(xi, q):
    n2 = _frob2(xi)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(n2 > 0, q * n2 ** ((q - 2.0) / 2.0), 0.0)
    return coef[..., None, None] * xi


@dataclass(frozen=True)
class BulkDensity:
    """An elastic energy density with q-growth.

    ``kind`` selects one of:

    * ``power_q``: ``|xi|^q`` (Frobenius norm, any shape);
    * ``compressible_plus``: ``(|xi|^2 - 2)_+^2 + alpha (det xi - 1)^2``;
    * ``compressible_hat``: ``(|xi|^2 - 2 det xi)^2 + alpha (det xi - 1)^2``.

    The compressible variants have ``q = 4`` and act on 2x2 matrices. The
    growth constant ``c`` is estimated numerically when not given.
    """

    kind: str = "power_q"
    q: float = 2.0
    alpha: float = 0.0
    c: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown density kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "power_q" and self.q != 4.0:
            object.__setattr__(self, "q", 4.0)
        if not self.q > 1.0:
            raise InputError("exponent q must exceed 1")
        if self.alpha < 0:
            raise InputError("alpha must be nonnegative")
        if self.c is None:
            object.__setattr__(self, "c", estimate_growth_constant(self))
        elif not self.c > 0:
            raise InputError("growth constant c must be positive")

    @classmethod
    def from_config(cls, record: dict) -> "BulkDensity":
        """Build from a ``{kind, q, alpha}`` record (extra keys ignored)."""
        kind = record.get("kind", "power_q")
        q = float(record.get("q", 4.0 if kind != "power_q" else 2.0))
        return cls(kind=kind, q=q, alpha=float(record.get("alpha", 0.0)))

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "power_q" and self.q == 2.0

    def eval(self, xi) -> np.ndarray:
        return eval_bulk(self, xi)

    def grad(self, xi) -> np.ndarray:
        return grad_bulk(self, xi)

    def recession(self) -> "RecessionDensity":
        return recession(self)


def eval_bulk(density: BulkDensity, xi) -> np.ndarray | float:
    """Evaluate the density at one matrix or a batch of matrices."""
    scalar = np.ndim(xi) <= 2
    xi = _as_matrix_batch(xi, square2=density.kind != "power_q")
    if density.kind == "power_q":
        val = _frob2(xi) ** (density.q / 2.0)
    elif density.kind == "compressible_plus":
        val = np.maximum(_frob2(xi) - 2.0, 0.0) ** 2 + density.alpha * (_det2(xi) - 1.0) ** 2
    else:
        d = _det2(xi)
        val = (_frob2(xi) - 2.0 * d) ** 2 + density.alpha * (d - 1.0) ** 2
    return float(val) if scalar else val


def grad_bulk(density: BulkDensity, xi) -> np.ndarray:
    """Analytic gradient with respect to the matrix entries.

    For ``power_q`` with ``q < 2`` the gradient at the origin is set to zero.
    """
    xi = _as_matrix_batch(xi, square2=density.kind != "power_q")
    if density.kind == "power_q":
        return _power_grad(xi, density.q)
    d = _det2(xi)
    cof = _cof2(xi)
    if density.kind == "compressible_plus":
        a = np.maximum(_frob2(xi) - 2.0, 0.0)
        return 4.0 * a[..., None, None] * xi + 2.0 * density.alpha * (d - 1.0)[..., None, None] * cof
    a = _frob2(xi) - 2.0 * d
    return (2.0 * a[..., None, None] * (2.0 * xi - 2.0 * cof)
            + 2.0 * density.alpha * (d - 1.0)[..., None, None] * cof)


@dataclass(frozen=True)
class RecessionDensity:
    """Closed-form q-recession function ``lim Psi(t xi) / t^q``."""

    parent: BulkDensity
    closed_form: bool = True

    @property
    def q(self) -> float:
        return self.parent.q

    @property
    def c(self) -> float:
        return self.parent.c

    @property
    def kind(self) -> str:
        return self.parent.kind

    @property
    def is_quadratic(self) -> bool:
        return self.parent.is_quadratic

    def eval(self, xi):
        scalar = np.ndim(xi) <= 2
        xi = _as_matrix_batch(xi, square2=self.kind != "power_q")
        if self.kind == "power_q":
            val = _frob2(xi) ** (self.q / 2.0)
        elif self.kind == "compressible_plus":
            val = _frob2(xi) ** 2 + self.parent.alpha * _det2(xi) ** 2
        else:
            d = _det2(xi)
            val = (_frob2(xi) - 2.0 * d) ** 2 + self.parent.alpha * d ** 2
        return float(val) if scalar else val

    def grad(self, xi):
        xi = _as_matrix_batch(xi, square2=self.kind != "power_q")
        if self.kind == "power_q":
            return _power_grad(xi, self.q)
        d = _det2(xi)
        cof = _cof2(xi)
        if self.kind == "compressible_plus":
            return 4.0 * _frob2(xi)[..., None, None] * xi + 2.0 * self.parent.alpha * d[..., None, None] * cof
        a = _frob2(xi) - 2.0 * d
        return 2.0 * a[..., None, None] * (2.0 * xi - 2.0 * cof) + 2.0 * self.parent.alpha * d[..., None, None] * cof

    def self_check(self, t: float = 1e3, samples: int = 200, seed: int = 0) -> float:
        """Largest ``|Psi(t xi)/t^q - Psi_inf(xi)|`` over random unit ``xi``."""
        xi = _unit_samples(self.parent, samples, seed)
        return float(np.max(np.abs(self.parent.eval(t * xi) / t ** self.q - self.eval(xi))))


def recession(density: BulkDensity) -> RecessionDensity:
    if density.kind not in KINDS:
        raise InputError(f"no closed-form recession for {density.kind!r}")
    return RecessionDensity(density)


def _unit_samples(density, count, seed, shape=None):
    rng = np.random.default_rng(seed)
    if shape is None:
        shape = (2, 2) if density.kind != "power_q" else (1, 1)
    xi = rng.standard_normal((count,) + tuple(shape))
    return xi / np.sqrt(_frob2(xi))[:, None, None]


def estimate_growth_constant(density: BulkDensity, samples: int = 4000, radius: float = 10.0,
                             seed: int = 12345) -> float:
    """Sampled constant for ``(|xi|^q/c - c) v 0 <= Psi <= c (|xi|^q + 1)``.

    The sampled ratio is doubled; directions of the recession function on the
    unit sphere are included so the lower bound also holds at infinity.
    """
    if density.kind == "power_q":
        return 1.0
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((samples, 2, 2))
    xi *= (radius * rng.random(samples) ** 0.5 / np.sqrt(_frob2(xi)))[:, None, None]
    xi = np.concatenate([xi, np.eye(2)[None], np.zeros((1, 2, 2))])
    q = density.q
    psi = eval_bulk(density, xi)
    nq = _frob2(xi) ** (q / 2.0)
    c_up = np.max(psi / (nq + 1.0))
    c_low = np.max((-psi + np.sqrt(psi ** 2 + 4.0 * nq)) / 2.0)
    unit = _unit_samples(density, samples, seed + 1)
    c_inf = np.max(1.0 / RecessionDensity(density, True).eval(unit))
    return float(2.0 * max(c_up, c_low, c_inf, 1.0))


def growth_bounds_hold(density: BulkDensity, xi) -> bool:
    xi = _as_matrix_batch(xi, square2=density.kind != "power_q")
    psi = np.atleast_1d(eval_bulk(density, xi))
    nq = np.atleast_1d(_frob2(xi) ** (density.q / 2.0))
    c = density.c
    return bool(np.all(nq / c - c <= psi + 1e-12) and np.all(psi <= c * (nq + 1.0) + 1e-12))


# ---------------------------------------------------------------------------
# projection property


@dataclass
class ProjectionReport:
    holds: bool
    worst_violation: float
    witness: tuple | None = None


def check_projection_property(psi_inf: RecessionDensity, samples: Sequence, tol: float = 1e-9
                              ) -> ProjectionReport:
    """Evaluate ``Psi_inf(xi) - Psi_inf(xi nu (x) nu)`` on ``(xi, nu)`` pairs.

    ``samples`` is either a sequence of pairs or a tuple ``(xis, nus)`` of
    stacked arrays with shapes ``(k, m, n)`` and ``(k, n)``.
    """
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[0]) == 3:
        xis, nus = (np.asarray(a, dtype=float) for a in samples)
    else:
        pairs = list(samples)
        if not pairs:
            return ProjectionReport(True, float("inf"), None)
        xis = np.stack([np.asarray(x, dtype=float) for x, _ in pairs])
        nus = np.stack([np.asarray(n, dtype=float) for _, n in pairs])
    if np.any(np.abs(np.linalg.norm(nus, axis=-1) - 1.0) > 1e-12):
        raise InputError("normals must be unit vectors")
    if xis.shape[-1] != nus.shape[-1]:
        raise ShapeError("xi column count must match the normal dimension")
    proj = np.einsum("kmn,kn,kl->kml", xis, nus, nus)
    diff = np.atleast_1d(psi_inf.eval(xis)) - np.atleast_1d(psi_inf.eval(proj))
    i = int(np.argmin(diff))
    worst = float(diff[i])
    holds = worst >= -tol
    witness = None if holds else (xis[i].copy(), nus[i].copy())
    return ProjectionReport(holds, worst, witness)


def random_projection_samples(shape, count, seed=0, scale=3.0):
    """Random ``(xi, nu)`` stacks for the projection check."""
    rng = np.random.default_rng(seed)
    m, n = shape
    xis = scale * rng.standard_normal((count, m, n))
    nus = rng.standard_normal((count, n))
    nus /= np.linalg.norm(nus, axis=1, keepdims=True)
    return xis, nus


# ---------------------------------------------------------------------------
# h_delta and envelopes


def h_delta(density, params, delta: float, xi):
    """``min(Psi, ell (1 - delta^q')^(1-p) Psi^(1/q))``."""
    if not 0.0 < delta < 1.0:
        raise InputError("delta must lie in (0, 1)")
    psi = np.asarray(density.eval(xi), dtype=float)
    coef = params.ell * (1.0 - delta ** params.qprime) ** (1.0 - params.p)
    out = np.minimum(psi, coef * psi ** (1.0 / params.q))
    return float(out) if out.ndim == 0 else out


@dataclass
class EnvelopeGrid1D:
    xs: np.ndarray
    ys: np.ndarray
    hull_ys: np.ndarray | None = field(default=None)

    def to_csv(self, path, which="hull"):
        """Two-column CSV ``x,value``; ``which`` picks hull or raw values."""
        vals = self.hull_ys if which == "hull" else self.ys
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value"])
            for x, y in zip(self.xs, vals):
                w.writerow([repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path) -> "EnvelopeGrid1D":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0].copy(), data[:, 1].copy())


def _lower_hull_indices(xs, ys):
    # monotone chain, lower part only; xs sorted
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull)


def convex_envelope_1d(grid: EnvelopeGrid1D | tuple) -> EnvelopeGrid1D:
    """Greatest convex minorant of the piecewise-linear interpolant."""
    if isinstance(grid, EnvelopeGrid1D):
        xs, ys = grid.xs, grid.ys
    else:
        xs, ys = grid
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise ShapeError("xs and ys must be 1D arrays of equal length")
    if len(xs) < 3:
        raise InputError("need at least 3 points")
    if np.any(np.diff(xs) <= 0):
        raise InputError("xs must be strictly increasing")
    if not np.all(np.isfinite(ys)):
        raise InputError("values must be finite")
    idx = _lower_hull_indices(xs, ys)
    hull = np.interp(xs, xs[idx], ys[idx])
    return EnvelopeGrid1D(xs.copy(), ys.copy(), np.minimum(hull, ys))


def verify_hdelta_limit(density: BulkDensity, params, delta_seq: Iterable[float],
                        xs) -> tuple[float, list[tuple[float, float]]]:
    """Sup-norm gap between ``sup_delta hull(h_delta)`` and ``hull(Psi)``.

    Returns the final gap and the running ``(delta, gap)`` trace; deltas are
    processed in increasing order.
    """
    xs = np.asarray(xs, dtype=float)
    xi = xs.reshape(-1, 1, 1)
    target = convex_envelope_1d((xs, np.asarray(density.eval(xi)))).hull_ys
    best = np.full_like(xs, -np.inf)
    trace = []
    for d in sorted(delta_seq):
        env = convex_envelope_1d((xs, h_delta(density, params, d, xi))).hull_ys
        best = np.maximum(best, env)
        trace.append((d, float(np.max(np.abs(best - target)))))
    return trace[-1][1], trace
