"""Command-line experiments writing versioned CSV result rows.

Usage: ``cohesive-phase <subcommand> [--config FILE] [--key value ...]``.
Parameters come from the built-in defaults, then the config file
(``key = value`` lines), then the command line. ``--grid key=v1;v2`` (may be
repeated, or ``grid.key = v1;v2`` in the config file) runs the cartesian
product of the listed values as independent jobs.

Exit codes: 0 all rows pass, 1 some metric failed, 2 usage or input error,
3 solver error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .energy_models import (KINDS, BulkDensity, check_projection_property, random_projection_samples,
                            verify_hdelta_limit)
from .errors import DivergenceError, InputError, InvariantError, ShapeError
from .phase_field import (PhaseFieldState, bar_jump_indicator, bar_state, cell_energy_nd,
                          crossover_bisection, crossover_reference, energy_gradient, assemble_energy,
                          gamma_sweep, slicing_lower_bound, staggered_minimize)
from .sbv_toolkit import DiscreteSBV, G0Density, quantize, select_rho, split_competitor, bv_ellipticity_test
from .surface_density import (DEFAULT_SPACING, SurfaceParams, fit_small_z_exponent, g_of, g_scal)

SCHEMA = "# cohesive-phase results schema=1"
COLUMNS = ["subcommand", "params", "metric", "value", "tolerance", "pass", "wall_time", "detail"]
THREADS_ENV = "COHESIVE_PHASE_THREADS"

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# parameter parsing


def _floats(text):
    text = str(text).strip()
    if not text:
        return ()
    return tuple(float(t) for t in text.split(","))


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_COMMON = {
    "seed": (int, 0, "random seed (echoed in every row)"),
    "max_seconds": (float, math.inf, "emit a wall_time row that fails above this limit"),
}
_SURF = {
    "p": (float, 2.0, "degradation exponent p > 1"),
    "q": (float, 2.0, "growth exponent q > 1"),
    "ell": (float, 1.0, "degradation scale"),
}

PARAMS = {
    "g-scal": {
        **_SURF,
        "s": (float, 1.0, "jump size"),
        "N": (int, 2000, "profile nodes"),
        "lo": (float, 0.0, "lower acceptance bound"),
        "hi": (float, 1.02, "upper acceptance bound"),
    },
    "cell-density": {
        **_SURF,
        "dim": (int, 1, "1 for the reduced 1D cell, 2 for the square cell"),
        "z": (_floats, (1.0,), "jump vector, comma separated"),
        "nu": (_floats, (), "normal (default e1 in 1D, e2 in 2D)"),
        "psi": (str, "power_q", f"bulk density kind {KINDS}"),
        "alpha": (float, 0.0, "volumetric weight of compressible densities"),
        "M": (float, math.inf, "truncation level (inf: none)"),
        "T": (_floats, (), "window lengths (default 4,8,16,32 in 1D, 4,8,16 in 2D)"),
        "spacing": (float, DEFAULT_SPACING, "1D node spacing"),
        "h": (float, 0.25, "2D grid size"),
        "compare": (str, "none", "none | gscal | truncation"),
        "tol": (float, math.nan, "relative tolerance of the comparison"),
        "hi": (float, 1.02, "upper bound on g (crack competitor plus slack)"),
        "pairs": (int, 0, "random pairs for the subadditivity check (0: off)"),
        "zmax": (float, 5.0, "largest |z| of the random pairs"),
        "slack": (float, 2e-3, "additive slack of the subadditivity check"),
    },
    "sweep-gamma": {
        **_SURF,
        "z": (_floats, (0.1, 10.0), "bar end displacements"),
        "eps": (_floats, (0.1, 0.05, 0.025, 0.0125), "decreasing eps values"),
        "cells_per_eps": (int, 4, "cells per eps"),
        "length": (float, 1.0, "bar length"),
        "tol": (float, 0.1, "relative tolerance at the smallest eps"),
        "crossover": (_floats, (), "bracket lo,hi for the crack crossover (empty: off)"),
        "iterations": (int, 20, "bisection steps"),
        "crossover_tol": (float, 0.05, "relative tolerance of the crossover location"),
    },
    "exponent-fit": {
        **_SURF,
        "smin": (float, 1e-3, "smallest jump"),
        "smax": (float, 1e-1, "largest jump"),
        "points": (int, 7, "log-spaced fit points"),
        "N": (int, 2000, "profile nodes"),
        "tol": (float, 0.15, "tolerance on the exponent"),
        "r2": (float, 0.98, "minimal coefficient of determination"),
    },
    "quantize-check": {
        "fields": (int, 1000, "random fields"),
    },
    "envelope-check": {
        "psi": (str, "power_q", "bulk density kind"),
        "q": (float, 2.0, "exponent of power_q"),
        "p": (float, 2.0, "degradation exponent"),
        "ell": (float, 1.0, "degradation scale"),
        "xmin": (float, -3.0, "grid start"),
        "xmax": (float, 3.0, "grid end"),
        "points": (int, 4001, "grid points"),
        "deltas": (_floats, (0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.999), "delta values"),
        "tol": (float, 0.05, "sup-norm tolerance"),
    },
    "projection-check": {
        "density": (str, "compressible_plus", f"density kind {KINDS}"),
        "alpha": (float, 1.0, "volumetric weight"),
        "q": (float, 2.0, "exponent of power_q"),
        "samples": (int, 10000, "random samples"),
        "scale": (float, 3.0, "sample scale"),
        "tol": (float, 1e-9, "allowed violation"),
    },
    "bv-test": {
        "g": (str, "sqrt", "surface density: sqrt | power | square"),
        "gamma": (float, 0.5, "exponent of the power density"),
        "z": (_floats, (2.0,), "jump vector"),
        "dim": (int, 2, "grid dimension"),
        "n": (int, 16, "cells per side (even)"),
        "ratios": (_floats, (0.25, 0.5, 0.75), "split ratios"),
        "tol": (float, 1e-12, "violation tolerance"),
    },
    "gradient-check": {
        "states": (int, 20, "random states per density"),
        "step": (float, 1e-6, "central difference step"),
        "tol": (float, 1e-5, "relative error tolerance"),
    },
    "slicing-check": {
        **_SURF,
        "deltas": (_floats, (0.3, 0.6, 0.9), "threshold parameters"),
        "states": (int, 10, "bar minimizers with z spread over [zmin, zmax]"),
        "zmin": (float, 0.1, "smallest bar displacement"),
        "zmax": (float, 10.0, "largest bar displacement (the crack state)"),
        "eps": (float, 0.05, "phase-field length"),
    },
}


def _all_params(sub):
    return {**_COMMON, **PARAMS[sub]}


def _parse_value(sub, key, text):
    table = _all_params(sub)
    if key not in table:
        raise InputError(f"unknown parameter {key!r} for {sub}")
    conv = table[key][0]
    try:
        return conv(text)
    except ValueError as exc:
        raise InputError(f"bad value for {key}: {text!r}") from exc


def read_config(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _parse_grid(items):
    axes = []
    for item in items:
        if "=" not in item:
            raise InputError(f"grid entry must be key=v1;v2, got {item!r}")
        k, v = item.split("=", 1)
        vals = [s.strip() for s in v.split(";") if s.strip()]
        axes.append((k.strip().replace("-", "_"), vals))
    return axes


@dataclass
class JobConfig:
    subcommand: str
    params: dict
    out: str = "results.csv"

    def validate(self):
        p = self.params
        if p.get("seed", 0) < 0:
            raise InputError("seed must be nonnegative")
        for k in ("p", "q"):
            if k in p and not p[k] > 1.0:
                raise InputError(f"{k} must exceed 1")
        if "ell" in p and not p["ell"] > 0:
            raise InputError("ell must be positive")
        for k in ("N", "points", "fields", "samples", "states", "iterations", "cells_per_eps", "n"):
            if k in p and p[k] < 0:
                raise InputError(f"{k} must be nonnegative")


def build_jobs(sub, config_values, cli_values, grid_items, out):
    """Merge defaults, config and overrides and expand the grid into jobs."""
    table = _all_params(sub)
    base = {k: v[1] for k, v in table.items()}
    grid = []
    for k, v in config_values.items():
        if k.startswith("grid."):
            grid.append(f"{k[5:]}={v}")
        elif k == "out":
            out = v
        else:
            base[k] = _parse_value(sub, k, v)
    for k, v in cli_values.items():
        base[k] = _parse_value(sub, k, v)
    grid.extend(grid_items)
    axes = _parse_grid(grid)
    jobs = []
    for combo in itertools.product(*[vals for _, vals in axes]):
        params = dict(base)
        for (k, _), v in zip(axes, combo):
            params[k] = _parse_value(sub, k, v)
        job = JobConfig(sub, params, out)
        job.validate()
        jobs.append(job)
    return jobs


# ---------------------------------------------------------------------------
# rows


@dataclass
class ResultRow:
    subcommand: str
    params: str
    metric: str
    value: float
    tolerance: str
    passed: bool
    wall_time: float
    detail: str = ""

    def as_list(self):
        return [self.subcommand, self.params, self.metric, repr(float(self.value)), self.tolerance,
                "pass" if self.passed else "fail", f"{self.wall_time:.3f}", self.detail]


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    return repr(v)


def _echo(params):
    return ";".join(f"{k}={_fmt(params[k])}" for k in sorted(params))


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA + "\n")
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow(r.as_list())


def read_csv(path):
    """Rows of a results file as dicts (schema line skipped)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# cohesive-phase results"):
            raise InputError("not a cohesive-phase results file")
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# subcommands; each returns a list of (metric, value, tolerance, passed, detail)


def _surface(p):
    return SurfaceParams(p["p"], p["q"], p["ell"])


def _rel(a, b):
    return abs(a - b) / abs(b) if b != 0 else abs(a - b)


def run_g_scal(p):
    v = g_scal(p["s"], _surface(p), p["N"])
    return [("g_scal", v, f"[{p['lo']!r},{p['hi']!r}]", p["lo"] <= v <= p["hi"], "")]


def _cell_1d(p, out):
    params = _surface(p)
    psi = BulkDensity(p["psi"], p["q"], p["alpha"]).recession()
    z = np.asarray(p["z"])
    nu = np.asarray(p["nu"] or (1.0,))
    sched = p["T"] or (4.0, 8.0, 16.0, 32.0)
    est = g_of(z, nu, psi, params, T_schedule=sched, M=p["M"], spacing=p["spacing"])
    out.append(("g", est.value, f"<={p['hi']!r}", est.value <= p["hi"], f"T={est.T_used!r}"))
    gap = est.value - est.lower_bound
    out.append(("young_gap", gap, ">=-1e-08", gap >= -1e-8, ""))
    if p["compare"] == "gscal":
        tol = 0.02 if math.isnan(p["tol"]) else p["tol"]
        ref = g_scal(float(np.linalg.norm(z)), params)
        e = _rel(est.value, ref)
        out.append(("rel_err_gscal", e, f"<={tol!r}", e <= tol, f"g_scal={ref!r}"))
    elif p["compare"] == "truncation":
        tol = 0.01 if math.isnan(p["tol"]) else p["tol"]
        if math.isinf(p["M"]):
            raise InputError("compare=truncation needs a finite M")
        ref = g_of(z, nu, psi, params, T_schedule=sched, spacing=p["spacing"]).value
        e = _rel(est.value, ref)
        out.append(("rel_diff_truncation", e, f"<={tol!r}", e <= tol, f"g_inf_M={ref!r}"))
    elif p["compare"] != "none":
        raise InputError("compare must be none, gscal or truncation")


def _subadditivity(p, out):
    params = _surface(p)
    psi = BulkDensity(p["psi"], p["q"], p["alpha"]).recession()
    m = len(p["z"])
    nu = np.asarray(p["nu"] or (1.0,))
    rng = np.random.default_rng(p["seed"])

    def rand_z():
        d = rng.standard_normal(m)
        n = np.linalg.norm(d)
        return d / n * rng.uniform(0.0, p["zmax"]) if n > 0 else d

    def g(z):
        est = g_of(z, nu, psi, params, spacing=p["spacing"])
        return est.value, est.value - est.lower_bound

    worst, worst_young = -math.inf, math.inf
    for _ in range(p["pairs"]):
        a, b = rand_z(), rand_z()
        (ga, ya), (gb, yb), (gab, yab) = g(a), g(b), g(a + b)
        worst = max(worst, gab - ga - gb)
        worst_young = min(worst_young, ya, yb, yab)
    out.append(("subadditivity_defect", worst, f"<={p['slack']!r}", worst <= p["slack"],
                f"pairs={p['pairs']}"))
    out.append(("young_gap", worst_young, ">=-1e-08", worst_young >= -1e-8, ""))


def _cell_2d(p, out):
    params = _surface(p)
    psi = BulkDensity("power_q", p["q"]).recession()
    z = np.asarray(p["z"])
    nu = np.asarray(p["nu"] or (0.0, 1.0))
    Ts = p["T"] or (4.0, 8.0, 16.0)
    vals = []
    for T in Ts:
        res = cell_energy_nd(z, nu, T, psi, params, h=p["h"])
        vals.append(res.value)
        out.append((f"value_over_T[T={T!r}]", res.value, "", True, f"converged={res.converged}"))
    zn = float(np.linalg.norm(z))
    if zn == 0.0:
        dec = all(b < a for a, b in zip(vals, vals[1:]))
        out.append(("value_over_T_decreasing", float(dec), "==1", dec, ""))
    else:
        tol = 0.10 if math.isnan(p["tol"]) else p["tol"]
        ref = g_scal(zn, params)
        e = _rel(vals[-1], ref)
        out.append(("rel_err_gscal", e, f"<={tol!r}", e <= tol, f"T={Ts[-1]!r};g_scal={ref!r}"))


def run_cell_density(p):
    out = []
    if p["pairs"] > 0:
        _subadditivity(p, out)
    elif p["dim"] == 1:
        _cell_1d(p, out)
    elif p["dim"] == 2:
        _cell_2d(p, out)
    else:
        raise InputError("dim must be 1 or 2")
    return out


def run_sweep_gamma(p):
    params = _surface(p)
    density = BulkDensity("power_q", p["q"])
    eps = p["eps"]
    if not eps:
        raise InputError("eps list is empty")
    out = []
    for z in p["z"]:
        res = gamma_sweep([z], density, params, eps, p["length"], p["cells_per_eps"])
        errs = []
        for k, row in enumerate(res.rows):
            e = _rel(row.energy, res.reference)
            errs.append(e)
            last = k == len(res.rows) - 1
            out.append((f"energy[z={z!r};eps={row.eps!r}]", row.energy,
                        f"rel<={p['tol']!r}" if last else "", (e <= p["tol"]) if last else True,
                        f"reference={res.reference!r};rel_err={e!r};min_v={row.min_v!r}"))
        if len(errs) > 1:
            mono = all(b <= a + 1e-3 for a, b in zip(errs, errs[1:]))
            out.append((f"trend[z={z!r}]", float(mono), "==1", mono, ",".join(f"{e:.4g}" for e in errs)))
    if p["crossover"]:
        if len(p["crossover"]) != 2:
            raise InputError("crossover needs lo,hi")
        lo, hi = p["crossover"]
        e_min = eps[-1]
        lo, hi = crossover_bisection(
            lo, hi, lambda zz: bar_jump_indicator([zz], density, params, e_min, p["length"],
                                                  p["cells_per_eps"])[0], p["iterations"])
        zs = crossover_reference(params)
        mid = 0.5 * (lo + hi)
        e = _rel(mid, zs)
        out.append(("crossover", mid, f"rel<={p['crossover_tol']!r}", e <= p["crossover_tol"],
                    f"bracket={lo!r},{hi!r};z_star={zs!r}"))
    return out


def run_exponent_fit(p):
    params = _surface(p)
    grid = np.logspace(math.log10(p["smin"]), math.log10(p["smax"]), p["points"])
    slope, r2, _ = fit_small_z_exponent(params, grid, lambda s: g_scal(s, params, p["N"]))
    target = 2.0 / (p["p"] + 1.0)
    return [("exponent", slope, f"|x-{target!r}|<={p['tol']!r}", abs(slope - target) <= p["tol"],
             f"target={target!r}"),
            ("r2", r2, f">={p['r2']!r}", r2 >= p["r2"], "")]


def _random_field(rng):
    m = int(rng.integers(1, 4))
    dim = int(rng.integers(1, 3))
    shape = (int(rng.integers(2, 41)),) if dim == 1 else tuple(int(s) for s in rng.integers(2, 13, 2))
    vals = rng.standard_normal(shape + (m,)) * rng.uniform(0.1, 5.0)
    if rng.random() < 0.5:
        vals = np.cumsum(vals, axis=0) * 0.3
    return DiscreteSBV.from_cells(vals, 1.0 / max(shape)), float(np.exp(rng.uniform(np.log(0.02), np.log(3.0))))


def run_quantize_check(p):
    rng = np.random.default_rng(p["seed"])
    sup_bad = comp_bad = tot_bad = 0
    worst_sup = worst_comp = worst_tot = 0.0
    for _ in range(p["fields"]):
        u, eps = _random_field(rng)
        uq = quantize(u, eps, select_rho(u, eps))
        dev = float(np.max(np.linalg.norm(u.values - uq.values, axis=-1)))
        worst_sup = max(worst_sup, dev / eps)
        sup_bad += dev > eps
        for i in range(u.m):
            a, b = uq.total_variation(i), u.total_variation(i)
            worst_comp = max(worst_comp, a / b if b > 0 else (0.0 if a == 0 else math.inf))
            comp_bad += a > b
        a, b = uq.total_variation(), math.sqrt(u.m) * u.total_variation()
        worst_tot = max(worst_tot, a / b if b > 0 else (0.0 if a == 0 else math.inf))
        tot_bad += a > b
    return [("sup_violations", sup_bad, "==0", sup_bad == 0, f"max_dev_over_eps={worst_sup!r}"),
            ("componentwise_tv_violations", comp_bad, "==0", comp_bad == 0, f"max_ratio={worst_comp!r}"),
            ("total_tv_violations", tot_bad, "==0", tot_bad == 0, f"max_ratio_over_sqrt_m={worst_tot!r}")]


def run_envelope_check(p):
    density = BulkDensity(p["psi"], p["q"])
    params = SurfaceParams(p["p"], density.q, p["ell"])
    xs = np.linspace(p["xmin"], p["xmax"], p["points"])
    gap, trace = verify_hdelta_limit(density, params, p["deltas"], xs)
    return [("sup_gap", gap, f"<={p['tol']!r}", gap <= p["tol"],
             ",".join(f"{d!r}:{g:.4g}" for d, g in trace))]


PROBE = (np.diag([1.0, 0.1]), np.array([1.0, 0.0]))


def run_projection_check(p):
    density = BulkDensity(p["density"], p["q"], p["alpha"])
    psi = density.recession()
    xis, nus = random_projection_samples((2, 2), p["samples"], p["seed"], p["scale"])
    rep = check_projection_property(psi, (xis, nus), p["tol"])
    probe = check_projection_property(psi, [PROBE], p["tol"])
    wit = "" if rep.witness is None else \
        f"xi={rep.witness[0].ravel().tolist()};nu={rep.witness[1].tolist()}"
    return [("worst_violation", rep.worst_violation, f">=-{p['tol']!r}", rep.holds, wit),
            ("probe_violation", probe.worst_violation, f">=-{p['tol']!r}", probe.holds,
             "xi=diag(1,0.1);nu=e1")]


def _square(z, nu=None):
    return np.sum(np.asarray(z, dtype=float) ** 2, axis=-1)


def run_bv_test(p):
    if p["g"] == "sqrt":
        g = G0Density(0.5)
    elif p["g"] == "power":
        g = G0Density(p["gamma"])
    elif p["g"] == "square":
        g = _square
    else:
        raise InputError("g must be sqrt, power or square")
    z = np.asarray(p["z"])
    nu = np.zeros(p["dim"])
    nu[0] = 1.0
    margins = []
    for r in p["ratios"]:
        comp = split_competitor(p["n"], p["dim"], z, r)
        res = bv_ellipticity_test(g, z, nu, comp, p["tol"])
        margins.append(res.rhs - res.lhs)
    k = int(np.argmin(margins))
    ok = margins[k] >= -p["tol"]
    return [("min_margin", margins[k], f">=-{p['tol']!r}", ok, f"ratio={p['ratios'][k]!r}")]


def _fd_rel_err(f, grad, x, step):
    g = np.asarray(grad, dtype=float).ravel()
    fd = np.zeros(x.size)
    flat = x.ravel()
    for i in range(x.size):
        old = flat[i]
        flat[i] = old + step
        fp = f(x)
        flat[i] = old - step
        fm = f(x)
        flat[i] = old
        fd[i] = (fp - fm) / (2 * step)
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))


def run_gradient_check(p):
    rng = np.random.default_rng(p["seed"])
    out = []
    kinds = [BulkDensity("power_q", 3.0), BulkDensity("compressible_plus", alpha=1.0),
             BulkDensity("compressible_hat", alpha=1.0)]
    for dens in kinds:
        worst = 0.0
        for _ in range(p["states"]):
            xi = rng.standard_normal((2, 2))
            worst = max(worst, _fd_rel_err(lambda x: float(dens.eval(x)), dens.grad(xi), xi, p["step"]))
        out.append((f"grad_{dens.kind}", worst, f"<={p['tol']!r}", worst <= p["tol"], ""))
    params = SurfaceParams(2.0, 2.0, 1.0)
    worst = 0.0
    for k in range(p["states"]):
        dens = kinds[k % 3]
        shape = (5, 6)
        st = PhaseFieldState(rng.standard_normal(shape + (2,)), rng.uniform(0.05, 0.95, shape),
                             0.2, 0.3)
        du, dv = energy_gradient(st, dens, params)

        def fu(x):
            return assemble_energy(PhaseFieldState(x, st.v, st.h, st.eps), dens, params)

        def fv(x):
            return assemble_energy(PhaseFieldState(st.u, x, st.h, st.eps), dens, params)

        e = math.hypot(_fd_rel_err(fu, du, st.u.copy(), p["step"]),
                       _fd_rel_err(fv, dv, st.v.copy(), p["step"]))
        worst = max(worst, e)
    out.append(("grad_phase_field", worst, f"<={p['tol']!r}", worst <= p["tol"], ""))
    return out


def run_slicing_check(p):
    params = _surface(p)
    density = BulkDensity("power_q", p["q"])
    n_cells = int(math.ceil(4.0 / p["eps"]))
    worst = -math.inf
    jumps = None
    for z in np.linspace(p["zmin"], p["zmax"], p["states"]):
        st0, bc = bar_state([z], p["eps"], n_cells)
        res = staggered_minimize(st0, density, params, bc)
        for d in p["deltas"]:
            try:
                sb = slicing_lower_bound(res.state, density, params, d, bc)
            except InvariantError:
                worst = math.inf
                continue
            worst = max(worst, sb.lower_bound - sb.energy)
            if z == p["zmax"]:
                c = sb.ubar.jump_count()
                jumps = c if jumps is None else min(jumps, c)
    out = [("bound_minus_energy", worst, "<=0", worst <= 0.0, f"states={p['states']}")]
    if jumps is not None:
        out.append(("crack_jump_facets", jumps, ">=1", jumps >= 1, f"z={p['zmax']!r}"))
    return out


RUNNERS = {
    "g-scal": run_g_scal,
    "cell-density": run_cell_density,
    "sweep-gamma": run_sweep_gamma,
    "exponent-fit": run_exponent_fit,
    "quantize-check": run_quantize_check,
    "envelope-check": run_envelope_check,
    "projection-check": run_projection_check,
    "bv-test": run_bv_test,
    "gradient-check": run_gradient_check,
    "slicing-check": run_slicing_check,
}


def run(job: JobConfig):
    """Run one job; returns ``(rows, status)`` with status 0, 1 or 3."""
    t0 = time.perf_counter()
    echo = _echo(job.params)
    rows = []
    try:
        results = RUNNERS[job.subcommand](job.params)
    except (DivergenceError, InvariantError, AssertionError, FloatingPointError) as exc:
        wall = time.perf_counter() - t0
        return [ResultRow(job.subcommand, echo, "error", math.nan, "", False, wall,
                          f"{type(exc).__name__}: {exc}")], EXIT_SOLVER
    wall = time.perf_counter() - t0
    for metric, value, tol, ok, detail in results:
        rows.append(ResultRow(job.subcommand, echo, metric, float(value), tol, bool(ok), wall, detail))
    limit = job.params.get("max_seconds", math.inf)
    if math.isfinite(limit):
        rows.append(ResultRow(job.subcommand, echo, "wall_time", wall, f"<={limit!r}", wall <= limit, wall))
    return rows, (EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL)


def _run_safe(job):
    try:
        return run(job)
    except (InputError, ShapeError) as exc:
        return [ResultRow(job.subcommand, _echo(job.params), "input_error", math.nan, "", False, 0.0,
                          str(exc))], EXIT_USAGE


def sweep(jobs, threads: int | None = None):
    """Run independent jobs (in parallel if ``threads > 1``) and merge rows in job order."""
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_safe, jobs))
    else:
        results = [_run_safe(j) for j in jobs]
    rows = [r for rs, _ in results for r in rs]
    status = max((s for _, s in results), default=EXIT_OK)
    return rows, status


# ---------------------------------------------------------------------------
# entry point


def _make_parser():
    ap = argparse.ArgumentParser(prog="cohesive-phase", description=__doc__.split("\n\n")[0])
    subs = ap.add_subparsers(dest="subcommand", required=True)
    for name in RUNNERS:
        sp = subs.add_parser(name)
        sp.add_argument("--config", help="key = value file")
        sp.add_argument("--out", default=None, help="output CSV (default results.csv)")
        sp.add_argument("--grid", action="append", default=[], metavar="KEY=V1;V2",
                        help="sweep a parameter over values")
        for key, (_, default, help_) in _all_params(name).items():
            flag = "--" + key.replace("_", "-")
            d = _fmt(default) if default != () else "empty"
            sp.add_argument(flag, dest=key, default=None, help=f"{help_} (default {d})")
    return ap


def main(argv=None) -> int:
    ap = _make_parser()
    args = ap.parse_args(argv)
    sub = args.subcommand
    cli_values = {k: v for k, v in vars(args).items()
                  if k not in ("subcommand", "config", "out", "grid") and v is not None}
    try:
        cfg = read_config(args.config) if args.config else {}
        jobs = build_jobs(sub, cfg, cli_values, args.grid, args.out or "results.csv")
    except InputError as exc:
        print(f"cohesive-phase {sub}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or (jobs[0].out if jobs else cfg.get("out", "results.csv"))
    rows, status = sweep(jobs)
    try:
        write_csv(out, rows)
    except OSError as exc:
        print(f"cohesive-phase: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for r in rows:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.subcommand} {r.metric} = {r.value!r} "
              f"({r.tolerance}) [{r.wall_time:.2f}s] {r.detail}")
    if jobs:
        print(f"seed={jobs[0].params.get('seed')} rows={len(rows)} -> {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
