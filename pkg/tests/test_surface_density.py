import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cohesive_phase.energy_models import BulkDensity
from cohesive_phase.errors import InputError, InvariantError
from cohesive_phase.surface_density import (CellOptions, Profile, SurfaceParams, cell_energy,
                                            crack_lower_bound, extend_profile, f_eps, f_p, g_of, g_scal,
                                            growth_constant_estimate, minimize_cell)
from oracles import crack_window_cost, g_scal_oracle

P = SurfaceParams()
PSI = BulkDensity("power_q", 2.0).recession()


def test_params_validation():
    for bad in (dict(p=1.0), dict(q=0.5), dict(ell=0.0)):
        with pytest.raises(InputError):
            SurfaceParams(**bad)
    assert SurfaceParams(q=2.0).kappa == pytest.approx(4.0)


def test_degradation_values():
    assert f_p(0.0, P) == 0.0
    assert f_p(0.5, P) == pytest.approx(2.0)
    assert f_p(1.0, P) == math.inf
    assert f_eps(1.0, 0.01, P) == 1.0
    assert f_eps(0.5, 0.01, P) == pytest.approx(0.2)
    assert f_eps(0.0, 0.01, P) == 0.0
    t = np.sort(np.random.default_rng(0).uniform(0, 1, 1000))
    assert np.all(np.diff(f_p(t, P)) >= 0)
    with pytest.raises(InputError):
        f_p(1.5, P)
    with pytest.raises(InputError):
        f_p(-0.1, P)


def test_zero_profile_energy():
    prof = Profile(8.0, np.zeros(101), np.ones(101), [0.0], [1.0])
    assert cell_energy(prof, PSI, P) == 0.0
    assert crack_lower_bound(prof) == 0.0


def test_linear_crack_young_bound():
    # beta: 1 -> 0 -> 1 linearly, alpha jumps where beta = 0
    T, N, z = 8.0, 4001, 3.0
    x = np.linspace(-T / 2, T / 2, N)
    prof = Profile(T, np.where(x > 0, z, 0.0), np.abs(x) / (T / 2), [z], [1.0])
    lb = crack_lower_bound(prof)
    assert lb == pytest.approx(1.0, abs=1e-6)
    assert cell_energy(prof, PSI, P) >= lb - 1e-8


def test_crack_profile_refinement():
    # 1 - beta = sinh((T/2 - |x|)/2) / sinh(T/4) is the broken profile of least cost on the window
    T, z = 8.0, 5.0
    errs = []
    for N in (1001, 4001):
        x = np.linspace(-T / 2, T / 2, N)
        beta = 1.0 - np.sinh((T / 2 - np.abs(x)) / 2) / np.sinh(T / 4)
        val = cell_energy(Profile(T, np.where(x > 0, z, 0.0), beta, [z], [1.0]), PSI, P)
        errs.append(abs(val - crack_window_cost(T)))
    assert errs[1] < errs[0]
    assert errs[1] <= 0.02 * crack_window_cost(T)


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 60), st.floats(0.0, 50.0), st.integers(0, 2 ** 31))
def test_young_bound_on_random_profiles(N, z, seed):
    rng = np.random.default_rng(seed)
    beta = rng.uniform(0, 1, N)
    beta[0] = beta[-1] = 1.0
    alpha = np.concatenate([[0.0], np.sort(rng.uniform(0, z, N - 2)), [z]])
    prof = Profile(4.0, alpha, beta, [z], [1.0])
    assert crack_lower_bound(prof) <= cell_energy(prof, PSI, P) + 1e-8


def test_cell_energy_rejects_bad_beta():
    prof = Profile(4.0, np.zeros(5), np.array([1.0, 0.5, 1.2, 0.5, 1.0]), [0.0], [1.0])
    with pytest.raises((InvariantError, InputError)):
        cell_energy(prof, PSI, P)


def test_minimize_cell_zero_jump():
    sol = minimize_cell([0.0], [1.0], 8.0, 401, PSI, P)
    assert sol.value <= 1e-8
    np.testing.assert_allclose(sol.profile.beta, 1.0)


def test_minimize_cell_large_jump_against_window_cost():
    sol = minimize_cell([100.0], [1.0], 8.0, 2000, PSI, P)
    assert abs(sol.value - crack_window_cost(8.0)) <= 0.01 * crack_window_cost(8.0)
    assert sol.lower_bound <= sol.value + 1e-8
    hist = np.asarray(sol.history, dtype=float)
    assert np.all(np.diff(hist) <= 1e-12 * np.abs(hist[:-1]))
    prof = sol.profile
    assert prof.beta[0] == prof.beta[-1] == 1.0
    assert prof.alpha[0, 0] == 0.0 and prof.alpha[-1, 0] == pytest.approx(100.0)
    assert np.all((prof.beta >= 0) & (prof.beta <= 1))


def test_minimize_cell_methods_agree():
    a = minimize_cell([1.0], [1.0], 8.0, 400, PSI, P)
    b = minimize_cell([1.0], [1.0], 8.0, 400, PSI, P, opts=CellOptions(method="lbfgs", max_iters=20000))
    assert b.value >= a.value - 1e-6
    assert abs(a.value - b.value) <= 1e-3 * a.value


def test_extend_profile():
    out = extend_profile(np.array([1.0, 0.2, 1.0]), 7)
    np.testing.assert_array_equal(out, [1, 1, 1.0, 0.2, 1.0, 1, 1])
    with pytest.raises(InputError):
        extend_profile(np.ones(5), 3)


@pytest.mark.parametrize("s", [0.01, 1.0])
def test_g_scal_against_geodesic_oracle(s):
    assert g_scal(s, P) == pytest.approx(g_scal_oracle(s), rel=1e-3)


def test_g_scal_basic_values():
    assert g_scal(0.0, P) == 0.0
    v = g_scal(100.0, P)
    assert 0.95 <= v <= 1.02


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_g_scal_other_exponents(p):
    params = SurfaceParams(p=p)
    assert g_scal(0.1, params, N=1000) == pytest.approx(g_scal_oracle(0.1, p=p), rel=5e-3)


def test_g_of_zero_and_isotropy():
    assert g_of([0.0], [1.0], PSI, P).value <= 1e-8
    for z in (0.1, 1.0, 10.0):
        est = g_of([z], [1.0], PSI, P)
        assert est.value == pytest.approx(g_scal_oracle(z), rel=0.02)
        assert est.lower_bound <= est.value + 1e-8


@pytest.mark.parametrize("z", [1e-300, 1e-118, 1e-30])
def test_g_of_tiny_jump_is_finite(z):
    est = g_of([z], [1.0], PSI, P)
    assert 0.0 <= est.value <= 1e-15


def test_g_of_vector_jump_is_isotropic():
    a = g_of([0.6, 0.8], [1.0], PSI, P).value
    b = g_of([1.0], [1.0], PSI, P).value
    assert a == pytest.approx(b, rel=1e-6)


def test_g_of_history_is_cauchy():
    est = g_of([1.0], [1.0], PSI, P)
    vals = [v for _, v in est.convergence_history]
    steps = np.abs(np.diff(vals))
    assert np.all(np.diff(steps) < 0)
    assert est.converged


def test_truncation_insensitivity_unit_jump():
    a = g_of([1.0], [1.0], PSI, P, M=1e3).value
    b = g_of([1.0], [1.0], PSI, P).value
    assert abs(a - b) <= 0.01 * b


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_subadditivity(a, b):
    g = lambda z: g_of([z], [1.0], PSI, P).value
    assert g(a + b) <= g(a) + g(b) + 2e-3


def test_growth_bounds_single_constant():
    sizes = np.logspace(-2, 1, 7)
    vals = [g_of([s], [1.0], PSI, P).value for s in sizes]
    C = growth_constant_estimate(vals, sizes, P.p)
    assert 1.0 <= C <= 3.0
    ref = np.minimum(sizes ** (2 / 3), 1.0)
    assert np.all(np.asarray(vals) <= C * ref + 1e-12) and np.all(ref <= C * np.asarray(vals) + 1e-12)


def test_continuity_proxy():
    zs = np.linspace(0.5, 1.5, 6)
    vals = np.array([g_of([z], [1.0], PSI, P).value for z in zs])
    # values move by less than the spacing times the local slope bound
    assert np.all(np.abs(np.diff(vals)) <= 0.5 * np.diff(zs))
    assert np.all(np.diff(vals) >= -1e-9)
