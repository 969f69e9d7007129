import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cohesive_phase.energy_models import BulkDensity, h_delta
from cohesive_phase.errors import InputError, InvariantError, ShapeError
from cohesive_phase.phase_field import (BoundaryCondition, Fidelity, PhaseFieldState, Phi,
                                        add_fidelity, assemble_energy, bar_state, boundary_mask,
                                        cell_energy_nd, crossover_bisection, energy_gradient, gamma_sweep,
                                        mollified_band, mollified_step, slicing_lower_bound,
                                        staggered_minimize)
from cohesive_phase.surface_density import SurfaceParams
from oracles import central_gradient, rel_err

P = SurfaceParams()
PQ = BulkDensity("power_q", 2.0)
DENSITIES = [PQ, BulkDensity("power_q", 3.0), BulkDensity("compressible_plus", alpha=1.0),
             BulkDensity("compressible_hat", alpha=1.0)]


def _random_state(rng, shape, m, eps=0.3):
    return PhaseFieldState(rng.standard_normal(shape + (m,)), rng.uniform(0.05, 0.95, shape),
                           1.0 / (shape[0] - 1), eps)


def _fd_check(state, density, params, M=None, fidelity=None):
    du, dv = energy_gradient(state, density, params, M=M, fidelity=fidelity)
    fu = lambda x: assemble_energy(PhaseFieldState(x, state.v, state.h, state.eps), density, params,
                                   M=M, fidelity=fidelity)
    fv = lambda x: assemble_energy(PhaseFieldState(state.u, x, state.h, state.eps), density, params,
                                   M=M, fidelity=fidelity)
    return max(rel_err(du, central_gradient(fu, state.u)), rel_err(dv, central_gradient(fv, state.v)))


def test_energy_trivial_states():
    st_ = PhaseFieldState(np.full((11, 1), 3.0), np.ones(11), 0.1, 0.05)
    assert assemble_energy(st_, PQ, P) == 0.0
    st0 = PhaseFieldState(np.random.default_rng(0).standard_normal((11, 1)), np.zeros(11), 0.1, 0.05)
    assert assemble_energy(st0, PQ, P) == pytest.approx(1.0 / (P.kappa * 0.05), rel=1e-14)


@pytest.mark.parametrize("dens", DENSITIES, ids=lambda d: f"{d.kind}-{d.q}")
def test_gradient_2d(dens):
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert _fd_check(_random_state(rng, (5, 6), 2), dens, P) <= 1e-5


def test_gradient_1d_and_truncated():
    rng = np.random.default_rng(2)
    for _ in range(20):
        st_ = _random_state(rng, (9,), 1, eps=1.0)
        assert _fd_check(st_, PQ, P) <= 1e-5
        assert _fd_check(st_, PQ.recession(), P, M=3.0) <= 1e-5


def test_gradient_other_exponents():
    rng = np.random.default_rng(3)
    params = SurfaceParams(p=3.0, q=3.0, ell=0.5)
    for _ in range(10):
        assert _fd_check(_random_state(rng, (5, 5), 1), BulkDensity("power_q", 3.0), params) <= 1e-5


def test_gradient_with_fidelity():
    rng = np.random.default_rng(4)
    for r in (2.0, 3.0):
        st_ = _random_state(rng, (5, 5), 2)
        fid = Fidelity(rng.standard_normal((5, 5, 2)), r, 0.1)
        assert _fd_check(st_, DENSITIES[3], P, fidelity=fid) <= 1e-5


def test_zero_state_zero_gradient():
    st_ = PhaseFieldState(np.zeros((6, 6, 2)), np.ones((6, 6)), 0.2, 0.1)
    bc = BoundaryCondition.none((6, 6), 2)
    du, dv = energy_gradient(st_, PQ, P, bc)
    assert np.all(du == 0) and np.all(dv == 0)


def test_harmonic_u_residual():
    st0, bc = bar_state([0.7], 0.1, 20)
    du, dv = energy_gradient(st0, PQ, P, bc)
    assert np.max(np.abs(du)) <= 1e-12


def test_add_fidelity_values():
    rng = np.random.default_rng(5)
    st_ = _random_state(rng, (6, 6), 2)
    E = assemble_energy(st_, PQ, P)
    E2, _ = add_fidelity(E, None, st_, st_.u, 2.0, 0.0, PQ)
    assert E2 == pytest.approx(E, rel=1e-14)
    c = np.array([0.3, -0.4])
    E3, _ = add_fidelity(E, None, st_, st_.u - c, 2.0, 0.0, PQ)
    area = (st_.h * 5) ** 2
    assert E3 - E == pytest.approx(0.25 * area, rel=1e-12)
    with pytest.raises((ShapeError, InputError)):
        add_fidelity(E, None, st_, np.zeros((3, 3, 2)), 2.0, 0.0, PQ)


def test_state_validation_and_binary(tmp_path):
    with pytest.raises(InvariantError):
        PhaseFieldState(np.zeros(4), np.array([0.0, 1.5, 1.0, 1.0]), 0.1, 0.1).validate()
    with pytest.raises(ShapeError):
        PhaseFieldState(np.zeros((3, 1)), np.ones(4), 0.1, 0.1)
    st_ = _random_state(np.random.default_rng(6), (4, 5), 3)
    st_.to_binary(tmp_path / "s.bin")
    back = PhaseFieldState.from_binary(tmp_path / "s.bin")
    np.testing.assert_array_equal(back.u, st_.u)
    np.testing.assert_array_equal(back.v, st_.v)
    assert (back.h, back.eps) == (st_.h, st_.eps)


def test_mollifier_shapes():
    t = np.linspace(-3, 3, 601)
    s = mollified_step(t)
    assert mollified_step(np.array([0.0]))[0] == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(s + s[::-1], 1.0, atol=1e-12)
    assert np.all(s[t <= -1] == 0) and np.all(s[t >= 1] == 1) and np.all(np.diff(s) >= 0)
    b = mollified_band(t)
    assert np.all(b[np.abs(t) <= 1] == 0) and np.all(b[np.abs(t) >= 3] == 1)


def test_mollified_boundary_condition():
    base = PhaseFieldState(np.zeros((17, 17, 1)), np.ones((17, 17)), 0.5, 1.0, (-4.0, -4.0))
    bc = BoundaryCondition.mollified_jump(base, [1.0], [0.0, 1.0])
    assert np.array_equal(bc.u_mask, boundary_mask((17, 17)))
    st_ = bc.apply(base)
    bc.check(st_)
    with pytest.raises(InvariantError):
        bc.check(base)
    with pytest.raises(InputError):
        BoundaryCondition.mollified_jump(base, [1.0], [1.0, 1.0])


def test_bar_elastic_regime():
    st0, bc = bar_state([0.1], 0.05, 80)
    res = staggered_minimize(st0, PQ, P, bc)
    assert res.energy == pytest.approx(0.01, rel=0.1)
    hist = np.asarray(res.history)
    assert np.all(np.diff(hist) <= 0)
    assert np.all((res.state.v >= 0) & (res.state.v <= 1))
    du, dv = energy_gradient(res.state, PQ, P, bc)
    free = (res.state.v > 0) & (res.state.v < 1)
    assert np.max(np.abs(du)) <= 1e-6 and np.max(np.abs(dv[free]), initial=0) <= 1e-5


def test_bar_crack_regime():
    st0, bc = bar_state([10.0], 0.05, 80)
    res = staggered_minimize(st0, PQ, P, bc)
    assert res.energy == pytest.approx(1.0, rel=0.1)
    assert res.state.v.min() <= 0.1
    assert np.all(np.diff(np.asarray(res.history)) <= 0)


def test_cell_nd_zero_jump_decreases():
    psi = PQ.recession()
    vals = [cell_energy_nd([0.0], [0.0, 1.0], T, psi, P).value for T in (4.0, 8.0)]
    assert vals[1] < vals[0] and min(vals) >= 0
    with pytest.raises(InputError):
        cell_energy_nd([1.0], [0.6, 0.8], 4.0, psi, P)


def test_slicing_intact_state():
    rng = np.random.default_rng(7)
    st_ = PhaseFieldState(rng.standard_normal((21, 1)), np.ones(21), 0.05, 0.1)
    for d in (0.3, 0.6, 0.9):
        res = slicing_lower_bound(st_, PQ, P, d)
        assert res.ubar.jump_count() == 0 and res.perimeter == 0.0
        grads = np.diff(st_.u[:, 0]) / st_.h
        expect = d ** (P.qprime + 1) * sum(h_delta(PQ, P, d, g.reshape(1, 1)) for g in grads) * st_.h
        assert res.lower_bound == pytest.approx(expect, rel=1e-12)
        assert res.lower_bound <= res.energy


def test_slicing_broken_state():
    st_ = PhaseFieldState(np.linspace(0, 1, 21), np.zeros(21), 0.05, 0.1)
    res = slicing_lower_bound(st_, PQ, P, 0.5)
    assert res.ubar.total_variation() == 0.0
    assert res.lower_bound == pytest.approx(0.0) and res.lower_bound <= res.energy


def test_slicing_crack_minimizer_has_one_jump():
    st0, bc = bar_state([10.0], 0.05, 80)
    res = staggered_minimize(st0, PQ, P, bc)
    for d in (0.3, 0.6, 0.9):
        sb = slicing_lower_bound(res.state, PQ, P, d, bc)
        lo, hi = Phi(d ** P.qprime), Phi(d)
        assert lo < sb.tbar < hi
        assert sb.ubar.jump_count() == 1
        assert sb.lower_bound <= sb.energy
        assert sb.coarea_ok


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([0.3, 0.6, 0.9]), st.sampled_from([1, 2]))
def test_slicing_bound_below_energy(seed, delta, dim):
    rng = np.random.default_rng(seed)
    shape = (15,) if dim == 1 else (6, 7)
    st_ = _random_state(rng, shape, 1, eps=rng.uniform(0.05, 1.0))
    st_.v = rng.uniform(0, 1, shape) ** rng.uniform(0.2, 3)
    res = slicing_lower_bound(st_, PQ, P, delta)
    assert res.lower_bound <= res.energy


def test_slicing_delta_range():
    st_ = PhaseFieldState(np.zeros(5), np.ones(5), 0.25, 0.1)
    with pytest.raises(InputError):
        slicing_lower_bound(st_, PQ, P, 1.0)


def test_gamma_sweep_elastic():
    res = gamma_sweep([0.1], PQ, P, [0.1, 0.05])
    assert res.reference == pytest.approx(0.01)
    assert all(r.ok for r in res.rows)
    assert res.rows[-1].energy == pytest.approx(0.01, rel=0.1)
    with pytest.raises(InputError):
        gamma_sweep([0.1], PQ, P, [0.05, 0.1])


def test_crossover_bisection():
    lo, hi = crossover_bisection(0.0, 2.0, lambda z: z > math.sqrt(2), 30)
    assert lo <= math.sqrt(2) <= hi and hi - lo <= 2.0 / 2 ** 30
    with pytest.raises(InputError):
        crossover_bisection(0.0, 1.0, lambda z: True)
