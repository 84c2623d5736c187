import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cawave import cache
from cawave import dynamics as dy
from cawave.errors import DomainError, InsufficientData, MeasurementError, PreconditionError
from cawave.model import (DEFAULT_JL, H_null, equilibrium_report, excitability_roots, line_intersections,
                          solve_nullcline_branches)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 1.5), st.floats(0.1, 4.0))
def test_closed_cell_conserves_total_calcium(params, u0, w0):
    traj = dy.integrate_kinetics((u0, w0), params, 100.0, "closed")
    q = traj.u + traj.w / params.gamma
    assert np.max(np.abs(q - q[0])) <= 1e-6


def test_open_cell_outside_window_settles_at_the_slow_rate(params):
    J = 0.5 * excitability_roots(params, params.eps)[0]
    slow = np.linalg.eigvals(equilibrium_report(J, params, "open").jacobian).real.max()
    assert slow < 0
    traj = dy.integrate_kinetics((2 * J, float(H_null(J, params))), params, 200.0 / params.eps, "open", J_in=J)
    assert traj.u[-1] == pytest.approx(J, rel=1e-3)
    assert dy.detect_periodic_orbit(traj) is None
    # the late approach follows the slow eigenvalue
    late = traj.times > 100.0 / params.eps
    rate = np.polyfit(traj.times[late], np.log(np.abs(traj.u[late] - J)), 1)[0]
    assert rate == pytest.approx(slow, rel=0.05)


def test_crossing_events_are_logged(params):
    traj = dy.integrate_kinetics((0.03, 1.0), params, 50.0, "closed", level=0.1)
    for t, label in traj.events:
        assert label == "u-up"
        assert np.interp(t, traj.times, traj.u) == pytest.approx(0.1, abs=1e-3)


def test_invalid_inputs(params):
    with pytest.raises(DomainError):
        dy.integrate_kinetics((-0.1, 1.0), params, 1.0)
    with pytest.raises(DomainError):
        dy.integrate_kinetics((0.1, 1.0), params, 1.0, kind="leaky")
    with pytest.raises(DomainError):
        dy.Trajectory(np.array([0.0, 0.0]), np.zeros((2, 2)), "open")


def _synthetic(t, u):
    return dy.Trajectory(t, np.column_stack([u, np.zeros_like(u)]), "open")


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 20.0), st.floats(0.1, 3.0))
def test_orbit_of_a_pure_oscillation(period, amp):
    t = np.linspace(0.0, 30 * period, 30 * 400)
    orbit = dy.detect_periodic_orbit(_synthetic(t, 1.0 + amp * np.sin(2 * np.pi * t / period)))
    assert orbit.period == pytest.approx(period, rel=1e-3)
    assert orbit.amplitude == pytest.approx(2 * amp, rel=1e-3)


def test_decaying_and_short_signals():
    t = np.linspace(0.0, 200.0, 20000)
    assert dy.detect_periodic_orbit(_synthetic(t, 1.0 + np.exp(-t / 5) * np.sin(t))) is None
    assert dy.detect_periodic_orbit(_synthetic(t, np.ones_like(t))) is None
    t = np.linspace(0.0, 25.0, 2000)
    with pytest.raises(InsufficientData):
        dy.detect_periodic_orbit(_synthetic(t, np.sin(2 * np.pi * t / 7.0)))


def test_small_orbit_near_hopf_has_the_linear_period(params):
    lo, _ = excitability_roots(params, params.eps)
    A = equilibrium_report(lo, params, "open").jacobian
    T_lin = 2 * np.pi / np.abs(np.linalg.eigvals(A).imag).max()
    orb = dy.small_orbit(1e-6 * lo, params, lo, T_lin)
    assert orb.J_in > lo
    assert orb.period == pytest.approx(T_lin, rel=1e-2)


def _moving_tanh(velocity, x, times, width=0.1):
    u = np.array([0.5 * (1 + np.tanh((x - 3.0 - velocity * t) / width)) for t in times])
    return dy.PdeSolution(x, times, u, np.zeros_like(u))


@settings(max_examples=20, deadline=None)
@given(st.floats(-2.0, -0.05))
def test_speed_of_a_translating_profile(velocity):
    x = np.linspace(0.0, 6.0, 1201)
    m = dy.measure_wave_speed(_moving_tanh(velocity, x, np.linspace(0.0, 1.0, 21)), 0.5, strict=True)
    # linear interpolation between grid points limits the accuracy
    assert m.velocity == pytest.approx(velocity, rel=1e-4)
    assert m.speed == abs(m.velocity)


def test_uncrossed_level_is_an_error():
    x = np.linspace(0.0, 6.0, 601)
    with pytest.raises(MeasurementError):
        dy.measure_wave_speed(_moving_tanh(-1.0, x, np.linspace(0.0, 1.0, 21)), 2.0)


def test_initial_conditions(params):
    x = np.linspace(0.0, 10.0, 1001)
    _, _, J_r = line_intersections(DEFAULT_JL, 5.0, params)
    u, w = dy.initial_condition("front", x, params, 5.0, DEFAULT_JL)
    assert u[0] == pytest.approx(DEFAULT_JL) and u[-1] == pytest.approx(J_r)
    q = u + w / 5.0
    assert q[0] == pytest.approx(q[-1], abs=1e-10)
    u, _ = dy.initial_condition("back", x, params, 5.0, DEFAULT_JL)
    assert u[0] == pytest.approx(J_r) and u[-1] == pytest.approx(DEFAULT_JL)
    u, _ = dy.initial_condition("pulse", x, params, 5.0, DEFAULT_JL)
    assert u[0] == pytest.approx(DEFAULT_JL) and u.max() > DEFAULT_JL
    with pytest.raises(DomainError):
        dy.initial_condition("spiral", x, params, 5.0, DEFAULT_JL)


def test_coarse_pde_front_runs_near_the_traveling_front(params, front, tmp_path, monkeypatch):
    monkeypatch.setenv(cache.ENV_VAR, str(tmp_path))
    kw = dict(L=8.0, n=1600, t_end=1.0, dt_snap=0.05)
    sol = dy.simulate_wave_pde(params, 5.0, **kw)
    m = dy.measure_wave_speed(sol, 0.5 * (front.u[0] + front.u[-1]), strict=True)
    assert m.velocity < 0
    assert m.speed == pytest.approx(front.s, rel=0.03)
    # a second call is served from the cache and is identical
    assert len(list(tmp_path.glob("pde-*.npz"))) == 1
    again = dy.simulate_wave_pde(params, 5.0, **kw)
    assert np.array_equal(again.u, sol.u)


def test_pde_needs_enough_points(params):
    with pytest.raises(PreconditionError):
        dy.simulate_wave_pde(params, 5.0, n=100)


def test_subthreshold_bump_dies_out(params):
    # the bump stays below the middle branch at the resting w, so nothing is launched
    threshold = solve_nullcline_branches(float(H_null(DEFAULT_JL, params)), params)[1][0]
    sol = dy.simulate_wave_pde(params, 5.0, L=8.0, n=800, ic="bump", t_end=5.0, use_cache=False)
    start, end = sol.u[0] - DEFAULT_JL, sol.u[-1] - DEFAULT_JL
    assert DEFAULT_JL + start.max() < threshold
    assert np.abs(end).max() < 0.05 * start.max()
