import json

import numpy as np
import pytest
from scipy.integrate import solve_bvp

from cawave import travelwave as tw
from cawave.errors import CawaveError, PreconditionError
from cawave.model import DEFAULT_JL, F_flux, H_null, dF_du, f_rate, gamma_max, line_intersections

from .conftest import N_NODES

# Frozen planar speeds at gamma = 5, J_l = 0.03 (front checked against the collocation oracle below).
S_FRONT, S_BACK, S_PULSE = 3.5945004334, 0.2477070976, 0.5139997677


def _oracle_front_speed(p, gamma, J_l):
    """Front speed from scipy's collocation on the reduced second-order equation.

    Conservation of u + w/gamma eliminates w; translation is fixed by leaving
    the rest state along its unstable direction at a prescribed offset.
    """
    D = p.D
    _, _, J_r = line_intersections(J_l, gamma, p)
    q_l = J_l + H_null(J_l, p) / gamma

    def rhs(x, y, par):
        s = par[0]
        u, v = y
        w = gamma * (q_l + D * v / s - u)
        return np.vstack([v, (s * v - F_flux(np.abs(u), w, p)) / D])

    def rate(s):
        a = float(dF_du(J_l, H_null(J_l, p), p))
        fg = float(f_rate(J_l, p)) * gamma
        b = fg * D / s - s
        return (-b + np.sqrt(b * b - 4 * D * (a - fg))) / (2 * D)

    delta = 1e-7

    def bc(ya, yb, par):
        return np.array([ya[0] - (J_l + delta), ya[1] - rate(par[0]) * delta, yb[0] - J_r])

    x = np.linspace(0.0, 1.0, 3001)
    u0 = J_l + (J_r - J_l) * 0.5 * (1 + np.tanh((x - 0.15) / 0.03))
    res = solve_bvp(rhs, bc, x, np.vstack([u0, np.gradient(u0, x)]), p=[3.0], tol=1e-7, max_nodes=60000)
    return float(res.p[0])


def test_front_speed_matches_independent_collocation(params, front):
    assert front.s == pytest.approx(_oracle_front_speed(params, 5.0, DEFAULT_JL), rel=1e-7)


def test_frozen_planar_speeds(front, back, pulse):
    assert front.s == pytest.approx(S_FRONT, rel=1e-7)
    assert back.s == pytest.approx(S_BACK, rel=1e-6)
    assert pulse.s == pytest.approx(S_PULSE, rel=1e-6)


@pytest.mark.parametrize("kind", ["front", "back", "pulse"])
def test_total_calcium_equal_at_both_ends(kind, front, back, pulse):
    wave = {"front": front, "back": back, "pulse": pulse}[kind]
    q = wave.u + wave.w / wave.gamma
    assert abs(q[0] - q[-1]) <= 1e-6


def test_wave_shapes(front, back, pulse):
    assert np.all(np.diff(front.u) > -1e-10)
    assert np.all(np.diff(back.u) < 1e-10)
    assert pulse.u[0] == pytest.approx(DEFAULT_JL, abs=1e-6)
    assert pulse.u[-1] == pytest.approx(DEFAULT_JL, abs=1e-6)
    assert pulse.u_max > line_intersections(DEFAULT_JL, 5.0, pulse.params)[1]
    for wave in (front, back, pulse):
        assert wave.residual < 1e-8


def test_curved_and_open_waves_need_a_guess(params):
    with pytest.raises(PreconditionError):
        tw.solve_wave("front", 5.0, params, kappa=1.0)
    with pytest.raises(PreconditionError):
        tw.solve_wave("front", 5.0, params, eps=1e-3)


def test_no_front_beyond_the_tangency(params):
    with pytest.raises(CawaveError):
        tw.solve_wave("front", 1.01 * gamma_max(DEFAULT_JL, params), params, n_nodes=N_NODES)


def test_profile_export(tmp_path, front):
    front.to_csv(tmp_path / "front.csv")
    lines = (tmp_path / "front.csv").read_text().splitlines()
    assert lines[0] == "xi,u,w" and len(lines) == front.n_nodes + 1
    head = json.loads((tmp_path / "front.json").read_text())
    assert head["kind"] == "front" and head["s"] == front.s and head["schema_version"] == 1


def test_dispersion_sorted_and_positive(dispersion):
    for kind, c in dispersion.items():
        assert np.all(np.diff(c.gammas) > 0), kind
        assert np.all(c.speeds > 0), kind


def test_restart_from_interior_sample_reproduces_neighbour(params, dispersion):
    # one continuation step (single mesh pass) from sample i onto sample i+1
    c = dispersion["front"]
    i = len(c.samples) // 2
    g = float(c.gammas[i + 1])
    setup = tw._setup("front", g, params, 0.0, DEFAULT_JL, 0.0)
    prev = c.profiles[i]
    again = tw._solve_from(setup, tw._arrays(prev), prev.s, g, 0.0, 0.0, N_NODES, passes=1)
    assert again.s == pytest.approx(c.speeds[i + 1], abs=1e-8)


def test_front_and_back_speeds_balance_at_gamma_m(balance):
    assert abs(balance.s_front - balance.s_back) < 1e-8


def test_dispersion_csv(tmp_path, dispersion):
    c = dispersion["back"]
    c.to_csv(tmp_path / "d.csv")
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "gamma,s,converged,residual" and len(rows) == len(c.samples) + 1
    assert float(rows[1].split(",")[0]) == c.gammas[0]
