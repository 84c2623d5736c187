import json

import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings
from hypothesis import strategies as st

from cawave import model as m
from cawave.errors import AssumptionViolation, DomainError, PreconditionError
from cawave.model import ModelParams

P = ModelParams()
# Frozen from the sympy oracle below (default parameters).
U_MINUS = 0.051772279253001
J_HAT = (0.0532326214291081, 0.354603227828751)


def _sympy_kinetics(p: ModelParams):
    u = sy.symbols("u", positive=True)
    f = p.alpha + p.k_f * u**2 / (u**2 + p.phi1**2) * p.phi2 / (u + p.phi2)
    g = f * u + p.k_s * u
    return u, f, g


def test_fold_points_match_symbolic_oracle():
    u, f, g = _sympy_kinetics(P)
    H = g / f
    dH = sy.diff(H, u)
    roots = sorted(float(sy.nsolve(dH, u, br, solver="bisect")) for br in ((0.01, 0.2), (0.2, 3.0)))
    geo = m.find_fold_points(P)
    assert geo.u_minus == pytest.approx(roots[0], abs=1e-9)
    assert geo.u_plus == pytest.approx(roots[1], abs=1e-9)
    assert geo.u_minus == pytest.approx(U_MINUS, abs=1e-10)
    assert 0 < geo.omega_plus < geo.omega_minus


def test_trace_roots_match_symbolic_oracle():
    u, f, g = _sympy_kinetics(P)
    R = sy.diff(f, u) * g / f - sy.diff(g, u) - P.gamma * f
    oracle = [float(sy.nsolve(R, u, br, solver="bisect")) for br in ((0.01, 0.1), (0.2, 1.0))]
    lo, hi = m.excitability_roots(P)
    assert (lo, hi) == pytest.approx(oracle, abs=1e-10)
    assert (lo, hi) == pytest.approx(J_HAT, abs=1e-10)


def test_nullcline_branch_roots_are_zeros_of_F():
    geo = m.geometry(P)
    for w in np.linspace(0.5 * geo.omega_plus, 1.5 * geo.omega_minus, 23):
        roots = m.solve_nullcline_branches(float(w), P)
        assert len(roots) in (1, 3)
        for u, label in roots:
            assert abs(float(m.F_flux(u, w, P))) <= 1e-9 * max(1.0, w)
        if len(roots) == 3:
            assert [lab for _, lab in roots] == ["h-", "h0", "h+"]


def test_negative_concentration_rejected():
    with pytest.raises(DomainError):
        m.eval_kinetics(-0.1, 1.0, P)
    with pytest.raises(DomainError):
        m.solve_nullcline_branches(-1.0, P)


def test_params_validation_and_json_roundtrip(tmp_path):
    with pytest.raises(DomainError):
        ModelParams(D=-1.0)
    with pytest.raises(DomainError):
        ModelParams.from_dict({"bogus": 1.0})
    q = P.replace(gamma=7.5, eps=1e-4)
    path = tmp_path / "p.json"
    path.write_text(q.to_json())
    assert ModelParams.load(path) == q
    assert set(json.loads(q.to_json())) == {"D", "alpha", "k_s", "k_f", "phi1", "phi2", "gamma", "eps", "J_in"}


def test_left_state_window():
    with pytest.raises(PreconditionError):
        m.line_intersections(0.06, 5.0, P)      # above the lower fold
    J_l, J_m, J_r = m.line_intersections(m.DEFAULT_JL, 5.0, P)
    q = lambda x: x + m.H_null(x, P) / 5.0
    assert q(J_m) == pytest.approx(q(J_l), abs=1e-10)
    assert q(J_r) == pytest.approx(q(J_l), abs=1e-10)
    assert J_l < m.geometry(P).u_minus < J_m < m.geometry(P).u_plus < J_r


def test_gamma_max_is_a_tangency():
    g_M, u_T = m.gamma_max_tangent(m.DEFAULT_JL, P)
    assert m.count_line_intersections(m.DEFAULT_JL, g_M * (1 - 1e-6), P) >= 3
    assert m.count_line_intersections(m.DEFAULT_JL, g_M * (1 + 1e-6), P) == 1
    # at the tangency the line and the nullcline share a slope: dH/du = -gamma
    assert float(m.dH_null(u_T, P)) == pytest.approx(-g_M, rel=1e-8)


def test_equilibrium_classification_tracks_trace_function():
    lo, hi = m.excitability_roots(P, P.eps)
    mid = 0.5 * (lo + hi)
    assert m.equilibrium_report(mid, P, "open").classification == "unstable"
    assert m.equilibrium_report(0.5 * lo, P, "open").classification == "stable"
    assert m.equilibrium_report(2 * hi, P, "open").classification == "stable"
    rep = m.equilibrium_report(mid, P, "open")
    assert rep.R_eps_value == pytest.approx(rep.R_value - P.eps)
    # the trace of the 2x2 Jacobian is R - eps
    assert np.trace(rep.jacobian) == pytest.approx(rep.R_eps_value, rel=1e-12, abs=1e-12)


def test_closed_cell_jacobian_is_singular():
    A = m.kinetic_jacobian(0.1, P, "closed")
    assert abs(np.linalg.det(A)) < 1e-9 * np.abs(A).max() ** 2


def test_missing_fold_structure_is_reported():
    with pytest.raises(AssumptionViolation):
        m.find_fold_points(P.replace(k_f=1.0))


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-4, 15.0))
def test_nullcline_identities(u):
    H = float(m.H_null(u, P))
    assert float(m.F_flux(u, H, P)) == pytest.approx(0.0, abs=1e-9 * max(1.0, H))
    q = u + H / P.gamma
    assert float(m.eval_chi(u, q, P)) == pytest.approx(0.0, abs=1e-8 * max(1.0, H))


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 10.0))
def test_derivatives_match_finite_differences(u):
    h = 1e-6 * max(u, 1e-2)
    fd = (m.H_null(u + h, P) - m.H_null(u - h, P)) / (2 * h)
    assert float(m.dH_null(u, P)) == pytest.approx(float(fd), rel=1e-5, abs=1e-6)
    fd = (m.f_rate(u + h, P) - m.f_rate(u - h, P)) / (2 * h)
    assert float(m.df_rate(u, P)) == pytest.approx(float(fd), rel=1e-5, abs=1e-6)
