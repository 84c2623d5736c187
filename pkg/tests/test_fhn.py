import warnings

import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings
from hypothesis import strategies as st

from cawave import fhn
from cawave.errors import DomainError, PreconditionError

P = fhn.FhnParams()
# Frozen at eps = 0.01, 1200 nodes.
S_PLANAR = 0.434918
FOLD = (0.0119398, 0.3950184)


@pytest.fixture(scope="module")
def curve():
    return fhn.fhn_curvature_curve((-0.5, 0.2), P, n_nodes=1200)


def test_s0_is_the_speed_of_the_exact_bistable_front():
    x, D, a = sy.symbols("x D alpha", positive=True)
    u = 1 / (1 + sy.exp(x / sy.sqrt(2 * D)))
    c = sy.sqrt(D / 2) * (1 - 2 * a)
    assert sy.simplify(D * sy.diff(u, x, 2) + c * sy.diff(u, x) + u * (u - a) * (1 - u)) == 0
    for d, al in ((1.0, 0.1), (0.3, 0.25)):
        expect = float(c.subs({D: d, a: al}))
        assert fhn.fhn_s0(fhn.FhnParams(D=d, alpha=al)) == pytest.approx(expect, rel=1e-14)


def test_params_validation():
    with pytest.raises(DomainError):
        fhn.FhnParams(alpha=0.6)
    with pytest.raises(DomainError):
        fhn.FhnParams(eps=0.0)
    assert P.replace(eps=0.002).to_dict()["eps"] == 0.002


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.5, 1.5), st.floats(-0.2, 0.5))
def test_kinetic_partials_match_finite_differences(u, w):
    kin = fhn.FhnKinetics(P)
    h = 1e-6
    au, aw, bu, bw = (float(np.asarray(x)) for x in kin.partials(np.array(u), np.array(w)))
    a_p, b_p = kin.rates(u + h, w)
    a_m, b_m = kin.rates(u - h, w)
    assert au == pytest.approx((a_p - a_m) / (2 * h), abs=1e-6)
    assert bu == pytest.approx((b_p - b_m) / (2 * h), abs=1e-9)
    a_p, b_p = kin.rates(u, w + h)
    a_m, b_m = kin.rates(u, w - h)
    assert aw == pytest.approx((a_p - a_m) / (2 * h), abs=1e-6)
    assert bw == pytest.approx((b_p - b_m) / (2 * h), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.02, 0.3), st.floats(-20.0, -1.0), st.floats(1e-4, 1e-2))
def test_quadratic_roots_obey_vieta(kappa, s1, eps):
    p = P.replace(eps=eps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            hi, lo = fhn.fhn_quadratic_roots(kappa, p, s1)
        except PreconditionError:
            return
    s0 = fhn.fhn_s0(p)
    assert hi >= lo
    assert hi + lo == pytest.approx(s0 + s1 * eps - p.D * kappa, rel=1e-10, abs=1e-14)
    assert hi * lo == pytest.approx(-p.D * kappa * s1 * eps, rel=1e-9, abs=1e-18)


def test_quadratic_outside_its_regime():
    with pytest.warns(RuntimeWarning):
        fhn.fhn_quadratic_roots(0.005, P, -9.0)
    # close to s0 the discriminant turns negative
    with pytest.raises(PreconditionError):
        fhn.fhn_quadratic_roots(0.5, P, -9.0)


def test_planar_pulse():
    sp = fhn.fhn_planar_speed(P, n_nodes=1200)
    assert sp.s == pytest.approx(S_PLANAR, rel=1e-5)
    assert sp.residual < 1e-8
    u = sp.profile.u
    assert abs(u[0]) < 1e-4 and abs(u[-1]) < 1e-4 and u.max() > 0.7


def test_curvature_curve_has_a_fold(curve):
    k_f, t_f = curve.markers["fold"]
    assert (k_f, t_f) == pytest.approx(FOLD, rel=1e-4)
    kf, tf = fhn.fast_branch(curve)
    ks, ts = fhn.slow_branch(curve)
    assert kf[-1] == ks[-1] == k_f
    # at a shared curvature the fast branch is the faster one
    for kap in (0.0, 0.008):
        assert np.interp(kap, kf, tf) > np.interp(kap, ks, ts)


def test_planar_point_and_eikonal_marker(curve):
    j = int(np.argmin(np.abs(curve.kappa)))
    assert curve.kappa[j] == 0.0
    assert curve.ts[j] == pytest.approx(S_PLANAR, rel=1e-5)
    grid, line = curve.markers["eikonal"]
    assert np.allclose(line, fhn.fhn_s0(P) - P.D * grid)
