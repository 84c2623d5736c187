"""Kinetics, nullcline geometry and equilibrium structure of the calcium model.

The kinetics are

    F(u, w) = f(u) w - g(u),      f(u) = alpha + k_f u^2/(u^2+phi1^2) * phi2/(u+phi2),
    g(u) = f(u) u + k_s u,        H(u) = g(u)/f(u),

with the closed cell  u' = F,  w' = -gamma F  and the open cell adding
eps (J_in - u) to the u equation.  All functions accept numpy arrays.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from .errors import AssumptionViolation, CountMismatch, DomainError, PreconditionError

#: Left rest state used throughout the package.  See README for why this is
#: not the 0.06 quoted alongside the published figures.
DEFAULT_JL = 0.03

#: Roots closer than this (in u) are treated as one double root.
FOLD_TOL = 1e-6

U_CAP = 20.0
N_SCAN = 2000


@dataclass(frozen=True)
class ModelParams:
    D: float = 0.025
    alpha: float = 0.5
    k_s: float = 200.0
    k_f: float = 200.0
    phi1: float = 1.0
    phi2: float = 2.0
    gamma: float = 5.0
    eps: float = 0.001
    J_in: float = DEFAULT_JL

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v <= 0:
                raise DomainError(f"ModelParams.{f.name} must be positive, got {v!r}")

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise DomainError(f"unknown ModelParams fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------- kinetics

def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("concentrations must be nonnegative")
    return u


def f_rate(u, p: ModelParams):
    u = np.asarray(u, dtype=float)
    return p.alpha + p.k_f * u**2 / (u**2 + p.phi1**2) * p.phi2 / (u + p.phi2)


def df_rate(u, p: ModelParams):
    u = np.asarray(u, dtype=float)
    P = u**2 / (u**2 + p.phi1**2)
    dP = 2 * u * p.phi1**2 / (u**2 + p.phi1**2) ** 2
    Q = p.phi2 / (u + p.phi2)
    dQ = -p.phi2 / (u + p.phi2) ** 2
    return p.k_f * (dP * Q + P * dQ)


def g_rate(u, p: ModelParams):
    return f_rate(u, p) * u + p.k_s * u


def dg_rate(u, p: ModelParams):
    return df_rate(u, p) * u + f_rate(u, p) + p.k_s


def F_flux(u, w, p: ModelParams):
    return f_rate(u, p) * w - g_rate(u, p)


def dF_du(u, w, p: ModelParams):
    return df_rate(u, p) * w - dg_rate(u, p)


def H_null(u, p: ModelParams):
    """w-coordinate of the nullcline F = 0 above u."""
    u = np.asarray(u, dtype=float)
    return u + p.k_s * u / f_rate(u, p)


def dH_null(u, p: ModelParams):
    f = f_rate(u, p)
    return 1.0 + p.k_s * (f - u * df_rate(u, p)) / f**2


def R_trace(J, p: ModelParams, gamma: float | None = None):
    """Nonzero eigenvalue of the closed-cell Jacobian at (J, H(J))."""
    gamma = p.gamma if gamma is None else gamma
    return df_rate(J, p) * H_null(J, p) - dg_rate(J, p) - gamma * f_rate(J, p)


def eval_kinetics(u, w, p: ModelParams) -> dict:
    u = _check_u(u)
    f = f_rate(u, p)
    g = g_rate(u, p)
    return {"f": f, "g": g, "F": f * w - g, "H": g / f}


def eval_chi(u, q, p: ModelParams):
    """Fast-variable rate in (u, q) coordinates, q = u + w/gamma the total calcium."""
    u = _check_u(u)
    return p.gamma * (q - u) * f_rate(u, p) - g_rate(u, p)


# ---------------------------------------------------------------- geometry

def _scan_roots(fun, a: float, b: float, n: int) -> list[tuple[float, float]]:
    xs = np.linspace(a, b, n + 1)
    ys = fun(xs)
    brackets = []
    for i in range(n):
        if ys[i] == 0.0:
            brackets.append((xs[i], xs[i]))
        elif ys[i] * ys[i + 1] < 0:
            brackets.append((xs[i], xs[i + 1]))
    return brackets


def _root(fun, a, b):
    if a == b:
        return a
    return brentq(fun, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def _polish(fun, dfun, x):
    """One Newton step; kept only if it does not increase |fun|."""
    d = dfun(x)
    if d == 0 or not np.isfinite(d):
        return x
    y = x - fun(x) / d
    return y if abs(fun(y)) <= abs(fun(x)) else x


@dataclass(frozen=True)
class NullclineGeometry:
    u_minus: float
    omega_minus: float
    u_plus: float
    omega_plus: float
    h_minus: tuple[np.ndarray, np.ndarray] = field(repr=False)
    h_zero: tuple[np.ndarray, np.ndarray] = field(repr=False)
    h_plus: tuple[np.ndarray, np.ndarray] = field(repr=False)


def find_fold_points(p: ModelParams, u_cap: float = U_CAP, n_scan: int = N_SCAN) -> NullclineGeometry:
    dH = lambda u: dH_null(u, p)
    d2H = lambda u: (dH_null(u + 1e-7, p) - dH_null(u - 1e-7, p)) / 2e-7
    brackets = _scan_roots(dH, u_cap / n_scan * 1e-3, u_cap, n_scan)
    if len(brackets) != 2:
        raise AssumptionViolation(f"expected two folds of H, found {len(brackets)}")
    u_m, u_p = (_polish(dH, d2H, _root(dH, a, b)) for a, b in brackets)
    om, op = float(H_null(u_m, p)), float(H_null(u_p, p))
    if not 0 < op < om:
        raise AssumptionViolation("nullcline is not N-shaped (need 0 < omega_+ < omega_-)")

    def tab(a, b, n=400):
        us = np.linspace(a, b, n)
        return H_null(us, p), us

    return NullclineGeometry(
        u_minus=float(u_m), omega_minus=om, u_plus=float(u_p), omega_plus=op,
        h_minus=tab(0.0, u_m), h_zero=_rev(tab(u_m, u_p)),
        h_plus=tab(u_p, u_cap),
    )


def _rev(t):
    w, u = t
    return w[::-1].copy(), u[::-1].copy()


@lru_cache(maxsize=64)
def geometry(p: ModelParams) -> NullclineGeometry:
    """Cached fold geometry; ModelParams is frozen so it is a valid key."""
    return find_fold_points(p)


def solve_nullcline_branches(w: float, p: ModelParams) -> list[tuple[float, str]]:
    """Roots u of F(u, w) = 0, ascending, labelled h-, h0, h+."""
    if w <= 0:
        raise DomainError("w must be positive")
    geo = geometry(p)
    G = lambda u: H_null(u, p) - w
    dG = lambda u: dH_null(u, p)
    out: list[tuple[float, str]] = []
    pieces = [(0.0, geo.u_minus, "h-"), (geo.u_minus, geo.u_plus, "h0"), (geo.u_plus, U_CAP, "h+")]
    for a, b, label in pieces:
        ga, gb = G(a), G(b)
        if abs(ga) < 1e-12 and label != "h-":
            out.append((a, label))
            continue
        if ga * gb < 0:
            out.append((float(_polish(G, dG, _root(G, a, b))), label))
    # fold points belong to both adjacent branches; collapse duplicates
    merged: list[tuple[float, str]] = []
    for u, lab in out:
        if merged and abs(u - merged[-1][0]) < FOLD_TOL:
            continue
        merged.append((u, lab))
    n = len(merged)
    near_fold = min(abs(w - geo.omega_plus), abs(w - geo.omega_minus)) < 1e-9 * max(1.0, w)
    if n not in (1, 3) and not near_fold:
        raise AssumptionViolation(f"nullcline has {n} points at w={w}")
    return merged


def excitability_roots(p: ModelParams, eps_shift: float = 0.0, gamma: float | None = None,
                       J_max: float = 5.0, n_scan: int = 20000) -> tuple[float, float]:
    """The two zeros of R(J) - eps_shift bounding the window where it is positive."""
    if eps_shift < 0:
        raise DomainError("eps_shift must be nonnegative")
    fun = lambda J: R_trace(J, p, gamma) - eps_shift
    br = _scan_roots(fun, J_max / n_scan * 1e-3, J_max, n_scan)
    if len(br) != 2:
        raise AssumptionViolation(f"R(J)-{eps_shift} has {len(br)} sign changes on (0,{J_max})")
    lo, hi = (_root(fun, a, b) for a, b in br)
    if fun(0.5 * (lo + hi)) <= 0:
        raise AssumptionViolation("R(J) - eps_shift has no positive excursion")
    return float(lo), float(hi)


# ------------------------------------------------- lines of constant total calcium

def _check_left_state(J_l: float, p: ModelParams):
    geo = geometry(p)
    if not (0 < J_l < geo.u_minus):
        raise PreconditionError(f"J_l={J_l} outside (0, u_-={geo.u_minus:.6g})")
    if not H_null(J_l, p) > geo.omega_plus:
        raise PreconditionError(f"H(J_l)={H_null(J_l, p):.6g} must exceed omega_+={geo.omega_plus:.6g}")
    return geo


def chord_slope(u, J_l: float, p: ModelParams):
    """gamma for which the line of constant u + w/gamma through (J_l, H(J_l)) also hits (u, H(u))."""
    u = np.asarray(u, dtype=float)
    return (H_null(J_l, p) - H_null(u, p)) / (u - J_l)


def _tangency(J_l: float, p: ModelParams, a: float, b: float) -> float:
    T = lambda u: H_null(u, p) - H_null(J_l, p) - dH_null(u, p) * (u - J_l)
    return _root(T, a, b)


def count_line_intersections(J_l: float, gamma: float, p: ModelParams) -> int:
    q = J_l + H_null(J_l, p) / gamma
    G = lambda u: u + H_null(u, p) / gamma - q
    us = np.concatenate([np.linspace(1e-9, 1.0, 4001), np.linspace(1.0, U_CAP, N_SCAN + 1)[1:]])
    gs = G(us)
    sgn = np.sign(gs)
    # J_l is itself a root; count sign changes plus exact zeros
    return int(np.count_nonzero(sgn[:-1] * sgn[1:] < 0) + np.count_nonzero(gs == 0))


def gamma_max_tangent(J_l: float, p: ModelParams) -> tuple[float, float]:
    """(gamma_M, u_T): supremum of gamma with three intersections and the tangency point."""
    geo = _check_left_state(J_l, p)
    lo, hi = 1e-6, 1.0
    while count_line_intersections(J_l, hi, p) >= 3:
        hi *= 2.0
        if hi > 1e8:
            raise AssumptionViolation("line keeps three intersections for all gamma")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if count_line_intersections(J_l, mid, p) >= 3:
            lo = mid
        else:
            hi = mid
    # refine with the double-root condition: the chord slope is stationary
    _, J_m, J_r = _raw_intersections(J_l, lo, p, geo)
    u_t = _tangency(J_l, p, J_m, J_r)
    return float(chord_slope(u_t, J_l, p)), float(u_t)


def gamma_max(J_l: float, p: ModelParams) -> float:
    return gamma_max_tangent(J_l, p)[0]


def _raw_intersections(J_l, gamma, p, geo):
    q = J_l + H_null(J_l, p) / gamma
    G = lambda u: u + H_null(u, p) / gamma - q
    us = np.concatenate([np.linspace(J_l, 1.0, 4001)[1:], np.linspace(1.0, U_CAP, N_SCAN + 1)[1:]])
    gs = G(us)
    idx = np.nonzero(np.sign(gs[:-1]) * np.sign(gs[1:]) < 0)[0]
    roots = [J_l] + [_root(G, us[i], us[i + 1]) for i in idx]
    return roots


def line_intersections(J_l: float, gamma: float, p: ModelParams, check: bool = True) -> tuple[float, float, float]:
    """(J_l, J_m, J_r): where u + w/gamma = J_l + H(J_l)/gamma meets w = H(u)."""
    _check_left_state(J_l, p)
    if gamma <= 0:
        raise PreconditionError("gamma must be positive")
    g_max, u_t = gamma_max_tangent(J_l, p)
    if gamma >= g_max * (1 - 1e-12):
        raise CountMismatch(f"gamma={gamma} is at or beyond gamma_M={g_max}: double root")
    phi = lambda u: chord_slope(u, J_l, p) - gamma
    J_m = _root(phi, J_l + 1e-12, u_t)
    hi = u_t
    while phi(hi) > 0:
        hi = hi * 2.0
        if hi > 1e6:
            raise CountMismatch("right intersection not found")
    J_r = _root(phi, u_t, hi)
    if J_r - J_m < FOLD_TOL:
        raise CountMismatch("middle and right intersections coincide (tangency)")
    if check:
        jm, jp = excitability_roots(p, 0.0, gamma=gamma)
        if not (jm < J_m < jp):
            raise AssumptionViolation(f"J_m={J_m} not in (J^-, J^+)=({jm}, {jp})")
        if not J_r > jp:
            raise AssumptionViolation(f"J_r={J_r} not beyond J^+={jp}")
    return float(J_l), float(J_m), float(J_r)


def critical_line_points(p: ModelParams, gamma: float | None = None) -> dict:
    """Hat-J_+-^c: where the lines through (J^-+, H) meet the opposite outer branch."""
    gamma = p.gamma if gamma is None else gamma
    geo = geometry(p)
    jm, jp = excitability_roots(p, 0.0, gamma=gamma)

    def meet(J0, a, b):
        q = J0 + H_null(J0, p) / gamma
        G = lambda u: u + H_null(u, p) / gamma - q
        return _root(G, a, b) if G(a) * G(b) < 0 else float("nan")

    return {"J_plus_c": meet(jm, geo.u_plus, U_CAP), "J_minus_c": meet(jp, 1e-12, geo.u_minus)}


# ---------------------------------------------------------------- equilibria

@dataclass(frozen=True)
class EquilibriumReport:
    J: float
    w_J: float
    R_value: float
    R_eps_value: float
    eigenvalues: tuple[complex, complex]
    classification: Literal["stable", "unstable", "hopf-critical"]
    model_kind: Literal["closed", "open"]
    jacobian: np.ndarray = field(repr=False)


def kinetic_jacobian(J: float, p: ModelParams, kind: str = "open", gamma=None, eps=None) -> np.ndarray:
    gamma = p.gamma if gamma is None else gamma
    eps = p.eps if eps is None else eps
    w = H_null(J, p)
    a = float(dF_du(J, w, p))
    f = float(f_rate(J, p))
    shift = eps if kind == "open" else 0.0
    return np.array([[a - shift, f], [-gamma * a, -gamma * f]])


def equilibrium_report(J: float, p: ModelParams, kind: str = "open", gamma: float | None = None,
                       eps: float | None = None, tol: float = 1e-8) -> EquilibriumReport:
    if J <= 0:
        raise DomainError("J must be positive")
    if kind not in ("open", "closed"):
        raise DomainError(f"unknown model kind {kind!r}")
    gamma = p.gamma if gamma is None else gamma
    eps = p.eps if eps is None else eps
    A = kinetic_jacobian(J, p, kind, gamma, eps)
    ev = np.linalg.eigvals(A)
    ev = tuple(sorted((complex(e) for e in ev), key=lambda z: (z.real, z.imag)))
    R = float(R_trace(J, p, gamma))
    crit = R if kind == "closed" else R - eps
    if abs(crit) <= tol:
        cls = "hopf-critical"
    else:
        cls = "unstable" if crit > 0 else "stable"
    return EquilibriumReport(J=float(J), w_J=float(H_null(J, p)), R_value=R, R_eps_value=R - eps,
                             eigenvalues=ev, classification=cls, model_kind=kind, jacobian=A)
