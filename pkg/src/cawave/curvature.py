"""Curvature relations ts(kappa) of curved calcium waves.

A wave whose front has curvature kappa obeys the planar closed-cell problem
with a rescaled volume ratio: gamma* = gamma0 * s* / ts with s* = ts + D kappa.
Every planar sample (gamma*, s*) therefore maps to one point (kappa, ts).
Open-cell curves have no such shortcut and are computed directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, minimize_scalar

from . import travelwave as tw
from .output import write_csv
from .errors import DomainError, NoConvergence, PreconditionError
from .model import ModelParams


def gamma_to_curvature_point(gamma_star, s_star, gamma0: float, D: float):
    """(kappa, ts) of the curved wave that corresponds to the planar wave (gamma*, s*)."""
    gamma_star = np.asarray(gamma_star, dtype=float)
    s_star = np.asarray(s_star, dtype=float)
    if np.any(gamma_star <= 0):
        raise DomainError("gamma* must be positive")
    kappa = s_star * (gamma_star - gamma0) / (D * gamma_star)
    ts = s_star * gamma0 / gamma_star
    if kappa.ndim == 0:
        return float(kappa), float(ts)
    return kappa, ts


@dataclass
class CurvatureCurve:
    branch: str
    gamma0: float
    D: float
    kappa: np.ndarray
    ts: np.ndarray
    gamma_star: np.ndarray
    s_star: np.ndarray
    stable: list = field(default_factory=list)
    markers: dict = field(default_factory=dict)
    source: object = field(default=None, repr=False)
    profiles: list = field(default_factory=list, repr=False)
    eps: float = 0.0

    def __post_init__(self):
        if not self.stable:
            self.stable = [None] * len(self.kappa)

    def __len__(self):
        return len(self.kappa)

    def rows(self):
        return zip(self.kappa, self.ts, self.gamma_star, self.s_star,
                   (None if st is None else int(bool(st)) for st in self.stable))

    def to_csv(self, path: str | Path, meta: dict | None = None) -> None:
        write_csv(path, ["kappa", "ts", "gamma_star", "s_star", "stable"], self.rows(), meta)

    def pieces(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split the branch (ordered by increasing gamma*) into pieces monotone in kappa."""
        order = np.argsort(self.gamma_star)
        k, t = self.kappa[order], self.ts[order]
        out, start = [], 0
        d = np.sign(np.diff(k))
        for i in range(1, len(d)):
            if d[i] != 0 and d[start] != 0 and d[i] != d[start]:
                out.append((k[start:i + 1], t[start:i + 1]))
                start = i
        out.append((k[start:], t[start:]))
        return out


def _curve_from_dispersion(branch, disp: tw.DispersionCurve, gamma0, D) -> CurvatureCurve:
    if not disp.samples:
        raise PreconditionError(f"dispersion curve for {branch} is empty")
    g, s = disp.gammas, disp.speeds
    k, t = gamma_to_curvature_point(g, s, gamma0, D)
    return CurvatureCurve(branch, gamma0, D, k, t, g.copy(), s.copy(), source=disp,
                          profiles=list(disp.profiles))


def build_curvature_curves(front: tw.DispersionCurve, back: tw.DispersionCurve,
                           pulse: tw.DispersionCurve | None, gamma0: float = 5.0,
                           D: float | None = None, balance: tw.SpeedBalance | None = None) -> dict:
    """N_F, N_B and (when pulses exist) N_P with their endpoint images."""
    D = front.params.D if D is None else D
    for c in (front, back) + ((pulse,) if pulse is not None else ()):
        if c.J_l != front.J_l:
            raise PreconditionError("dispersion curves computed at different J_l")
        if not (c.gammas[0] < gamma0 < c.gammas[-1]):
            raise PreconditionError(f"gamma0={gamma0} not inside the {c.kind} gamma-range")
    curves = {"N_F": _curve_from_dispersion("N_F", front, gamma0, D),
              "N_B": _curve_from_dispersion("N_B", back, gamma0, D)}
    for name, disp, key in (("N_F", front, "kappa_M_f"), ("N_B", back, "kappa_M_b")):
        if disp.gamma_M is not None and disp.s_at_end is not None:
            curves[name].markers[key] = gamma_to_curvature_point(disp.gamma_M, disp.s_at_end, gamma0, D)
    if pulse is not None:
        curves["N_P"] = _curve_from_dispersion("N_P", pulse, gamma0, D)
        g_m = balance.gamma_m if balance is not None else pulse.gamma_m
        s_m = balance.s if balance is not None else pulse.s_at_end
        if g_m is not None and s_m is not None:
            curves["N_P"].markers["kappa_m"] = gamma_to_curvature_point(g_m, s_m, gamma0, D)
            curves["N_P"].markers["P_m"] = curves["N_P"].markers["kappa_m"]
            s_f = float(front.speed_at(g_m))
            curves["N_F"].markers["Q_m"] = gamma_to_curvature_point(g_m, s_f, gamma0, D)
    return curves


# ---------------------------------------------------------------- critical curvatures

@dataclass(frozen=True)
class CriticalCurvatures:
    kappa_M_f: float
    kappa_m: float
    kappa_T: float
    kappa_M_b: float
    gamma_T: float
    ts_T: float
    uncertainty: dict

    def ordered(self) -> bool:
        return self.kappa_M_f < self.kappa_m < self.kappa_T < self.kappa_M_b

    def as_dict(self) -> dict:
        return {"kappa_M_f": self.kappa_M_f, "kappa_m": self.kappa_m, "kappa_T": self.kappa_T,
                "kappa_M_b": self.kappa_M_b, "gamma_T": self.gamma_T, "ts_T": self.ts_T,
                "uncertainty": dict(self.uncertainty)}


def critical_curvatures(curves: dict, refine: bool = True, n_nodes: int = tw.N_NODES) -> CriticalCurvatures:
    """kappa_M^f, kappa_m, kappa_T and kappa_M^b from the three branches."""
    nf = curves["N_F"]
    i = int(np.argmax(nf.kappa))
    if i == 0 or i == len(nf) - 1:
        raise NoConvergence("kappa is monotone along N_F: no turning point")
    g0, D = nf.gamma0, nf.D
    lo, hi = nf.gamma_star[i - 1], nf.gamma_star[i + 1]
    k_sample = nf.kappa[i]
    if refine and nf.source is not None:
        front = nf.source

        def neg_kappa(g):
            s = tw._direct_speed(front, g, n_nodes)
            return -gamma_to_curvature_point(g, s, g0, D)[0]

        res = minimize_scalar(neg_kappa, bracket=(lo, nf.gamma_star[i], hi), method="golden",
                              options={"xtol": 1e-8})
        g_T = float(res.x)
        k_T = float(-res.fun)
        s_T = tw._direct_speed(front, g_T, n_nodes)
    else:
        sp = PchipInterpolator(nf.gamma_star, nf.s_star)
        res = minimize_scalar(lambda g: -gamma_to_curvature_point(g, float(sp(g)), g0, D)[0],
                              bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        g_T, k_T = float(res.x), float(-res.fun)
        s_T = float(sp(g_T))
    ts_T = gamma_to_curvature_point(g_T, s_T, g0, D)[1]
    unc = {"kappa_T": abs(k_T - k_sample)}
    k_Mf = nf.markers.get("kappa_M_f", (np.nan,))[0]
    k_Mb = curves["N_B"].markers.get("kappa_M_b", (np.nan,))[0]
    unc["kappa_M_f"] = abs(k_Mf - nf.kappa[-1])
    unc["kappa_M_b"] = abs(k_Mb - curves["N_B"].kappa[-1])
    if "N_P" in curves:
        k_m = curves["N_P"].markers.get("kappa_m", (np.nan,))[0]
        unc["kappa_m"] = abs(k_m - curves["N_P"].kappa[-1])
    else:
        k_m = np.nan
    return CriticalCurvatures(float(k_Mf), float(k_m), k_T, float(k_Mb), g_T, float(ts_T), unc)


# ---------------------------------------------------------------- direct curved fronts

def curved_front(kappa: float, p: ModelParams, gamma0: float = 5.0, J_l: float | None = None,
                 n_nodes: int = tw.N_NODES, max_dkappa: float = 2.0) -> tw.WaveProfile:
    """Closed-cell front with curvature kappa solved directly, its speed being the normal speed ts.

    The planar front is carried to ``kappa`` in steps of at most ``max_dkappa``.
    """
    J_l = tw.DEFAULT_JL if J_l is None else J_l
    prof = tw.solve_wave("front", gamma0, p, J_l=J_l, n_nodes=n_nodes)
    n_steps = max(1, int(np.ceil(abs(kappa) / max_dkappa)))
    for k in np.linspace(0.0, kappa, n_steps + 1)[1:]:
        prof = tw.solve_wave("front", gamma0, p, kappa=float(k), guess=prof, J_l=J_l, n_nodes=n_nodes)
    return prof


# ---------------------------------------------------------------- inverse map

def solve_kappa_root(kappa: float, disp: tw.DispersionCurve, gamma0: float = 5.0,
                     D: float | None = None, n_sub: int = 8) -> list[float]:
    """All gamma* with s(gamma*) = D kappa gamma* / (gamma* - gamma0) on the sampled curve."""
    D = disp.params.D if D is None else D
    g, s = disp.gammas, disp.speeds
    if disp.gamma_M is not None and disp.s_at_end is not None and disp.gamma_M > g[-1]:
        g, s = np.append(g, disp.gamma_M), np.append(s, disp.s_at_end)
    if kappa == 0.0:
        return [float(gamma0)] if g[0] <= gamma0 <= g[-1] else []
    sp = PchipInterpolator(g, s)
    # multiply through by (gamma* - gamma0): no pole, same roots off gamma0
    h = lambda x: sp(x) * (x - gamma0) - D * kappa * x
    if kappa > 0:
        if g[-1] <= gamma0:
            return []
        knots = g[g > gamma0]
        a = gamma0
    else:
        if g[0] >= gamma0:
            return []
        knots = g[g < gamma0]
        a = g[0]
    nodes = np.unique(np.concatenate([[a], knots, [gamma0] if kappa < 0 else []]))
    fine = np.unique(np.concatenate([np.linspace(nodes[j], nodes[j + 1], n_sub + 1)
                                     for j in range(len(nodes) - 1)]))
    vals = h(fine)
    roots = []
    for j in range(len(fine) - 1):
        if vals[j] == 0.0:
            roots.append(float(fine[j]))
        elif vals[j] * vals[j + 1] < 0:
            roots.append(float(brentq(h, fine[j], fine[j + 1], xtol=1e-13)))
    if vals[-1] == 0.0 and fine[-1] != gamma0:
        roots.append(float(fine[-1]))
    return sorted(r for r in roots if abs(r - gamma0) > 1e-12)


# ---------------------------------------------------------------- open cell

def _open_profile(kind, gamma, p, eps, J_l, n_nodes):
    """Open-cell wave at kappa = 0, seeded by the closed-cell wave and continued in eps."""
    closed = tw.solve_wave(kind, gamma, p, J_l=J_l, n_nodes=n_nodes)
    prof, e = closed, 0.0
    targets = [eps] if eps >= 1e-3 else [1e-3, eps]
    for target in targets:
        try:
            prof = tw.solve_wave(kind, gamma, p, eps=target, guess=prof, J_l=J_l, n_nodes=n_nodes)
        except tw.RECOVERABLE:
            # geometric homotopy in eps
            for ee in np.geomspace(max(e, target * 1e-3), target, 8):
                prof = tw.solve_wave(kind, gamma, p, eps=ee, guess=prof, J_l=J_l, n_nodes=n_nodes)
        e = target
    return closed, prof


def _curve_from_profiles(branch, profs, gamma0, D, eps):
    k = np.array([pr.kappa for pr in profs])
    t = np.array([pr.s for pr in profs])
    s_star = t + D * k
    g_star = gamma0 * s_star / t
    return CurvatureCurve(branch, gamma0, D, k, t, g_star, s_star, profiles=list(profs), eps=eps)


def opencell_curvature_curve(kappa_range: tuple[float, float], p: ModelParams, gamma: float = 5.0,
                             eps: float | None = None, J_in: float | None = None,
                             ts_stop: float | None = None, n_nodes: int = 800,
                             max_dts: float = 0.05) -> dict:
    """Open-cell curvature branches: 'open-front' (long waves) and 'open-pulse' (short pulses).

    The front-led branch is continued in ts with kappa unknown, which passes the
    kappa-fold smoothly; it stops once ts falls to ``ts_stop``.  The short
    pulses are continued in kappa.
    """
    eps = p.eps if eps is None else eps
    J_in = p.J_in if J_in is None else J_in
    if eps <= 0:
        raise PreconditionError("the open cell needs eps > 0")
    k_lo, k_hi = kappa_range
    D = p.D
    out = {}

    # front-led branch
    try:
        _, front0 = _open_profile("front", gamma, p, eps, J_in, n_nodes)
    except tw.RECOVERABLE as exc:
        raise NoConvergence(f"no initial open-cell front: {exc}") from exc
    setup = tw._setup("front", gamma, p, eps, J_in, 0.0)

    def at_ts(ts, prev):
        return tw._solve_from(setup, tw._arrays(prev), ts, gamma, eps, prev.kappa, n_nodes,
                              passes=1, free=("kappa",))

    def kappa_below(limit):
        def solve(ts, prev):
            pr = at_ts(ts, prev)
            if pr.kappa < limit:
                raise tw.WrongKind("left the kappa range")
            return pr
        return solve

    ts0 = front0.s
    # towards negative kappa the wave speeds up: ts grows
    ts_hi = ts0 - D * k_lo * 1.5 + 1.0
    up, _ = tw._march(ts0, ts_hi, 0.02, kappa_below(k_lo), front0, step_max=max_dts, max_rel_ds=1.0,
                      step_min=1e-6)
    ts_low = ts_stop if ts_stop is not None else 0.05 * ts0
    down, reason = tw._march(ts0, ts_low, 0.02, kappa_below(k_lo), front0, step_max=max_dts,
                             max_rel_ds=1.0, step_min=1e-6)
    profs = [pr for _, pr in up[::-1]] + [front0] + [pr for _, pr in down]
    profs = [pr for pr in profs if k_lo <= pr.kappa <= k_hi]
    out["open-front"] = _curve_from_profiles("open-front", profs, gamma, D, eps)
    out["open-front"].markers["terminated_by"] = reason
    k = out["open-front"].kappa
    if len(k) > 2 and 0 < int(np.argmax(k)) < len(k) - 1:
        j = int(np.argmax(k))
        out["open-front"].markers["fold"] = (float(k[j]), float(out["open-front"].ts[j]))

    # short pulses
    try:
        _, pulse0 = _open_profile("pulse", gamma, p, eps, J_in, n_nodes)
    except tw.RECOVERABLE as exc:
        raise NoConvergence(f"no initial open-cell pulse: {exc}") from exc
    psetup = tw._setup("pulse", gamma, p, eps, J_in, 0.0)

    def at_kappa(kap, prev):
        pr = tw._solve_from(psetup, tw._arrays(prev), prev.s, gamma, eps, kap, n_nodes, passes=1)
        tw._check_kind(pr, psetup)
        return pr

    left, _ = tw._march(0.0, k_lo, 0.5, at_kappa, pulse0, step_max=max(1.0, (k_hi - k_lo) / 40),
                        max_rel_ds=0.05, step_min=1e-3)
    right, preason = tw._march(0.0, k_hi, 0.5, at_kappa, pulse0, step_max=max(1.0, (k_hi - k_lo) / 40),
                               max_rel_ds=0.05, step_min=1e-3)
    profs = [pr for _, pr in left[::-1]] + [pulse0] + [pr for _, pr in right]
    out["open-pulse"] = _curve_from_profiles("open-pulse", profs, gamma, D, eps)
    out["open-pulse"].markers["terminated_by"] = preason
    return out


def closed_union_deviation(open_curves: dict, closed: dict, ts_Pm: float) -> dict:
    """Max |ts_open - ts_closed| over shared kappa, against the union of N_F above P_m and N_P.

    Each open point is compared with the nearest ts the union takes at the
    same kappa; near a fold that is the branch the point actually approaches.
    The front-led open branch is only compared above P_m, where it is meant
    to follow N_F.
    """
    union = [(closed["N_F"], ts_Pm)]
    if "N_P" in closed:
        union.append((closed["N_P"], -np.inf))
    result = {}
    for name, oc in open_curves.items():
        floor = ts_Pm if name == "open-front" else -np.inf
        worst = -np.inf
        for kap, ts in zip(oc.kappa, oc.ts):
            if ts < floor:
                continue
            cands = []
            for c, lo in union:
                t = _ts_at_kappa(c, kap)
                cands.extend(t[t >= lo - 1e-12])
            cands = np.array(cands)
            if cands.size:
                worst = max(worst, float(np.min(np.abs(cands - ts))))
        result[name] = worst
    finite = [v for v in result.values() if np.isfinite(v)]
    result["max"] = max(finite) if finite else np.nan
    return result


def _ts_at_kappa(c: CurvatureCurve, kappa: float) -> np.ndarray:
    """Every ts the branch takes at ``kappa`` (empty outside its kappa-range).

    Branches mapped from a dispersion curve are evaluated through the speed
    interpolant in gamma*, which stays accurate at folds where interpolating
    ts in kappa does not.
    """
    if len(c) < 2:
        return np.array([])
    disp = c.source
    if disp is None:
        out = []
        for k, t in c.pieces():
            if len(k) > 1 and k.min() <= kappa <= k.max():
                o = np.argsort(k)
                out.append(float(np.interp(kappa, k[o], t[o])))
        return np.array(out)
    g, sp = disp.gammas, PchipInterpolator(disp.gammas, disp.speeds)
    ts = []
    for r in solve_kappa_root(kappa, disp, c.gamma0, c.D):
        s = float(sp(r)) if r <= g[-1] else disp.s_at_end
        ts.append(s * c.gamma0 / r)
    return np.array(ts)
