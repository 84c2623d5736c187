"""FitzHugh-Nagumo pulses and their curvature relation, solved with the same wave machinery.

Kinetics: u_t = D u_xx + f(u) - w, w_t = eps (u - gamma w), f(u) = u (u - alpha)(1 - u).
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from . import travelwave as tw
from .curvature import CurvatureCurve
from .errors import DomainError, NoConvergence, PreconditionError, WrongKind


@dataclass(frozen=True)
class FhnParams:
    D: float = 1.0
    alpha: float = 0.1
    gamma: float = 1.0
    eps: float = 0.01

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise DomainError(f"alpha must lie in (0, 1/2), got {self.alpha}")
        for name in ("D", "gamma", "eps"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise DomainError(f"FhnParams.{name} must be positive, got {v!r}")

    def replace(self, **changes) -> "FhnParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class FhnKinetics:
    """a = f(u) - w, b = eps (u - gamma w); the wave-solver interface of the calcium kinetics."""

    p: FhnParams

    @property
    def D(self) -> float:
        return self.p.D

    def rates(self, u, w, params=None):
        p = self.p
        return u * (u - p.alpha) * (1 - u) - w, p.eps * (u - p.gamma * w)

    def partials(self, u, w, params=None):
        p = self.p
        fu = -3 * u**2 + 2 * (1 + p.alpha) * u - p.alpha
        return fu, -np.ones_like(u), p.eps * np.ones_like(u), -p.eps * p.gamma * np.ones_like(u)


def fhn_s0(p: FhnParams) -> float:
    """Speed of the eps = 0 front from 0 to 1: sqrt(D/2) (1 - 2 alpha)."""
    return float(np.sqrt(p.D / 2) * (1 - 2 * p.alpha))


def _check_pulse(prof: tw.WaveProfile):
    if not np.all(np.isfinite(prof.u)) or prof.s <= 0:
        raise WrongKind(f"non-physical solution (s={prof.s})")
    if prof.u.max() < 1e-3:
        raise WrongKind("pulse collapsed onto the rest state")


def _setup(p: FhnParams) -> tw._Setup:
    return tw._Setup("pulse", FhnKinetics(p), 0.0, None, (0.0, 0.0), (0.0, 0.0), ("dirichlet", 0.0),
                     check=_check_pulse)


# ---------------------------------------------------------------- seeding

def _simulated_pulse(p: FhnParams, L: float | None = None, h: float = 0.2):
    """Speed and comoving arrays of a pulse grown from a stimulus in a method-of-lines run.

    The stimulus sits at the right end so the pulse runs towards -x into the
    resting medium, matching the orientation of the wave solver.
    """
    s0 = fhn_s0(p)
    length = L if L is not None else max(200.0, 6.0 * s0 / p.eps)
    n = int(round(length / h)) + 1
    x = np.linspace(0.0, length, n)
    h = x[1] - x[0]
    e = np.ones(n)
    lap = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
    lap[0, 1] = lap[n - 1, n - 2] = 2.0
    lap = (p.D / h**2) * lap.tocsr()
    kin = FhnKinetics(p)

    def rhs(t, y):
        a, b = kin.rates(y[:n], y[n:])
        return np.concatenate([lap @ y[:n] + a, b])

    def jac(t, y):
        fu, fw, gu, gw = kin.partials(y[:n], y[n:])
        return sp.bmat([[lap + sp.diags(fu), sp.diags(fw)], [sp.diags(gu), sp.diags(gw)]], format="csc")

    u0 = np.where(x > length - 10.0, 1.0, 0.0)
    T = 0.7 * length / s0
    t_snap = np.linspace(0.5 * T, T, 11)
    sol = solve_ivp(rhs, (0.0, T), np.concatenate([u0, np.zeros(n)]), method="BDF", jac=jac,
                    t_eval=t_snap, rtol=1e-6, atol=1e-9)
    if sol.status != 0:
        raise NoConvergence(f"seed simulation failed: {sol.message}")
    lead = []
    for k in range(len(sol.t)):
        u = sol.y[:n, k]
        i = int(np.argmax(u > 0.5))
        lead.append(x[i - 1] + (0.5 - u[i - 1]) * h / (u[i] - u[i - 1]))
    s = -np.polyfit(sol.t, lead, 1)[0]
    u, w = sol.y[:n, -1], sol.y[n:, -1]
    if u.max() < 0.5 or s <= 0:
        raise NoConvergence("no pulse developed from the stimulus")
    i_max = int(np.argmax(u))
    xi = x - x[i_max]
    # cut just behind the recovery, before the stimulus region
    keep = xi <= min(xi[-1] - 15.0, 1.5 * length)
    xi, u, w = xi[keep], u[keep], w[keep]
    v = np.gradient(u, xi)
    return float(s), (xi, u, v, w)


# ---------------------------------------------------------------- planar pulses

def fhn_pulse(p: FhnParams, guess: tw.WaveProfile | None = None, kappa: float = 0.0,
              n_nodes: int = 1600) -> tw.WaveProfile:
    """Pulse homoclinic to (0, 0) with speed s (or normal speed ts when kappa != 0)."""
    setup = _setup(p)
    if guess is None:
        s, arrays = _simulated_pulse(p)
    else:
        s, arrays = guess.s, tw._arrays(guess)
    prof = tw._solve_from(setup, arrays, s, p.gamma, 0.0, kappa, n_nodes, passes=2)
    prof.params = p
    return prof


@dataclass
class FhnSpeed:
    s: float
    eps: float
    residual: float
    profile: tw.WaveProfile


def fhn_planar_speed(p: FhnParams, guess: tw.WaveProfile | None = None, n_nodes: int = 1600) -> FhnSpeed:
    prof = fhn_pulse(p, guess, 0.0, n_nodes)
    return FhnSpeed(prof.s, p.eps, prof.residual, prof)


@dataclass
class S1Estimate:
    s1: float
    s0: float
    eps: np.ndarray
    speeds: np.ndarray
    r_squared: float


def _continue_in_eps(prof: tw.WaveProfile, p: FhnParams, eps_target: float, n_nodes: int) -> tw.WaveProfile:
    """Carry a pulse from p.eps to eps_target, stepping in log(eps)."""
    if eps_target == p.eps:
        return prof

    def at(log_eps, prev):
        return fhn_pulse(p.replace(eps=float(np.exp(log_eps))), guess=prev, n_nodes=n_nodes)

    steps, reason = tw._march(np.log(p.eps), np.log(eps_target), 0.2, at, prof, step_min=1e-4,
                              step_max=0.4, max_rel_ds=0.1)
    if not steps or abs(steps[-1][0] - np.log(eps_target)) > 1e-12:
        raise NoConvergence(f"pulse continuation in eps stopped before {eps_target} ({reason})")
    return steps[-1][1]


def estimate_s1(p: FhnParams, eps_values=(1e-2, 5e-3, 2.5e-3), n_nodes: int = 1600) -> S1Estimate:
    """Slope s1 of s(eps) - s0 against eps, by least squares through the origin.

    Only the largest eps is seeded by simulation; smaller ones are reached by
    continuation in eps, since the pulses lengthen like 1/eps.
    """
    s0 = fhn_s0(p)
    eps = np.array(sorted(eps_values, reverse=True), dtype=float)
    prof = fhn_pulse(p.replace(eps=float(eps[0])), n_nodes=n_nodes)
    speeds, q = [prof.s], p.replace(eps=float(eps[0]))
    for e in eps[1:]:
        prof = _continue_in_eps(prof, q, float(e), n_nodes)
        q = q.replace(eps=float(e))
        speeds.append(prof.s)
    dev = np.array(speeds) - s0
    s1 = float(eps @ dev / (eps @ eps))
    ss_res = float(np.sum((dev - s1 * eps) ** 2))
    ss_tot = float(np.sum(dev**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return S1Estimate(s1, s0, eps, np.array(speeds), r2)


def fhn_quadratic_roots(kappa: float, p: FhnParams, s1: float) -> tuple[float, float]:
    """Roots of ts^2 + (D kappa - s0 - s1 eps) ts - D kappa s1 eps = 0, largest first."""
    s0 = fhn_s0(p)
    if not (p.eps < kappa < s0):
        warnings.warn("the quadratic relation is an asymptotic statement for eps << kappa << s0",
                      RuntimeWarning, stacklevel=2)
    b = p.D * kappa - s0 - s1 * p.eps
    c = -p.D * kappa * s1 * p.eps
    disc = b * b - 4 * c
    if disc < 0:
        raise PreconditionError("complex roots: outside the regime where both ts are real")
    r = np.sqrt(disc)
    # stable evaluation: the larger-magnitude root first, the other through the product
    big = (-b + r) / 2 if b <= 0 else (-b - r) / 2
    small = c / big if big != 0 else (-b - r) / 2
    return tuple(sorted((float(big), float(small)), reverse=True))


# ---------------------------------------------------------------- curvature

def fhn_curvature_curve(kappa_range: tuple[float, float], p: FhnParams, ts_min: float | None = None,
                        n_nodes: int = 1600, max_dts: float = 0.02) -> CurvatureCurve:
    """Curvature relation of the pulse, from the fast branch through the fold onto the slow one.

    Lowering ts from the planar speed (kappa unknown) follows the fast branch
    past its fold in kappa; where ts itself turns, the march hands over to
    kappa (ts unknown) and runs down to the lower end of ``kappa_range``.
    The eps -> 0 line ts = s0 - D kappa is stored in ``markers['eikonal']``.
    """
    k_lo, k_hi = kappa_range
    setup = _setup(p)
    planar = fhn_pulse(p, n_nodes=n_nodes)

    def at_ts(ts, prev):
        pr = tw._solve_from(setup, tw._arrays(prev), ts, p.gamma, 0.0, prev.kappa, n_nodes,
                            passes=1, free=("kappa",))
        if not k_lo <= pr.kappa <= k_hi:
            raise WrongKind("left the curvature range")
        return pr

    def at_kappa(kap, prev):
        pr = tw._solve_from(setup, tw._arrays(prev), prev.s, p.gamma, 0.0, kap, n_nodes, passes=1)
        if ts_min is not None and pr.s < ts_min:
            raise WrongKind("normal speed fell below ts_min")
        return pr

    ts_low = ts_min if ts_min is not None else p.eps
    down, reason = tw._march(planar.s, ts_low, 0.01, at_ts, planar, step_max=max_dts, max_rel_ds=1.0,
                             step_min=1e-7)
    profs = [planar] + [pr for _, pr in down]
    if len(profs) > 2 and profs[-1].kappa < profs[-2].kappa and profs[-1].kappa > k_lo:
        tail, reason = tw._march(profs[-1].kappa, k_lo, -1e-3, at_kappa, profs[-1],
                                 step_max=max(0.05, 0.02 * (k_hi - k_lo)), max_rel_ds=0.1, step_min=1e-7)
        profs += [pr for _, pr in tail]
    if k_lo < 0:
        up, _ = tw._march(planar.s, planar.s - p.D * k_lo, 0.01, at_ts, planar, step_max=max_dts,
                          max_rel_ds=1.0, step_min=1e-7)
        profs = [pr for _, pr in up[::-1]] + profs
    for pr in profs:
        pr.params = p
    k = np.array([pr.kappa for pr in profs])
    t = np.array([pr.s for pr in profs])
    s_star = t + p.D * k
    curve = CurvatureCurve("fhn", np.nan, p.D, k, t, np.full_like(k, np.nan), s_star, profiles=profs,
                           eps=p.eps)
    curve.markers["terminated_by"] = reason
    if len(k) > 2 and 0 < int(np.argmax(k)) < len(k) - 1:
        j = int(np.argmax(k))
        curve.markers["fold"] = (float(k[j]), float(t[j]))
    grid = np.linspace(max(k_lo, 0.0), k_hi, 50)
    curve.markers["eikonal"] = (grid, fhn_s0(p) - p.D * grid)
    return curve


def fast_branch(curve: CurvatureCurve) -> tuple[np.ndarray, np.ndarray]:
    """(kappa, ts) of the branch above the fold, ordered by kappa."""
    j = int(np.argmax(curve.kappa)) if "fold" in curve.markers else len(curve.kappa) - 1
    k, t = curve.kappa[:j + 1], curve.ts[:j + 1]
    o = np.argsort(k)
    return k[o], t[o]


def slow_branch(curve: CurvatureCurve) -> tuple[np.ndarray, np.ndarray]:
    """(kappa, ts) of the branch below the fold, ordered by kappa (empty without a fold)."""
    if "fold" not in curve.markers:
        return np.array([]), np.array([])
    j = int(np.argmax(curve.kappa))
    k, t = curve.kappa[j:], curve.ts[j:]
    o = np.argsort(k)
    return k[o], t[o]
