"""Time integration: the well-mixed kinetics, their oscillations, and 1D wave simulations."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve

from . import cache
from .output import write_csv
from .errors import (BlowUp, DomainError, InsufficientData, IntegrationError, MeasurementError,
                     NoConvergence, PreconditionError)
from .model import (DEFAULT_JL, ModelParams, F_flux, dF_du, f_rate, H_null, equilibrium_report,
                    excitability_roots, line_intersections)

CellKind = Literal["closed", "open"]


# ---------------------------------------------------------------- well-mixed cell

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray            # shape (len(times), 2): columns u, w
    kind: str
    events: list = field(default_factory=list)   # (time, label)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise DomainError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be strictly increasing")

    @property
    def u(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def w(self) -> np.ndarray:
        return self.states[:, 1]

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, ["t", "u", "w"], np.column_stack([self.times, self.states]))


def _cell_terms(p: ModelParams, kind: CellKind, gamma, eps, J_in):
    eps_eff = eps if kind == "open" else 0.0

    def rhs(t, y):
        u, w = y
        F = F_flux(u, w, p)
        return [F + eps_eff * (J_in - u), -gamma * F]

    def jac(t, y):
        u, w = y
        a, f = dF_du(u, w, p), f_rate(u, p)
        return [[a - eps_eff, f], [-gamma * a, -gamma * f]]

    return rhs, jac


def integrate_kinetics(state0, p: ModelParams, t_end: float, kind: CellKind = "open",
                       gamma: float | None = None, eps: float | None = None, J_in: float | None = None,
                       rtol: float = 1e-8, atol: float = 1e-12, level: float | None = None,
                       max_step: float = np.inf) -> Trajectory:
    """Integrate du/dt = F + eps (J_in - u), dw/dt = -gamma F (eps = 0 for the closed cell).

    ``level`` records upward crossings of u through it in the event log.
    """
    if kind not in ("closed", "open"):
        raise DomainError(f"unknown cell kind {kind!r}")
    u0, w0 = (float(x) for x in state0)
    if u0 < 0 or w0 < 0:
        raise DomainError("initial state must be nonnegative")
    if not t_end > 0:
        raise DomainError("t_end must be positive")
    gamma = p.gamma if gamma is None else gamma
    eps = p.eps if eps is None else eps
    J_in = p.J_in if J_in is None else J_in
    rhs, jac = _cell_terms(p, kind, gamma, eps, J_in)
    events = None
    if level is not None:
        def crossing(t, y):
            return y[0] - level
        crossing.direction = 1
        events = [crossing]
    sol = solve_ivp(rhs, (0.0, t_end), [u0, w0], method="Radau", jac=jac, rtol=rtol, atol=atol,
                    events=events, max_step=max_step)
    if sol.status < 0:
        raise IntegrationError(sol.message)
    t, keep = np.unique(sol.t, return_index=True)
    traj = Trajectory(t, sol.y.T[keep].copy(), kind)
    if level is not None:
        traj.events = [(float(te), "u-up") for te in sol.t_events[0]]
    if not np.all(np.isfinite(traj.states)):
        raise IntegrationError("non-finite state")
    return traj


@dataclass
class PeriodicOrbit:
    period: float
    u_min: float
    u_max: float
    n_cycles: int

    @property
    def amplitude(self) -> float:
        return self.u_max - self.u_min


def detect_periodic_orbit(traj: Trajectory, discard: float = 0.4, min_cycles: int = 5,
                          rel_tol: float = 0.01) -> PeriodicOrbit | None:
    """Periodic orbit from upward crossings of the median of u after the transient, or None."""
    keep = traj.times >= traj.times[0] + discard * (traj.times[-1] - traj.times[0])
    t, u = traj.times[keep], traj.u[keep]
    if len(u) < 3 or np.ptp(u) <= 1e-9 * max(1.0, np.abs(u).max()):
        return None
    level = float(np.median(u))
    i = np.nonzero((u[:-1] < level) & (u[1:] >= level))[0]
    if len(i) < min_cycles + 1:
        if len(i) <= 1 and np.ptp(u[len(u) // 2:]) < 0.5 * np.ptp(u[:len(u) // 2]) + 1e-12:
            return None          # decaying
        raise InsufficientData(f"only {max(len(i) - 1, 0)} complete cycles after the transient")
    tc = t[i] + (level - u[i]) * (t[i + 1] - t[i]) / (u[i + 1] - u[i])
    periods = np.diff(tc)
    if np.ptp(periods) > rel_tol * np.median(periods):
        return None
    # extrema per cycle must repeat as well (a decaying spiral has steady crossings too)
    maxima = np.array([u[a:b + 1].max() for a, b in zip(i[:-1], i[1:])])
    if np.ptp(maxima) > rel_tol * max(np.ptp(u), 1e-300):
        return None
    span = (t >= tc[0]) & (t <= tc[-1])
    return PeriodicOrbit(float(np.median(periods)), float(u[span].min()), float(u[span].max()), len(periods))


@dataclass
class HopfScanRow:
    J_in: float
    classification: str
    orbit: PeriodicOrbit | None
    status: str = "ok"


def scan_hopf_branch(J_grid, p: ModelParams, t_end: float | None = None, eps: float | None = None,
                     gamma: float | None = None) -> list[HopfScanRow]:
    """Equilibrium type and the attracting oscillation (if any) for each J_in.

    Each run starts slightly off the equilibrium; the default horizon covers
    several of the slow cycles, whose period scales like 1/eps, and is
    doubled up to twice when too few cycles complete.
    """
    eps = p.eps if eps is None else eps
    gamma = p.gamma if gamma is None else gamma
    horizon = t_end if t_end is not None else 120.0 / eps
    rows = []
    for J in J_grid:
        J = float(J)
        try:
            rep = equilibrium_report(J, p, "open", gamma, eps)
            w0 = float(H_null(J, p))
            # periods grow towards the window edges: lengthen the run when too few cycles fit
            for stretch in (1, 2, 4):
                traj = integrate_kinetics((J * 1.01, w0), p, stretch * horizon, "open", gamma, eps, J)
                try:
                    orbit = detect_periodic_orbit(traj)
                    status = "ok"
                    break
                except InsufficientData as exc:
                    orbit, status = None, f"insufficient: {exc}"
            rows.append(HopfScanRow(J, rep.classification, orbit, status))
        except (IntegrationError, DomainError) as exc:
            rows.append(HopfScanRow(J, "unknown", None, f"failed: {exc}"))
    return rows


@dataclass
class SmallOrbit:
    J_in: float
    period: float
    amplitude: float        # peak-to-peak in u
    offset: float           # prescribed u - J_in at the section


def small_orbit(offset: float, p: ModelParams, J_guess: float, T_guess: float,
                eps: float | None = None, gamma: float | None = None) -> SmallOrbit:
    """Periodic orbit through (J_in + offset, H(J_in)); J_in and the period are the unknowns.

    Prescribing the offset instead of J_in keeps the shooting away from the
    equilibrium itself, which is a trivial solution of the periodicity condition.
    """
    eps = p.eps if eps is None else eps
    gamma = p.gamma if gamma is None else gamma

    def flow(J, T):
        rhs, jac = _cell_terms(p, "open", gamma, eps, J)
        return solve_ivp(rhs, (0.0, T), [J + offset, H_null(J, p)], method="Radau", jac=jac,
                         rtol=1e-11, atol=1e-14)

    def residual(x):
        J, T = x
        if T <= 0 or J <= 0:
            return [1e3, 1e3]
        end = flow(J, T).y[:, -1]
        return [(end[0] - J - offset) / offset, (end[1] - H_null(J, p)) / offset]

    x, info, ier, msg = fsolve(residual, [J_guess, T_guess], full_output=True, xtol=1e-13)
    # judged by the residual: fsolve often stops with "no progress" at a converged point
    if np.abs(residual(x)).max() > 1e-6 or x[1] <= 0:
        raise NoConvergence(f"small orbit at offset {offset:g}: {msg}")
    sol = flow(*x)
    return SmallOrbit(float(x[0]), float(x[1]), float(np.ptp(sol.y[0])), offset)


@dataclass
class HopfOnset:
    J_hopf: float
    side: str
    orbits: list
    slope: float            # d(amplitude^2)/dJ_in
    r_squared: float
    inside: bool            # orbits lie inside the oscillation window

    @property
    def supercritical(self) -> bool:
        return self.inside and self.r_squared > 0.95


def hopf_onset(p: ModelParams, side: Literal["lower", "upper"], rel_offsets=(1e-6, 2e-6, 4e-6),
               eps: float | None = None, gamma: float | None = None) -> HopfOnset:
    """Small orbits born at one Hopf point and the fit amplitude^2 = slope (J_in - J_hopf).

    Orbits on the side where the equilibrium is unstable mean the bifurcation is supercritical.
    """
    eps = p.eps if eps is None else eps
    gamma = p.gamma if gamma is None else gamma
    lo, hi = excitability_roots(p, eps_shift=eps, gamma=gamma)
    Jh = lo if side == "lower" else hi
    A = np.linalg.eigvals(equilibrium_report(Jh, p, "open", gamma, eps).jacobian)
    omega = float(np.abs(A.imag).max())
    if omega == 0.0:
        raise PreconditionError("no rotation at the Hopf point")
    orbits, J_guess, T_guess = [], Jh, 2 * np.pi / omega
    for r in rel_offsets:
        orb = small_orbit(r * Jh, p, J_guess, T_guess, eps, gamma)
        orbits.append(orb)
        J_guess, T_guess = orb.J_in, orb.period
    dJ = np.array([o.J_in - Jh for o in orbits])
    a2 = np.array([o.amplitude ** 2 for o in orbits])
    slope = float(dJ @ a2 / (dJ @ dJ))
    ss_res = float(np.sum((a2 - slope * dJ) ** 2))
    ss_tot = float(np.sum((a2 - a2.mean()) ** 2)) if len(a2) > 1 else 0.0
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    inside = bool(np.all(dJ > 0)) if side == "lower" else bool(np.all(dJ < 0))
    return HopfOnset(Jh, side, orbits, slope, r2, inside)


# ---------------------------------------------------------------- 1D waves

@dataclass
class PdeSolution:
    x: np.ndarray
    times: np.ndarray
    u: np.ndarray                # (snapshots, points)
    w: np.ndarray
    bc: str = "neumann"
    clipped: int = 0             # negative u values found (and set to 0)
    boundary_moved: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.u.shape != (len(self.times), len(self.x)) or self.w.shape != self.u.shape:
            raise DomainError("field shapes do not match the grid")

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def to_csv(self, path: str | Path) -> None:
        n = len(self.x)
        header = ["t"] + [f"u{i}" for i in range(n)] + [f"w{i}" for i in range(n)]
        write_csv(path, header, np.column_stack([self.times, self.u, self.w]))


def _grid_operators(n: int, h: float, c: float):
    """Zero-flux second difference and upwind first difference for transport speed c."""
    e = np.ones(n)
    lap = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], shape=(n, n), format="lil")
    lap[0, 1] = 2.0
    lap[n - 1, n - 2] = 2.0
    if c >= 0:
        grad = sp.diags([-e[:-1], e], [-1, 0], shape=(n, n), format="lil")
        grad[0, 0] = 0.0
    else:
        grad = sp.diags([-e, e[:-1]], [0, 1], shape=(n, n), format="lil")
        grad[n - 1, n - 1] = 0.0
    return lap.tocsr() / h**2, grad.tocsr() / h


def initial_condition(kind: str, x: np.ndarray, p: ModelParams, gamma0: float, J_l: float,
                      width: float | None = None, amplitude: float | None = None, at: float = 0.75):
    """(u, w) for a front, back, pulse or sub-threshold bump placed at ``at`` of the domain.

    The resting state sits on the left, so fronts and pulses move towards -x.
    """
    L = x[-1] - x[0]
    x0 = x[0] + at * L
    h = x[1] - x[0]
    width = width if width is not None else max(4 * h, 0.02)
    w_l = float(H_null(J_l, p))
    if kind in ("front", "back"):
        _, _, J_r = line_intersections(J_l, gamma0, p)
        w_r = float(H_null(J_r, p))
        step = 0.5 * (1 + np.tanh((x - x0) / width))
        if kind == "back":
            step = 1 - step
        return J_l + (J_r - J_l) * step, w_l + (w_r - w_l) * step
    if kind in ("pulse", "bump"):
        _, J_m, _ = line_intersections(J_l, gamma0, p)
        amp = amplitude if amplitude is not None else (2.0 * (J_m - J_l) if kind == "pulse" else 0.3 * (J_m - J_l))
        return J_l + amp * np.exp(-((x - x0) / (5 * width)) ** 2), np.full_like(x, w_l)
    raise DomainError(f"unknown initial condition {kind!r}")


def simulate_wave_pde(p: ModelParams, gamma0: float, kappa: float = 0.0, L: float = 20.0, n: int = 4000,
                      ic: str = "front", t_end: float = 5.0, kind: CellKind = "closed",
                      J_l: float = DEFAULT_JL, dt_snap: float = 0.05, rtol: float = 1e-6,
                      atol: float = 1e-9, ic_arrays=None, use_cache: bool = True) -> PdeSolution:
    """u_t = D u_xx - D kappa u_x + F + eps (J_in - u), w_t = -gamma0 F on [0, L], zero flux.

    eps = 0 for the closed cell; the open cell takes J_in = J_l.
    """
    if n < 400:
        raise PreconditionError("use at least 400 grid points")
    record = {"p": p.to_dict(), "gamma0": gamma0, "kappa": kappa, "L": L, "n": n, "ic": ic,
              "t_end": t_end, "kind": kind, "J_l": J_l, "dt_snap": dt_snap, "rtol": rtol, "atol": atol,
              "ic_arrays": None if ic_arrays is None else [np.asarray(a).tolist() for a in ic_arrays]}

    def compute():
        return _run_pde(p, gamma0, kappa, L, n, ic, t_end, kind, J_l, dt_snap, rtol, atol, ic_arrays)

    arrays = cache.cached_arrays("pde", record, compute) if use_cache else compute()
    sol = PdeSolution(arrays["x"], arrays["times"], arrays["u"], arrays["w"],
                      clipped=int(arrays["clipped"]), boundary_moved=bool(arrays["boundary_moved"]),
                      meta=record)
    if sol.boundary_moved:
        warnings.warn("fields at the boundary moved by more than 1e-6; enlarge the domain", RuntimeWarning)
    return sol


def _run_pde(p, gamma0, kappa, L, n, ic, t_end, kind, J_l, dt_snap, rtol, atol, ic_arrays):
    x = np.linspace(0.0, L, n)
    h = x[1] - x[0]
    D = p.D
    eps = p.eps if kind == "open" else 0.0
    c = D * kappa
    lap, grad = _grid_operators(n, h, c)
    lin_u = (D * lap - c * grad).tocsr()
    if ic_arrays is not None:
        u0, w0 = (np.asarray(a, dtype=float) for a in ic_arrays)
    else:
        u0, w0 = initial_condition(ic, x, p, gamma0, J_l)

    def rhs(t, y):
        u, w = y[:n], y[n:]
        F = F_flux(np.maximum(u, 0.0), w, p)
        return np.concatenate([lin_u @ u + F + eps * (J_l - u), -gamma0 * F])

    def jac(t, y):
        u, w = y[:n], y[n:]
        uc = np.maximum(u, 0.0)
        a, f = dF_du(uc, w, p), f_rate(uc, p)
        return sp.bmat([[lin_u + sp.diags(a - eps), sp.diags(f)],
                        [sp.diags(-gamma0 * a), sp.diags(-gamma0 * f)]], format="csc")

    def blow_up(t, y):
        return 100.0 - np.abs(y[:n]).max()
    blow_up.terminal = True

    t_eval = np.arange(0.0, t_end + 0.5 * dt_snap, dt_snap)
    t_eval = t_eval[t_eval <= t_end]
    sol = solve_ivp(rhs, (0.0, t_end), np.concatenate([u0, w0]), method="BDF", jac=jac,
                    t_eval=t_eval, events=[blow_up], rtol=rtol, atol=atol)
    if sol.status == 1:
        raise BlowUp(f"|u| exceeded 100 at t={sol.t_events[0][0]:.6g}")
    if sol.status < 0:
        raise IntegrationError(sol.message)
    U, W = sol.y[:n].T.copy(), sol.y[n:].T.copy()
    neg = U < 0
    clipped = int(neg.sum())
    U[neg] = 0.0
    moved = bool(max(np.abs(U[:, 0] - U[0, 0]).max(), np.abs(U[:, -1] - U[0, -1]).max()) > 1e-6)
    return {"x": x, "times": sol.t, "u": U, "w": W, "clipped": np.array(clipped),
            "boundary_moved": np.array(moved)}


@dataclass
class SpeedMeasurement:
    velocity: float          # dx_c/dt; negative for waves moving towards -x
    r_squared: float
    good_fit: bool
    positions: np.ndarray
    times: np.ndarray

    @property
    def speed(self) -> float:
        return abs(self.velocity)


def measure_wave_speed(sol: PdeSolution, level: float, strict: bool = False,
                       min_r2: float = 0.999) -> SpeedMeasurement:
    """Slope of the leading level crossing x_c(t), fitted over the last half of the snapshots.

    The leading crossing is the leftmost one, where the resting state meets the wave.
    """
    xs, ts = [], []
    for t, u in zip(sol.times, sol.u):
        above = u >= level
        j = np.nonzero(above[1:] != above[:-1])[0]
        if j.size == 0:
            continue
        i = j[0]
        xs.append(sol.x[i] + (level - u[i]) * (sol.x[i + 1] - sol.x[i]) / (u[i + 1] - u[i]))
        ts.append(t)
    xs, ts = np.array(xs), np.array(ts)
    if len(xs) < 4:
        raise MeasurementError(f"level {level} is crossed in only {len(xs)} snapshots")
    half = ts >= ts[0] + 0.5 * (ts[-1] - ts[0])
    tt, xx = ts[half], xs[half]
    if len(tt) < 3:
        raise MeasurementError("too few snapshots in the fitting window")
    A = np.column_stack([tt, np.ones_like(tt)])
    coef, *_ = np.linalg.lstsq(A, xx, rcond=None)
    ss_tot = float(np.sum((xx - xx.mean()) ** 2))
    ss_res = float(np.sum((xx - A @ coef) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 1e-24 * max(1.0, np.abs(xx).max()) ** 2 else 0.0
    velocity = float(coef[0]) if ss_tot > 0 else 0.0
    good = r2 >= min_r2
    if strict and not good:
        raise MeasurementError(f"poor fit of the crossing positions (R^2 = {r2:.6f})")
    return SpeedMeasurement(velocity, r2, good, xs, ts)
