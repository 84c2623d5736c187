"""Traveling fronts, backs and pulses of the calcium model and their dispersion curves.

Waves travel towards -x; the comoving coordinate is xi = x + s t, so the state
ahead of a wave sits at the left end of the domain.  Fronts connect J_l (left)
to J_r (right), backs the reverse, and pulses leave and return to J_l.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.integrate import solve_ivp

from . import bvp
from .output import write_csv, write_json
from .errors import (CountMismatch, ExistenceViolation, NoConvergence, PreconditionError,
                     WrongKind, AssumptionViolation)
from .model import (DEFAULT_JL, ModelParams, F_flux, dF_du, f_rate, g_rate, H_null,
                    chord_slope, gamma_max_tangent, line_intersections)

WaveKind = Literal["front", "back", "pulse"]
KINDS = ("front", "back", "pulse")

N_DECAY = 25.0          # decay lengths kept beyond each layer
N_NODES = 1600          # default number of mesh intervals
NEWTON_TOL = 1e-10


# ---------------------------------------------------------------- kinetics

@dataclass
class CalciumKinetics:
    """a = F + eps (J_in - u), b = -gamma F.  eps = 0 is the closed cell."""

    p: ModelParams
    gamma: float
    eps: float = 0.0
    J_in: float = DEFAULT_JL

    @property
    def D(self) -> float:
        return self.p.D

    def sizing_kinetics(self):
        """Closed-cell kinetics: the slow membrane-flux modes are not resolved by the domain."""
        return self if self.eps == 0.0 else CalciumKinetics(self.p, self.gamma, 0.0, self.J_in)

    def rates(self, u, w, params=None):
        gam = (params or {}).get("gamma", self.gamma)
        Fv = F_flux(u, w, self.p)
        return Fv + self.eps * (self.J_in - u), -gam * Fv

    def partials(self, u, w, params=None):
        gam = (params or {}).get("gamma", self.gamma)
        Fu = dF_du(u, w, self.p)
        fw = f_rate(u, self.p)
        return Fu - self.eps, fw, -gam * Fu, -gam * fw


def end_state_rates(kin, u, w, s: float, kappa: float = 0.0, gamma: float | None = None):
    """(growth rate towards the left, decay rate towards the right) of the comoving ODE at (u, w)."""
    params = {"s": s, "kappa": kappa}
    if gamma is not None:
        params["gamma"] = gamma
    prob = bvp.WaveBVP(kin, np.array([0.0, 1.0]), 0, 0, ("neumann",), fixed=params, free=("s",))
    J = prob._rhs_jac(np.array([u, 0.0, w]), params)
    ev = np.linalg.eigvals(J)
    ev = ev[np.abs(ev) > 1e-9 * max(1.0, np.abs(ev).max())]
    pos = ev.real[ev.real > 0]
    neg = -ev.real[ev.real < 0]
    # the w-relaxation rate b_w/s is not excited on the slow manifold; leave it out of the scale
    uv = np.linalg.eigvals(J[:2, :2])
    return (pos.min() if pos.size else np.nan, neg.min() if neg.size else np.nan,
            np.abs(uv).max())


# ---------------------------------------------------------------- profiles

@dataclass
class WaveProfile:
    kind: str
    xi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    s: float
    gamma: float
    J_l: float
    J_r: float | None
    params: ModelParams
    eps: float = 0.0
    kappa: float = 0.0
    residual: float = float("nan")
    newton_iterations: int = 0
    right_bc: str = "dirichlet"
    kinetics: object = None

    def kinetics_record(self):
        """Kinetics the profile was solved with (calcium kinetics unless another record was used)."""
        if self.kinetics is not None:
            return self.kinetics
        return CalciumKinetics(self.params, self.gamma, self.eps, self.J_l)

    @property
    def n_nodes(self) -> int:
        return len(self.xi)

    @property
    def u_max(self) -> float:
        return float(self.u.max())

    def width(self, level: float | None = None) -> float:
        """Length of the excursion above ``level`` (default: half height)."""
        level = 0.5 * (self.J_l + self.u.max()) if level is None else level
        above = np.nonzero(self.u > level)[0]
        if above.size == 0:
            return 0.0
        i, j = above[0], above[-1]
        x0 = np.interp(level, [self.u[i - 1], self.u[i]], [self.xi[i - 1], self.xi[i]]) if i > 0 else self.xi[0]
        x1 = np.interp(level, [self.u[j + 1], self.u[j]], [self.xi[j + 1], self.xi[j]]) if j + 1 < len(self.u) else self.xi[-1]
        return float(x1 - x0)

    def to_csv(self, path: str | Path) -> None:
        """(xi, u, w) rows plus a JSON header file ``<name>.json`` carrying kind, s, gamma, eps, kappa."""
        path = Path(path)
        write_csv(path, ["xi", "u", "w"], zip(self.xi, self.u, self.w))
        write_json(path.with_suffix(".json"), self.summary())

    def summary(self) -> dict:
        return {"kind": self.kind, "s": self.s, "gamma": self.gamma, "kappa": self.kappa, "eps": self.eps,
                "J_l": self.J_l, "J_r": self.J_r, "u_max": self.u_max, "n_nodes": self.n_nodes,
                "residual": self.residual}


# ---------------------------------------------------------------- shooting seeds

def _reduced_system(p: ModelParams, gamma: float, q_l: float):
    D = p.D

    def chi(u, q):
        return gamma * (q - u) * f_rate(u, p) - g_rate(u, p)

    def rhs(t, y, s):
        u, v = y
        return [v, (s * v - chi(u, q_l + D * v / s)) / D]

    def leaving_rate(u0, s):
        h = 1e-7
        Ru = (chi(u0 + h, q_l) - chi(u0 - h, q_l)) / (2 * h)
        Rq = gamma * f_rate(u0, p)
        b = -(s - Rq * D / s)
        return (-b + np.sqrt(b * b - 4 * D * Ru)) / (2 * D)

    return rhs, leaving_rate


def _shoot_transition(p, gamma, J_l, kind, s_lo=1e-3, s_hi=60.0, iters=60):
    """Speed of the closed-cell front/back by bisection on the overshoot/turn outcome."""
    _, J_m, J_r = line_intersections(J_l, gamma, p)
    q_l = J_l + H_null(J_l, p) / gamma
    rhs, rate = _reduced_system(p, gamma, q_l)
    start, end = (J_l, J_r) if kind == "front" else (J_r, J_l)
    sign = 1.0 if kind == "front" else -1.0

    def run(s, dense=False):
        lam = rate(start, s)
        d = sign * 1e-10 * max(1.0, start)
        over = lambda t, y, s: (y[0] - end) * sign
        over.terminal = True
        turn = lambda t, y, s: y[1]
        turn.terminal = True
        T = 40.0 / lam + 5.0 / s
        sol = solve_ivp(rhs, [0, T], [start + d, lam * d], args=(s,), events=[over, turn],
                        rtol=1e-11, atol=1e-14, method="LSODA", dense_output=dense)
        if sol.t_events[0].size:
            return 1, sol
        if sol.t_events[1].size:
            return -1, sol
        return 0, sol

    # walk down from a fast speed (overshoot) until the trajectory turns back
    hi = s_hi
    ohi = run(hi)[0]
    lo = hi / 2.0
    olo = run(lo)[0]
    while olo == ohi:
        hi, lo = lo, lo / 2.0
        if lo < s_lo:
            raise NoConvergence(f"no speed bracket for the {kind} at gamma={gamma}")
        olo = run(lo)[0]
    if 0 in (olo, ohi):
        raise NoConvergence(f"indeterminate shooting outcome for the {kind} at gamma={gamma}")
    for _ in range(iters):
        mid = np.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        o = run(mid)[0]
        if o == 0:
            break
        if o == olo:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9 * hi:
            break
    s = 0.5 * (lo + hi)
    _, sol = run(s if olo == -1 else lo, dense=True)
    t, u, v = sol.t, sol.y[0], sol.y[1]
    # keep the part that moves monotonically towards the end state
    k = int(np.argmin(np.abs(u - end)))
    t, u, v = t[: k + 1], u[: k + 1], v[: k + 1]
    w = gamma * (q_l + p.D * v / s - u)
    mid_level = 0.5 * (J_l + J_r)
    t0 = np.interp(mid_level, u if kind == "front" else u[::-1], t if kind == "front" else t[::-1])
    return s, (t - t0, u, v, w), (J_l, J_m, J_r)


def _shoot_pulse(p, gamma, J_l, s_hint_hi, n_scan=25, iters=60, t_extra=5.0):
    """Closed-cell pulse speed: boundary between escape below J_l and capture by J_m."""
    _, J_m, J_r = line_intersections(J_l, gamma, p)
    q_l = J_l + H_null(J_l, p) / gamma
    rhs, rate = _reduced_system(p, gamma, q_l)
    low = J_l - 1e-3 * (J_r - J_l)

    def run(s, dense=False):
        lam = rate(J_l, s)
        d = 1e-10
        ev_low = lambda t, y, s: y[0] - low
        ev_low.terminal = True
        ev_high = lambda t, y, s: y[0] - 1.5 * J_r
        ev_high.terminal = True
        T = 60.0 / lam + t_extra
        sol = solve_ivp(rhs, [0, T], [J_l + d, lam * d], args=(s,), events=[ev_low, ev_high],
                        rtol=1e-11, atol=1e-14, method="LSODA", dense_output=dense)
        return (1 if sol.t_events[0].size else -1), sol

    grid = np.geomspace(1e-2 * s_hint_hi, s_hint_hi, n_scan)
    outs = [run(s)[0] for s in grid]
    idx = [i for i in range(n_scan - 1) if outs[i] == -1 and outs[i + 1] == 1]
    if not idx:
        raise NoConvergence(f"no pulse speed bracket at gamma={gamma}")
    lo, hi = grid[idx[0]], grid[idx[0] + 1]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if run(mid)[0] == -1:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-10 * hi:
            break
    s = lo
    _, sol = run(s, dense=True)
    t, u, v = sol.t, sol.y[0], sol.y[1]
    # first hump only: near-critical trajectories may come back for a second one
    down = np.nonzero(v < 0)[0]
    i_max = int(down[0]) if down.size else len(u) - 1
    up_again = np.nonzero(v[i_max:] > 0)[0]
    stop = i_max + int(up_again[0]) if up_again.size else len(u)
    k = i_max + int(np.argmin(np.abs(u[i_max:stop] - J_l)))
    t, u, v = t[: k + 1], u[: k + 1], v[: k + 1]
    w = gamma * (q_l + p.D * v / s - u)
    return s, (t - t[i_max], u, v, w), (J_l, J_m, J_r)


# ---------------------------------------------------------------- meshes and guesses

def _affine(x, new_left, new_right):
    """Map the profile affinely so that its end values become the new end states."""
    old_left, old_right = x[0], x[-1]
    span = np.ptp(x)
    if abs(new_right - new_left) > 1e-3 * span and abs(old_right - old_left) > 1e-3 * span:
        scale = (new_right - new_left) / (old_right - old_left)
        return new_left + (x - old_left) * scale, scale
    return x + (new_left - old_left), 1.0


def _resample(profile_arrays, xi_new, left_state, right_state):
    t, u, v, w = profile_arrays
    u, scale = _affine(u, left_state[0], right_state[0])
    v = v * scale
    w, _ = _affine(w, left_state[1], right_state[1])
    uu = np.interp(xi_new, t, u, left=left_state[0], right=right_state[0])
    vv = np.interp(xi_new, t, v, left=0.0, right=0.0)
    ww = np.interp(xi_new, t, w, left=left_state[1], right=right_state[1])
    return uu, vv, ww


def _layer_extent(xi, u, u_left, u_right, frac=1e-3):
    """Interval where u differs from both end values by more than frac of the range."""
    amp = max(np.abs(u - u_left).max(), 1e-300)
    dev = np.minimum(np.abs(u - u_left), np.abs(u - u_right) if u_right is not None else np.inf)
    idx = np.nonzero(dev > frac * amp)[0]
    if idx.size == 0:
        return 0.0, 0.0
    return float(xi[idx[0]]), float(xi[idx[-1]])


def _build_mesh(kin, s, kappa, gamma, left_state, right_state, core, n_nodes, monitor_src=None):
    """Domain sized from end-state linear rates; nodes equidistributed on ``monitor_src``."""
    if hasattr(kin, "sizing_kinetics"):
        kin = kin.sizing_kinetics()
    lam_l, _, big_l = end_state_rates(kin, *left_state, s, kappa, gamma)
    _, lam_r, big_r = end_state_rates(kin, *right_state, s, kappa, gamma)
    if not (np.isfinite(lam_l) and np.isfinite(lam_r)):
        raise ExistenceViolation("end state has no hyperbolic splitting")
    a, b = min(core[0], 0.0), max(core[1], 0.0)
    left = -a + N_DECAY / lam_l
    right = b + N_DECAY / lam_r
    width = max(b - a, 1e-3)
    h_core = min(0.1 / max(big_l, big_r), width / 4000)
    h_core = max(h_core, width / 20000)
    xi0 = bvp.graded_mesh(left, right, h_core, core=(a, b), growth=1.02,
                          h_max=0.25 / min(lam_l, lam_r))
    if monitor_src is None:
        return xi0
    xs, us, ws = monitor_src
    uu = np.interp(xi0, xs, us, left=us[0], right=us[-1])
    ww = np.interp(xi0, xs, ws, left=ws[0], right=ws[-1])
    return bvp.equidistributed_mesh(xi0, bvp.profile_monitor(xi0, uu, ww), n_nodes)


# ---------------------------------------------------------------- solving

@dataclass
class _Setup:
    kind: str
    kin: CalciumKinetics
    J_l: float
    J_r: float | None
    left_state: tuple
    right_state: tuple
    right_bc: tuple
    check: object = None        # replaces the calcium shape checks when set


def _setup(kind, gamma, p, eps, J_l, kappa, free_end=None):
    """End states and boundary conditions.

    Curved or open-cell fronts do not end on the gamma-line through J_l (total
    calcium is not conserved across them), so they get a zero-flux condition
    behind the front instead of a Dirichlet state.
    """
    if kind not in KINDS:
        raise PreconditionError(f"unknown wave kind {kind!r}")
    kin = CalciumKinetics(p, gamma, eps, J_in=J_l)
    w_l = float(H_null(J_l, p))
    try:
        _, _, J_r = line_intersections(J_l, gamma, p)
    except (CountMismatch, AssumptionViolation) as exc:
        raise ExistenceViolation(f"no {kind} at gamma={gamma}: {exc}") from exc
    w_r = w_l + gamma * (J_l - J_r)
    if free_end is None:
        free_end = eps != 0.0 or kappa != 0.0
    if kind == "front":
        left, right = (J_l, w_l), (None if free_end else (J_r, w_r))
    elif kind == "back":
        if free_end:
            raise PreconditionError("curved or open-cell backs are obtained through the gamma* mapping")
        left, right = (J_r, w_r), (J_l, w_l)
    else:
        left, right = (J_l, w_l), (J_l, w_l)
    if right is None:
        right_bc = ("neumann",)
    else:
        right_bc = ("dirichlet", right[0])
    return _Setup(kind, kin, J_l, J_r, left, right, right_bc)


def _phase(problem: bvp.WaveBVP, kind, setup: _Setup, level=None):
    i0 = problem.i0
    if kind == "pulse":
        return problem.slope_constraint(i0)
    if level is None:
        level = 0.5 * (setup.J_l + setup.J_r)
    return problem.level_constraint(i0, level)


def _solve_on_mesh(setup: _Setup, xi, guess, s, gamma, kappa, extra_constraints=(), free=("s",),
                   level=None, tol=NEWTON_TOL):
    u, v, w = guess
    fixed = {"s": s, "kappa": kappa, "gamma": gamma}
    prob = bvp.WaveBVP(setup.kin, xi, setup.left_state[0], setup.left_state[1], setup.right_bc,
                       free=free, fixed={k: val for k, val in fixed.items() if k not in free})
    prob.constraints.append(_phase(prob, setup.kind, setup, level))
    for c in extra_constraints:
        prob.constraints.append(c(prob) if callable(c) and not isinstance(c, bvp.Constraint) else c)
    x0 = prob.pack(u, v, w, {"s": s, "kappa": kappa, "gamma": gamma})
    res = bvp.newton(prob, x0, tol=tol)
    Y, par = prob.unpack(res.x)
    return prob, res, Y, par


def _check_kind(prof: WaveProfile, setup: _Setup):
    """Reject solutions that are not of the requested kind."""
    if setup.check is not None:
        setup.check(prof)
        return
    u = prof.u
    if not np.all(np.isfinite(u)) or prof.s <= 0:
        raise WrongKind(f"non-physical solution (s={prof.s})")
    if np.any(u < -1e-8):
        raise WrongKind("negative calcium in the profile")
    if setup.kind == "pulse":
        amp = u.max() - setup.J_l
        if amp < 1e-4:
            raise WrongKind("pulse collapsed onto the rest state")
        # the profile must have a single maximum
        du = np.diff(u)
        sig = np.sign(du[np.abs(du) > 1e-3 * np.abs(du).max()])
        if np.count_nonzero(np.diff(sig) != 0) > 1:
            raise WrongKind("pulse profile is not single-humped")
    else:
        end = setup.J_r if setup.right_state is not None or setup.kind == "back" else u[-1]
        lo, hi = sorted((setup.J_l, end))
        span = hi - lo
        if u.min() < lo - 1e-3 * span or u.max() > hi + 1e-3 * span:
            raise WrongKind(f"{setup.kind} overshoots its end states")


def _to_profile(setup, prob, res, Y, par, gamma, eps, kappa) -> WaveProfile:
    return WaveProfile(kind=setup.kind, xi=prob.xi.copy(), u=Y[:, 0].copy(), v=Y[:, 1].copy(),
                       w=Y[:, 2].copy(), s=float(par["s"]), gamma=float(par.get("gamma", gamma)),
                       J_l=setup.J_l, J_r=setup.J_r, params=setup.kin.p, eps=eps, kappa=float(par.get("kappa", kappa)),
                       residual=res.residual, newton_iterations=res.iterations,
                       right_bc=setup.right_bc[0], kinetics=setup.kin)


def _arrays(prof: WaveProfile):
    return prof.xi, prof.u, prof.v, prof.w


def solve_wave(kind: WaveKind, gamma: float, p: ModelParams | None = None, eps: float = 0.0,
               kappa: float = 0.0, guess: WaveProfile | None = None, J_l: float = DEFAULT_JL,
               n_nodes: int = N_NODES) -> WaveProfile:
    """Converged traveling wave of the given kind.

    Without a guess the closed-cell wave at kappa = 0 is seeded by shooting on
    the reduced planar ODE; open-cell or curved waves need a guess.
    """
    p = p or ModelParams()
    setup = _setup(kind, gamma, p, eps, J_l, kappa)
    if guess is None:
        if eps != 0.0 or kappa != 0.0:
            raise PreconditionError("open-cell and curved waves need an initial guess")
        if kind == "pulse":
            s_front = _shoot_transition(p, gamma, J_l, "front")[0]
            s, arrays, _ = _shoot_pulse(p, gamma, J_l, s_front)
        else:
            s, arrays, _ = _shoot_transition(p, gamma, J_l, kind)
    else:
        s, arrays = guess.s, _arrays(guess)
    return _solve_from(setup, arrays, s, gamma, eps, kappa, n_nodes)


def _plateau_state(setup, u):
    """Nullcline state at the plateau behind a free-ended front, used to size its domain."""
    return float(u[-1]), float(H_null(u[-1], setup.kin.p))


def _solve_from(setup, arrays, s, gamma, eps, kappa, n_nodes, passes=2, free=("s",)):
    xs, us, vs, ws = arrays
    right = setup.right_state if setup.right_state is not None else _plateau_state(setup, us)
    # measured against the guess's own plateaus: the new end states differ from them during continuation
    core = _layer_extent(xs, us, us[0], None if setup.kind == "pulse" else us[-1])
    prof = None
    for k in range(passes):
        src = (xs, us, ws)
        xi = _build_mesh(setup.kin, s, kappa, gamma, setup.left_state, right, core, n_nodes,
                         monitor_src=src)
        guess = _resample(arrays, xi, setup.left_state,
                          right if setup.right_state is not None else (us[-1], ws[-1]))
        level = None if setup.right_state is not None or setup.kind != "front" else 0.5 * (setup.J_l + us[-1])
        prob, res, Y, par = _solve_on_mesh(setup, xi, guess, s, gamma, kappa, free=free, level=level)
        prof = _to_profile(setup, prob, res, Y, par, gamma, eps, kappa)
        if setup.right_state is None:
            prof.J_r = float(prof.u[-1])
        arrays = _arrays(prof)
        xs, us, vs, ws = arrays
        s, kappa = prof.s, prof.kappa
        if setup.right_state is None:
            right = _plateau_state(setup, us)
        core = _layer_extent(xs, us, setup.left_state[0], None if setup.kind == "pulse" else right[0])
    _check_kind(prof, setup)
    return prof


# ---------------------------------------------------------------- wide pulses

def _solve_pulse_width(setup, arrays, s, gamma, width, level, n_nodes, kappa=0.0, free_param="gamma"):
    """Pulse with prescribed distance ``width`` between its up- and down-crossings of ``level``.

    The speed and ``free_param`` (gamma, or kappa for curved pulses) are unknowns.
    """
    xs, us, vs, ws = arrays
    core = (min(_layer_extent(xs, us, setup.J_l, None)[0], 0.0), max(_layer_extent(xs, us, setup.J_l, None)[1], width))
    xi = _build_mesh(setup.kin, s, kappa, gamma, setup.left_state, setup.right_state, core, n_nodes,
                     monitor_src=(xs, us, ws))
    iw = int(np.argmin(np.abs(xi - width)))
    xi[iw] = width
    if not np.all(np.diff(xi) > 0):
        raise NoConvergence("mesh could not place the width node")
    guess = _resample(arrays, xi, setup.left_state, setup.right_state)
    fixed = {"kappa": kappa, "gamma": gamma}
    free = ("s", free_param)
    prob = bvp.WaveBVP(setup.kin, xi, setup.left_state[0], setup.left_state[1], setup.right_bc,
                       free=free, fixed={k: v for k, v in fixed.items() if k not in free})
    prob.constraints.append(prob.level_constraint(prob.i0, level))
    prob.constraints.append(prob.level_constraint(iw, level))
    x0 = prob.pack(*guess, {"s": s, "kappa": kappa, "gamma": gamma})
    res = bvp.newton(prob, x0, tol=NEWTON_TOL)
    Y, par = prob.unpack(res.x)
    prof = _to_profile(setup, prob, res, Y, par, gamma, setup.kin.eps, kappa)
    if free_param == "gamma":
        prof.gamma = float(par["gamma"])
    return prof


def _shift_to_upstroke(prof: WaveProfile, level: float):
    """Arrays of ``prof`` translated so that the upstroke crosses ``level`` at xi = 0."""
    i = int(np.argmax(prof.u > level))
    x0 = np.interp(level, prof.u[i - 1:i + 1], prof.xi[i - 1:i + 1])
    return prof.xi - x0, prof.u, prof.v, prof.w


# ---------------------------------------------------------------- dispersion curves

@dataclass
class DispersionSample:
    gamma: float
    s: float
    converged: bool
    residual: float
    iterations: int
    J_r: float | None = None
    u_max: float | None = None
    width: float | None = None


@dataclass
class DispersionCurve:
    kind: str
    J_l: float
    params: ModelParams
    samples: list[DispersionSample] = field(default_factory=list)
    profiles: list[WaveProfile] = field(default_factory=list, repr=False)
    gamma_M: float | None = None
    gamma_m: float | None = None
    s_at_end: float | None = None
    terminated_by: str = ""

    @property
    def gammas(self) -> np.ndarray:
        return np.array([x.gamma for x in self.samples])

    @property
    def speeds(self) -> np.ndarray:
        return np.array([x.s for x in self.samples])

    def _sort(self):
        order = np.argsort(self.gammas, kind="stable")
        self.samples = [self.samples[i] for i in order]
        if self.profiles:
            self.profiles = [self.profiles[i] for i in order]
        g = self.gammas
        keep = np.concatenate([[True], np.diff(g) > 1e-12])
        self.samples = [x for x, k in zip(self.samples, keep) if k]
        if self.profiles:
            self.profiles = [x for x, k in zip(self.profiles, keep) if k]

    def speed_at(self, gamma) -> np.ndarray:
        from scipy.interpolate import PchipInterpolator
        return PchipInterpolator(self.gammas, self.speeds, extrapolate=False)(gamma)

    def nearest_profile(self, gamma: float) -> WaveProfile:
        return self.profiles[int(np.argmin(np.abs(self.gammas - gamma)))]

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, ["gamma", "s", "converged", "residual"],
                  ((x.gamma, x.s, int(x.converged), x.residual) for x in self.samples))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "J_l": self.J_l, "gamma_M": self.gamma_M, "gamma_m": self.gamma_m,
                "s_at_end": self.s_at_end, "terminated_by": self.terminated_by,
                "samples": [asdict(x) for x in self.samples]}


RECOVERABLE = (NoConvergence, WrongKind, ExistenceViolation, CountMismatch, AssumptionViolation,
               np.linalg.LinAlgError, FloatingPointError)


def _march(theta0, theta_end, step0, solve_at, prev, *, step_min=1e-8, step_max=None,
           max_rel_ds=0.15, max_dgamma=np.inf, max_steps=2000):
    """Natural continuation in a scalar parameter with step halving and growth."""
    out = []
    direction = np.sign(theta_end - theta0)
    step = abs(step0)
    step_max = step_max or abs(theta_end - theta0)
    theta = theta0
    reason = "range-end"
    for _ in range(max_steps):
        if (theta_end - theta) * direction <= 1e-14 * max(1.0, abs(theta_end)):
            break
        trial = theta + direction * min(step, abs(theta_end - theta))
        try:
            prof = solve_at(trial, prev)
            too_far = (abs(prof.s - prev.s) > max_rel_ds * max(prev.s, 1e-3)
                       or abs(prof.gamma - prev.gamma) > max_dgamma)
        except RECOVERABLE as exc:
            step /= 2.0
            if step < step_min:
                reason = f"existence-failure: {exc}"
                break
            continue
        if too_far:
            step /= 2.0
            if step < step_min:
                reason = "stall: step limit"
                break
            continue
        out.append((trial, prof))
        theta, prev = trial, prof
        if prof.newton_iterations <= 4:
            step = min(step * 1.3, step_max)
    else:
        reason = "max-steps"
    return out, reason


def _sample_of(prof: WaveProfile) -> DispersionSample:
    return DispersionSample(gamma=prof.gamma, s=prof.s, converged=True, residual=prof.residual,
                            iterations=prof.newton_iterations, J_r=prof.J_r, u_max=prof.u_max,
                            width=prof.width() if prof.kind == "pulse" else None)


def continue_dispersion(kind: WaveKind, gamma_range: tuple[float, float], p: ModelParams | None = None,
                        J_l: float = DEFAULT_JL, start: WaveProfile | None = None,
                        n_nodes: int = 800, max_dgamma: float = 0.25,
                        gamma_M_gap: float = 1e-6) -> DispersionCurve:
    """Speed of one wave kind as a function of gamma over ``gamma_range``.

    Fronts and backs are continued in their right end state J_r, which turns
    the fold of the intersection geometry at gamma_M into a regular parameter;
    pulses are continued in gamma and, towards gamma_m, in their width.
    """
    p = p or ModelParams()
    g_lo, g_hi = gamma_range
    if not 0 < g_lo < g_hi:
        raise PreconditionError("gamma_range must be increasing and positive")
    g_M, u_T = gamma_max_tangent(J_l, p)
    curve = DispersionCurve(kind=kind, J_l=J_l, params=p, gamma_M=g_M)
    g_start = start.gamma if start is not None else float(np.clip(p.gamma, g_lo, min(g_hi, g_M)))
    if start is None:
        start = solve_wave(kind, g_start, p, J_l=J_l, n_nodes=n_nodes)
    curve.samples.append(_sample_of(start))
    curve.profiles.append(start)
    if kind in ("front", "back"):
        _continue_transition(curve, start, g_lo, min(g_hi, g_M), g_M, u_T, n_nodes, max_dgamma, gamma_M_gap)
    else:
        _continue_pulse(curve, start, g_lo, g_hi, n_nodes, max_dgamma)
    curve._sort()
    if not np.all(curve.speeds > 0):
        raise WrongKind("non-positive speed on the branch")
    return curve


def _continue_transition(curve, start, g_lo, g_hi, g_M, u_T, n_nodes, max_dgamma, gap):
    p, J_l, kind = curve.params, curve.J_l, curve.kind

    def gamma_of(J_r):
        return float(chord_slope(J_r, J_l, p))

    def solve_at(J_r, prev):
        gamma = gamma_of(J_r)
        setup = _setup(kind, gamma, p, 0.0, J_l, 0.0)
        return _solve_from(setup, _arrays(prev), prev.s, gamma, 0.0, 0.0, n_nodes, passes=1)

    def J_r_of(gamma):
        return line_intersections(J_l, gamma, p, check=False)[2]

    # towards small gamma: J_r grows
    J_end_lo = J_r_of(g_lo)
    dJ = 0.02 * (J_end_lo - start.J_r) if J_end_lo > start.J_r else 0.0
    reasons = []
    if dJ > 0:
        out, r = _march(start.J_r, J_end_lo, dJ, solve_at, start, max_rel_ds=0.05,
                        max_dgamma=max_dgamma, step_max=max(dJ, abs(J_end_lo - start.J_r) / 20))
        _record(curve, out, gamma_limit=max_dgamma)
        reasons.append(r)
    # towards gamma_M: J_r decreases to the tangency point u_T
    if g_hi >= g_M * (1 - 1e-12):
        # stop where gamma_M - gamma ~ gap; phi is quadratic at u_T
        J_near = J_r_of(g_M * (1 - 1e-3))
        c = (g_M - gamma_of(J_near)) / (J_near - u_T) ** 2
        J_end_hi = u_T + np.sqrt(gap / c)
    else:
        J_end_hi = J_r_of(g_hi)
    if start.J_r > J_end_hi:
        out, r = _march(start.J_r, J_end_hi, 0.02 * (start.J_r - J_end_hi), solve_at, start,
                        max_rel_ds=0.05, max_dgamma=max_dgamma, step_max=(start.J_r - J_end_hi) / 20)
        _record(curve, out, gamma_limit=max_dgamma)
        reasons.append(r)
        if out and g_hi >= g_M * (1 - 1e-12):
            # speed at the fold by extrapolation in J_r (s is smooth there)
            Jr = np.array([pr.J_r for _, pr in out[-4:]])
            ss = np.array([pr.s for _, pr in out[-4:]])
            deg = min(2, len(Jr) - 1)
            curve.s_at_end = float(np.polyval(np.polyfit(Jr - u_T, ss, deg), 0.0)) if deg > 0 else float(ss[-1])
    curve.terminated_by = "; ".join(reasons) if reasons else "range-end"


def _record(curve, out, gamma_limit=None):
    for _, prof in out:
        curve.samples.append(_sample_of(prof))
        curve.profiles.append(prof)


def _continue_pulse(curve, start, g_lo, g_hi, n_nodes, max_dgamma):
    p, J_l = curve.params, curve.J_l

    def solve_at(gamma, prev):
        setup = _setup("pulse", gamma, p, 0.0, J_l, 0.0)
        return _solve_from(setup, _arrays(prev), prev.s, gamma, 0.0, 0.0, n_nodes, passes=1)

    reasons = []
    if start.gamma > g_lo:
        out, r = _march(start.gamma, g_lo, 0.05, solve_at, start, step_max=max_dgamma, max_rel_ds=0.05)
        _record(curve, out, max_dgamma)
        reasons.append(r)
    # gamma stalls where the pulse starts to widen; the width takes over from there
    out, r = _march(start.gamma, g_hi, 0.05, solve_at, start, step_max=max_dgamma, max_rel_ds=0.05,
                    step_min=1e-3)
    _record(curve, out, max_dgamma)
    reasons.append(r)
    if r.startswith("existence-failure") or r == "range-end":
        last = out[-1][1] if out else start
        extra, r2 = _widen_pulse(last, g_hi, n_nodes)
        for prof in extra:
            curve.samples.append(_sample_of(prof))
            curve.profiles.append(prof)
        reasons.append(r2)
        if extra:
            curve.gamma_m = extra[-1].gamma
            curve.s_at_end = extra[-1].s
    curve.terminated_by = "; ".join(reasons)


def _widen_pulse(prof: WaveProfile, g_hi: float, n_nodes: int, growth: float = 1.25,
                 gamma_tol: float = 1e-7, max_width: float = 50.0):
    """Continue a pulse in its width until gamma settles (the front/back speed balance)."""
    p = prof.params
    level = prof.J_l + 0.5 * (prof.u_max - prof.J_l)
    arrays = _shift_to_upstroke(prof, level)
    width = prof.width(level)
    s, gamma = prof.s, prof.gamma
    out = []
    prev_gamma = gamma
    step = 0.1 * width
    reason = "width-limit"
    while width < max_width:
        trial = width + step
        try:
            setup = _setup("pulse", gamma, p, 0.0, prof.J_l, 0.0)
            new = _solve_pulse_width(setup, arrays, s, gamma, trial, level, n_nodes)
            if new.gamma > g_hi or abs(new.s - s) > 0.2 * s:
                raise NoConvergence("left the gamma range")
            _check_kind(new, setup)
        except RECOVERABLE:
            step /= 2
            if step < 1e-6 * width:
                reason = "width-stall"
                break
            continue
        out.append(new)
        width, s, gamma = trial, new.s, new.gamma
        arrays = _arrays(new)
        if abs(gamma - prev_gamma) < gamma_tol and len(out) > 3:
            reason = "gamma-converged"
            break
        prev_gamma = gamma
        step *= growth
    return out, reason


# ---------------------------------------------------------------- speed balance

@dataclass(frozen=True)
class SpeedBalance:
    gamma_m: float
    s: float
    s_front: float
    s_back: float
    interpolated_gamma: float


def _direct_speed(curve: DispersionCurve, gamma: float, n_nodes: int) -> float:
    prof = curve.nearest_profile(gamma)
    setup = _setup(curve.kind, gamma, curve.params, 0.0, curve.J_l, 0.0)
    return _solve_from(setup, _arrays(prof), prof.s, gamma, 0.0, 0.0, n_nodes, passes=2).s


def find_gamma_m(front: DispersionCurve, back: DispersionCurve, tol: float = 1e-9,
                 n_nodes: int = N_NODES, refine: bool = True) -> SpeedBalance:
    """gamma where the front and back speeds coincide."""
    from scipy.optimize import brentq

    lo = max(front.gammas[0], back.gammas[0])
    hi = min(front.gammas[-1], back.gammas[-1])
    if not lo < hi:
        raise PreconditionError("front and back curves do not overlap in gamma")
    grid = np.unique(np.concatenate([front.gammas, back.gammas]))
    grid = grid[(grid >= lo) & (grid <= hi)]
    diff = front.speed_at(grid) - back.speed_at(grid)
    sign_change = np.nonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0)[0]
    if sign_change.size == 0:
        raise NoConvergence("s_F - s_B does not change sign on the common interval")
    i = sign_change[0]
    d = lambda g: float(front.speed_at(g) - back.speed_at(g))
    g_int = brentq(d, grid[i], grid[i + 1], xtol=1e-14)
    if not refine:
        s = float(front.speed_at(g_int))
        return SpeedBalance(g_int, s, s, s, g_int)

    def direct(g):
        sf = _direct_speed(front, g, n_nodes)
        sb = _direct_speed(back, g, n_nodes)
        return sf - sb, sf, sb

    g0, g1 = g_int, g_int * (1 + 1e-4)
    d0, sf, sb = direct(g0)
    d1, sf1, sb1 = direct(g1)
    for _ in range(30):
        if abs(d1) < tol:
            break
        if d1 == d0:
            break
        g0, d0, (g1) = g1, d1, g1 - d1 * (g1 - g0) / (d1 - d0)
        d1, sf1, sb1 = direct(g1)
    else:
        raise NoConvergence("secant refinement of gamma_m did not converge")
    return SpeedBalance(float(g1), float(0.5 * (sf1 + sb1)), float(sf1), float(sb1), float(g_int))
