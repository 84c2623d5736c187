"""Collocation solver for traveling waves of two-component reaction-diffusion systems.

In the comoving coordinate xi a wave of

    u_t = D u_xx - D kappa u_x + a(u, w),      w_t = b(u, w)

moving with normal speed s satisfies

    (s + D kappa) u' = D u'' + a(u, w),        s w' = b(u, w).

It is written as the first-order system y = (u, v, w), discretised with
Hermite-Simpson (Lobatto IIIA, fourth order) collocation on an arbitrary
mesh, and solved by damped Newton with a sparse LU factorisation.  The speed
and optionally one more parameter are unknowns; each unknown parameter needs
one scalar constraint (phase condition, width condition or arclength).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence


class WaveKinetics(Protocol):
    """Reaction terms; ``params`` may carry 'gamma' etc. when they are unknowns."""

    D: float

    def rates(self, u, w, params: dict) -> tuple[np.ndarray, np.ndarray]: ...

    def partials(self, u, w, params: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]: ...


# ---------------------------------------------------------------- meshes

def graded_mesh(left: float, right: float, h_core: float, core: tuple[float, float] | None = None,
                growth: float = 1.04, h_max: float = 0.5) -> np.ndarray:
    """Mesh on [-left, right] containing 0, spacing h_core on ``core``, geometric outside."""
    a, b = core if core is not None else (-min(left, 0.2), min(right, 0.2))
    a, b = max(-left, min(a, 0.0)), min(right, max(b, 0.0))

    def side(extent, core_len):
        n_core = int(np.ceil(core_len / h_core))
        inner = np.linspace(0.0, core_len, n_core + 1) if n_core > 0 else np.array([0.0])
        rest = extent - core_len
        if rest <= 0:
            return inner
        # geometric growth capped at h_max
        n_grow = int(np.ceil(np.log(max(h_max / h_core, 1.0)) / np.log(growth))) + 1
        steps = np.minimum(h_core * growth ** np.arange(1, n_grow + 1), h_max)
        total = np.cumsum(steps)
        if total[-1] < rest:
            n_more = int(np.ceil((rest - total[-1]) / h_max))
            total = np.concatenate([total, total[-1] + h_max * np.arange(1, n_more + 1)])
        k = int(np.searchsorted(total, rest))
        outer = total[: k + 1]
        outer[-1] = rest
        if k > 0 and outer[-1] - outer[-2] < 0.3 * (outer[-2] - (outer[-3] if k > 1 else 0.0)):
            outer = np.delete(outer, -2)
        return np.concatenate([inner, core_len + outer])

    r = side(right, b)
    l = side(left, -a)
    return np.concatenate([-l[:0:-1], r])


def equidistributed_mesh(xi: np.ndarray, monitor: np.ndarray, n: int) -> np.ndarray:
    """n+1 points on [xi[0], xi[-1]] equidistributing ``monitor``; 0 stays a node."""
    def part(mask_x, mask_m, k):
        c = np.concatenate([[0.0], np.cumsum(0.5 * (mask_m[1:] + mask_m[:-1]) * np.diff(mask_x))])
        t = np.linspace(0.0, c[-1], k + 1)
        return np.interp(t, c, mask_x)

    left = xi <= 0
    right = xi >= 0
    xl, ml = xi[left], monitor[left]
    xr, mr = xi[right], monitor[right]
    il = np.trapezoid(ml, xl) if len(xl) > 1 else 0.0
    ir = np.trapezoid(mr, xr) if len(xr) > 1 else 0.0
    nl = max(4, int(round(n * il / (il + ir)))) if len(xl) > 1 else 0
    nr = max(4, n - nl)
    pieces = []
    if nl:
        pieces.append(part(xl, ml, nl)[:-1])
    pieces.append(part(xr, mr, nr))
    return np.concatenate(pieces)


def profile_monitor(xi, u, w, floor: float = 0.05) -> np.ndarray:
    """Arclength-type monitor from the gradients of the normalised components."""
    du = np.gradient(u, xi) / max(np.ptp(u), 1e-12)
    dw = np.gradient(w, xi) / max(np.ptp(w), 1e-12)
    m = np.sqrt(du**2 + dw**2)
    m = np.maximum(m, 0.0)
    m = m / max(m.max(), 1e-300)
    # smooth so that neighbouring intervals do not vary too abruptly
    ker = np.array([1, 2, 3, 2, 1], float)
    m = np.convolve(np.pad(m, 2, mode="edge"), ker / ker.sum(), mode="valid")
    return np.sqrt(m) + floor


# ---------------------------------------------------------------- problem

@dataclass
class Constraint:
    """Scalar equation g(x) = 0 with a sparse gradient row."""

    fun: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]  # (indices, values)


@dataclass
class WaveBVP:
    kinetics: WaveKinetics
    xi: np.ndarray
    left_u: float
    left_w: float
    right: tuple  # ("dirichlet", value) or ("neumann",)
    free: Sequence[str] = ("s",)
    fixed: dict = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.h = np.diff(self.xi)
        if np.any(self.h <= 0):
            raise ValueError("mesh must be strictly increasing")
        self.n_nodes = len(self.xi)
        self.free = tuple(self.free)
        if "s" not in self.free and "s" not in self.fixed:
            raise ValueError("the speed must be given or be an unknown")
        self.i0 = int(np.argmin(np.abs(self.xi)))

    # packing ------------------------------------------------------------
    @property
    def size(self) -> int:
        return 3 * self.n_nodes + len(self.free)

    def pack(self, u, v, w, params: dict) -> np.ndarray:
        Y = np.column_stack([u, v, w]).ravel()
        return np.concatenate([Y, [params[k] for k in self.free]])

    def unpack(self, x):
        Y = x[: 3 * self.n_nodes].reshape(self.n_nodes, 3)
        params = dict(self.fixed)
        params.update({k: x[3 * self.n_nodes + j] for j, k in enumerate(self.free)})
        return Y, params

    def pindex(self, name: str) -> int:
        return 3 * self.n_nodes + self.free.index(name)

    def uindex(self, i: int) -> int:
        return 3 * i

    def vindex(self, i: int) -> int:
        return 3 * i + 1

    # system -----------------------------------------------------------------
    def _rhs(self, Y, params):
        kin = self.kinetics
        D = kin.D
        s = params["s"]
        cu = s + D * params.get("kappa", 0.0)
        u, v, w = Y[..., 0], Y[..., 1], Y[..., 2]
        a, b = kin.rates(u, w, params)
        f = np.empty_like(Y)
        f[..., 0] = v
        f[..., 1] = (cu * v - a) / D
        f[..., 2] = b / s
        return f

    def _rhs_jac(self, Y, params):
        kin = self.kinetics
        D = kin.D
        s = params["s"]
        cu = s + D * params.get("kappa", 0.0)
        u, w = Y[..., 0], Y[..., 2]
        a_u, a_w, b_u, b_w = kin.partials(u, w, params)
        J = np.zeros(Y.shape[:-1] + (3, 3))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = -a_u / D
        J[..., 1, 1] = cu / D
        J[..., 1, 2] = -a_w / D
        J[..., 2, 0] = b_u / s
        J[..., 2, 2] = b_w / s
        return J

    def _collocation(self, Y, params):
        h = self.h[:, None]
        f = self._rhs(Y, params)
        ym = 0.5 * (Y[:-1] + Y[1:]) - h / 8.0 * (f[1:] - f[:-1])
        fm = self._rhs(ym, params)
        res = Y[1:] - Y[:-1] - h / 6.0 * (f[:-1] + 4.0 * fm + f[1:])
        return res, f, ym

    def residual(self, x) -> np.ndarray:
        Y, params = self.unpack(x)
        col, _, _ = self._collocation(Y, params)
        parts = [[Y[0, 0] - self.left_u, Y[0, 2] - self.left_w], col.ravel()]
        if self.right[0] == "dirichlet":
            parts.append([Y[-1, 0] - self.right[1]])
        else:
            parts.append([Y[-1, 1]])
        parts.append([c.fun(x) for c in self.constraints])
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def jacobian(self, x) -> sp.csc_matrix:
        Y, params = self.unpack(x)
        n = self.n_nodes
        col, f, ym = self._collocation(Y, params)
        J = self._rhs_jac(Y, params)
        Jm = self._rhs_jac(ym, params)
        h = self.h[:, None, None]
        I = np.eye(3)[None]
        A = -I - h / 6.0 * (J[:-1] + 4.0 * Jm @ (0.5 * I + h / 8.0 * J[:-1]))
        B = I - h / 6.0 * (J[1:] + 4.0 * Jm @ (0.5 * I - h / 8.0 * J[1:]))
        m = n - 1
        rows0 = 2 + 3 * np.arange(m)
        r_idx = rows0[:, None, None] + np.arange(3)[None, :, None]
        cA = (3 * np.arange(m))[:, None, None] + np.arange(3)[None, None, :]
        cB = cA + 3
        rows = [np.broadcast_to(r_idx, A.shape).ravel(), np.broadcast_to(r_idx, B.shape).ravel()]
        cols = [np.broadcast_to(cA, A.shape).ravel(), np.broadcast_to(cB, B.shape).ravel()]
        vals = [A.ravel(), B.ravel()]
        # boundary rows
        rows += [np.array([0, 1])]
        cols += [np.array([0, 2])]
        vals += [np.array([1.0, 1.0])]
        r_right = 2 + 3 * m
        rows.append(np.array([r_right]))
        cols.append(np.array([3 * (n - 1) + (0 if self.right[0] == "dirichlet" else 1)]))
        vals.append(np.array([1.0]))
        # parameter columns by central differences of the collocation residual
        for j, name in enumerate(self.free):
            p0 = params[name]
            dp = 1e-7 * max(1.0, abs(p0))
            pp = dict(params); pp[name] = p0 + dp
            pm = dict(params); pm[name] = p0 - dp
            dcol = (self._collocation(Y, pp)[0] - self._collocation(Y, pm)[0]).ravel() / (2 * dp)
            nz = np.nonzero(dcol)[0]
            rows.append(2 + nz)
            cols.append(np.full(nz.size, 3 * n + j))
            vals.append(dcol[nz])
        r = r_right + 1
        for c in self.constraints:
            idx, g = c.grad(x)
            rows.append(np.full(len(idx), r))
            cols.append(np.asarray(idx))
            vals.append(np.asarray(g, dtype=float))
            r += 1
        return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.size, self.size))

    # constraints ----------------------------------------------------------
    def level_constraint(self, i: int, level: float) -> Constraint:
        k = self.uindex(i)
        return Constraint(lambda x: x[k] - level, lambda x: (np.array([k]), np.array([1.0])))

    def slope_constraint(self, i: int) -> Constraint:
        k = self.vindex(i)
        return Constraint(lambda x: x[k], lambda x: (np.array([k]), np.array([1.0])))


@dataclass
class NewtonResult:
    x: np.ndarray
    residual: float
    iterations: int


def newton(problem, x0: np.ndarray, tol: float = 1e-10, maxiter: int = 40,
           min_damping: float = 1.0 / 256, step_tol: float = 1e-13) -> NewtonResult:
    """Damped Newton with a monotonicity test on the max-norm residual."""
    x = np.array(x0, dtype=float)
    r = problem.residual(x)
    nr = np.abs(r).max()
    for it in range(maxiter + 1):
        if not np.isfinite(nr):
            raise NoConvergence("residual is not finite")
        if nr < tol:
            return NewtonResult(x, float(nr), it)
        if it == maxiter:
            break
        try:
            lu = spla.splu(problem.jacobian(x))
        except RuntimeError as exc:  # singular factor
            raise NoConvergence(f"singular Jacobian: {exc}") from exc
        dx = lu.solve(-r)
        if not np.all(np.isfinite(dx)):
            raise NoConvergence("Newton step is not finite")
        lam = 1.0
        while True:
            xn = x + lam * dx
            rn = problem.residual(xn)
            nrn = np.abs(rn).max()
            if np.isfinite(nrn) and nrn < (1 - 1e-4 * lam) * nr:
                break
            lam *= 0.5
            if lam < min_damping:
                # accept a tiny full step if we are already at round-off level
                if np.abs(dx).max() < step_tol * max(1.0, np.abs(x).max()):
                    return NewtonResult(x, float(nr), it)
                raise NoConvergence(f"line search failed at residual {nr:.3e}")
        x, r, nr = xn, rn, nrn
    raise NoConvergence(f"no convergence in {maxiter} iterations (residual {nr:.3e})")


# ---------------------------------------------------------------- pseudo-arclength

def arclength_constraint(problem: WaveBVP, x_prev: np.ndarray, tangent: np.ndarray,
                         ds: float, weights: np.ndarray) -> Constraint:
    wt = weights * tangent

    def fun(x):
        return float(np.dot(wt, x - x_prev) - ds)

    idx = np.nonzero(wt)[0]

    def grad(x):
        return idx, wt[idx]

    return Constraint(fun, grad)


def continuation_weights(problem: WaveBVP) -> np.ndarray:
    """Profile unknowns are scaled by 1/n_nodes so that parameters carry O(1) weight."""
    wts = np.full(problem.size, 1.0 / problem.n_nodes)
    wts[3 * problem.n_nodes:] = 1.0
    return wts


def tangent_vector(problem: WaveBVP, x: np.ndarray, param: str, prev_tangent: np.ndarray | None = None,
                   direction: float = 1.0) -> np.ndarray:
    """Kernel direction of the Jacobian without the arclength row."""
    J = problem.jacobian(x).tolil()
    # replace the last row (the arclength row) by e_param, solve J t = e_last
    k = problem.pindex(param)
    J[-1, :] = 0.0
    if prev_tangent is None:
        J[-1, k] = 1.0
    else:
        w = continuation_weights(problem) * prev_tangent
        for i in np.nonzero(w)[0]:
            J[-1, i] = w[i]
    rhs = np.zeros(problem.size)
    rhs[-1] = 1.0
    t = spla.spsolve(J.tocsc(), rhs)
    wts = continuation_weights(problem)
    t = t / np.sqrt(np.dot(wts * t, t))
    if prev_tangent is None:
        t = t * np.sign(t[k] * direction) if t[k] != 0 else t
    return t
