"""Spectral stability of traveling waves on a uniform finite-difference grid.

A wave is linearized in its comoving frame, where u is advected with speed
ts + D kappa and w with speed ts.  A planar profile computed at gamma* stands
for the curved wave at (kappa, ts) through the gamma* mapping, so the same
(u, w) arrays serve both.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .errors import NoConvergence, PreconditionError
from .output import write_csv, write_json
from .travelwave import CalciumKinetics, WaveProfile, end_state_rates

THRESHOLD = 1e-4
N_DEFAULT = 600
DENSE_LIMIT = 2400
N_DECAY = 10.0

Boundary = Literal["periodic", "dirichlet"]


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    n: int
    h: float
    threshold: float = THRESHOLD
    complete: bool = True
    exclude_conserved: bool = False
    translational: complex = field(init=False)
    conserved: complex | None = field(init=False)
    max_real_filtered: float = field(init=False)

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=complex)
        self.eigenvalues = ev
        rest = ev
        self.conserved = None
        if self.exclude_conserved:
            # a conserved total adds an exact zero; it is not a stability mode
            i = int(np.argmin(np.abs(rest)))
            self.conserved = complex(rest[i])
            rest = np.delete(rest, i)
        i = int(np.argmin(np.abs(rest)))
        self.translational = complex(rest[i])
        rest = np.delete(rest, i)
        self.max_real_filtered = float(rest.real.max()) if rest.size else -np.inf

    @property
    def classification(self) -> str:
        return classify(self, self.threshold)[0]

    @property
    def ambiguous(self) -> bool:
        return classify(self, self.threshold)[1]

    def record(self) -> dict:
        return {"schema_version": 1, "n": self.n, "h": self.h, "threshold": self.threshold,
                "classification": self.classification, "ambiguous": self.ambiguous,
                "max_real_filtered": self.max_real_filtered,
                "translational": [self.translational.real, self.translational.imag],
                "conserved": None if self.conserved is None else [self.conserved.real, self.conserved.imag],
                "complete": self.complete}

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, ["re", "im"], ((z.real, z.imag) for z in self.eigenvalues))

    def to_json(self, path: str | Path) -> None:
        write_json(path, self.record())


# ---------------------------------------------------------------- frame and grid

@dataclass
class Frame:
    """Advection speeds and kinetics of the linearized wave."""
    c_u: float
    c_w: float
    kinetics: object
    params: dict


def wave_frame(wave: WaveProfile, kappa: float | None = None, gamma0: float | None = None) -> Frame:
    """Frame for ``wave`` itself, or for the curved wave it maps to at (kappa, gamma0).

    Mapping a planar profile (kappa = 0, speed s*, ratio gamma*) gives
    ts = s* - D kappa; gamma0 defaults to gamma* ts / s* and is checked
    against that value when supplied.
    """
    kin = wave.kinetics_record()
    D = kin.D
    if kappa is None:
        return Frame(wave.s + D * wave.kappa, wave.s, kin, {"gamma": wave.gamma})
    if wave.kappa != 0.0:
        raise PreconditionError("only planar profiles can be mapped to a curvature")
    ts = wave.s - D * kappa
    if ts <= 0:
        raise PreconditionError(f"curvature {kappa} leaves no positive normal speed")
    g0 = wave.gamma * ts / wave.s
    if gamma0 is not None and abs(gamma0 - g0) > 1e-6 * max(1.0, abs(g0)):
        raise PreconditionError(f"(kappa={kappa}, gamma0={gamma0}) is not the image of gamma*={wave.gamma}")
    return Frame(wave.s, ts, kin, {"gamma": g0})


def stability_window(wave: WaveProfile, tail: float = 1e-3) -> tuple[float, float]:
    """Support of the wave plus ``N_DECAY`` decay lengths on either side, clipped to the profile."""
    u = wave.u
    lo_end, hi_end = u[0], u[-1]
    span = max(np.ptp(u), 1e-12)
    active = np.nonzero((np.abs(u - lo_end) > tail * span) & (np.abs(u - hi_end) > tail * span))[0]
    if active.size == 0:
        active = np.array([0, len(u) - 1])
    x0, x1 = wave.xi[active[0]], wave.xi[active[-1]]
    kin = wave.kinetics_record()
    grow_l, _, _ = end_state_rates(kin, u[0], wave.w[0], wave.s, wave.kappa, wave.gamma)
    _, decay_r, _ = end_state_rates(kin, u[-1], wave.w[-1], wave.s, wave.kappa, wave.gamma)
    left = x0 - N_DECAY / grow_l if np.isfinite(grow_l) and grow_l > 0 else wave.xi[0]
    right = x1 + N_DECAY / decay_r if np.isfinite(decay_r) and decay_r > 0 else wave.xi[-1]
    return max(left, wave.xi[0]), min(right, wave.xi[-1])


def resample_uniform(wave: WaveProfile, n: int, window: tuple[float, float] | None = None):
    """(xi, u, w, h) on n uniform cells of the window; u uses its slope v for cubic Hermite accuracy."""
    a, b = window if window is not None else stability_window(wave)
    h = (b - a) / n
    xi = a + h * np.arange(n)
    u = CubicHermiteSpline(wave.xi, wave.u, wave.v)(xi)
    w = PchipInterpolator(wave.xi, wave.w)(xi)
    return xi, u, w, h


# ---------------------------------------------------------------- linearization

def _difference_operators(n: int, h: float, bc: Boundary, scheme: str):
    """Second difference and one-sided first difference on n points."""
    e = np.ones(n)
    lap = sp.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], shape=(n, n), format="lil")
    if scheme == "upwind":
        # transport is towards +xi: difference against the upstream neighbour
        grad = sp.diags([-e[:-1], e], [-1, 0], shape=(n, n), format="lil")
    elif scheme == "forward":
        grad = sp.diags([-e, e[:-1]], [0, 1], shape=(n, n), format="lil")
    else:
        raise PreconditionError(f"unknown difference scheme {scheme!r}")
    if bc == "periodic":
        lap[0, n - 1] = 1.0
        lap[n - 1, 0] = 1.0
        if scheme == "upwind":
            grad[0, n - 1] = -1.0
        else:
            grad[n - 1, 0] = 1.0
    elif bc != "dirichlet":
        raise PreconditionError(f"unknown boundary mode {bc!r}")
    return lap.tocsr() / h**2, grad.tocsr() / h


def assemble_jacobian(wave: WaveProfile, kappa: float | None = None, gamma0: float | None = None,
                      n: int = N_DEFAULT, p=None, bc: Boundary = "periodic", scheme: str = "upwind",
                      window: tuple[float, float] | None = None) -> sp.csr_matrix:
    """Jacobian (2n x 2n, unknowns ordered u_1..u_n, w_1..w_n) of the semi-discrete wave equations.

    With ``bc="dirichlet"`` the values beyond either end are frozen at the end states.
    """
    if n < 3:
        raise PreconditionError("need at least three grid points")
    frame = wave_frame(wave, kappa, gamma0)
    if p is not None and getattr(frame.kinetics, "p", p) != p:
        raise PreconditionError("parameters differ from those the wave was solved with")
    xi, u, w, h = resample_uniform(wave, n, window)
    au, aw, bu, bw = (np.broadcast_to(np.asarray(x, dtype=float), u.shape)
                      for x in frame.kinetics.partials(u, w, frame.params))
    if not all(np.all(np.isfinite(x)) for x in (au, aw, bu, bw)):
        raise NoConvergence("kinetics derivatives are not finite on the profile")
    D = frame.kinetics.D
    lap, grad = _difference_operators(n, h, bc, scheme)
    Juu = D * lap - frame.c_u * grad + sp.diags(au)
    Jww = -frame.c_w * grad + sp.diags(bw)
    return sp.bmat([[Juu, sp.diags(aw)], [sp.diags(bu), Jww]], format="csr")


def semi_discrete_rhs(wave: WaveProfile, kappa=None, gamma0=None, n=N_DEFAULT, bc: Boundary = "periodic",
                      scheme="upwind", window=None):
    """Right-hand side G(X) whose Jacobian ``assemble_jacobian`` returns (for checks)."""
    frame = wave_frame(wave, kappa, gamma0)
    _, u0, w0, h = resample_uniform(wave, n, window)
    lap, grad = _difference_operators(n, h, bc, scheme)
    D = frame.kinetics.D
    ul, ur, wl, wr = u0[0], u0[-1], w0[0], w0[-1]

    def G(X):
        u, w = X[:n], X[n:]
        a, b = frame.kinetics.rates(u, w, frame.params)
        du = D * (lap @ u) - frame.c_u * (grad @ u) + a
        dw = -frame.c_w * (grad @ w) + b
        if bc == "dirichlet":
            du[0] += D * ul / h**2
            du[-1] += D * ur / h**2
            if scheme == "upwind":
                du[0] += frame.c_u * ul / h
                dw[0] += frame.c_w * wl / h
            else:
                du[-1] -= frame.c_u * ur / h
                dw[-1] -= frame.c_w * wr / h
        return np.concatenate([du, dw])

    return G, np.concatenate([u0, w0])


# ---------------------------------------------------------------- spectra

def compute_spectrum(J, threshold: float = THRESHOLD, k: int = 12, h: float = float("nan"),
                     exclude_conserved: bool = False) -> Spectrum:
    """All eigenvalues for small systems; otherwise the rightmost few and the ones nearest zero."""
    dim = J.shape[0]
    if J.shape[0] != J.shape[1]:
        raise PreconditionError("matrix must be square")
    values = J.data if sp.issparse(J) else np.asarray(J, dtype=float)
    if not np.all(np.isfinite(values)):
        raise PreconditionError("matrix has non-finite entries")
    if dim <= DENSE_LIMIT:
        ev = np.linalg.eigvals(J.toarray() if sp.issparse(J) else values)
        return Spectrum(_conjugate_closed(ev), dim // 2, h, threshold, exclude_conserved=exclude_conserved)
    J = sp.csc_matrix(J)
    try:
        right = spla.eigs(J, k=k, which="LR", maxiter=20 * dim, return_eigenvectors=False)
        near0 = spla.eigs(J, k=min(k, 6), sigma=0.0, which="LM", return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(f"eigenvalue iteration did not converge: {exc}") from exc
    ev = np.concatenate([right, near0])
    ev = np.unique(np.round(ev, 12))
    return Spectrum(_conjugate_closed(ev), dim // 2, h, threshold, complete=False,
                    exclude_conserved=exclude_conserved)


def _conjugate_closed(ev):
    """Make the set exactly closed under conjugation (the matrix is real)."""
    ev = np.asarray(ev, dtype=complex)
    real = ev[np.abs(ev.imag) <= 1e-12 * np.maximum(1.0, np.abs(ev))].real
    upper = ev[ev.imag > 1e-12 * np.maximum(1.0, np.abs(ev))]
    return np.concatenate([real.astype(complex), upper, upper.conj()])


def classify(spec: Spectrum, threshold: float = THRESHOLD) -> tuple[str, bool]:
    """(label, ambiguous): unstable iff the largest real part after the translational mode exceeds threshold."""
    m = spec.max_real_filtered
    label = "unstable" if m > threshold else "stable"
    return label, bool(-threshold <= m <= threshold)


@dataclass
class Verdict:
    label: str
    ambiguous: bool
    spectrum: Spectrum
    refined: Spectrum | None = None
    other_bc: str | None = None


def default_boundary(wave: WaveProfile) -> Boundary:
    """Periodic wrap for pulses; fronts and backs keep their end states."""
    return "periodic" if wave.kind == "pulse" else "dirichlet"


def conserves_total(wave: WaveProfile, bc: Boundary) -> bool:
    """Closed-cell kinetics on a periodic grid conserve the total of u + w/gamma."""
    kin = wave.kinetics_record()
    return bc == "periodic" and isinstance(kin, CalciumKinetics) and kin.eps == 0.0


def wave_stability(wave: WaveProfile, kappa: float | None = None, gamma0: float | None = None,
                   n: int = N_DEFAULT, bc: Boundary | None = None, threshold: float = THRESHOLD,
                   refine: bool = True, cross_check: bool = False) -> Verdict:
    """Classify one wave; an ambiguous verdict is re-evaluated with twice the points."""
    bc = bc or default_boundary(wave)
    window = stability_window(wave)

    def spectrum(m, mode):
        J = assemble_jacobian(wave, kappa, gamma0, m, bc=mode, window=window)
        return compute_spectrum(J, threshold, h=(window[1] - window[0]) / m,
                                exclude_conserved=conserves_total(wave, mode))

    spec = spectrum(n, bc)
    label, amb = classify(spec, threshold)
    refined = None
    if amb and refine:
        refined = spectrum(2 * n, bc)
        label, amb = classify(refined, threshold)
    other = None
    if cross_check:
        other = classify(spectrum(n, "dirichlet" if bc == "periodic" else "periodic"), threshold)[0]
    return Verdict(label, amb, spec, refined, other)


def annotate_curve(curve, sampling: int | None = None, n: int = N_DEFAULT, bc: Boundary | None = None,
                   threshold: float = THRESHOLD):
    """Copy of ``curve`` with a stability flag per sample (None where the point failed).

    Samples are evaluated at every ``len/sampling``-th point when ``sampling``
    is given.  Records the first flip along the branch as ``markers['flip']``.
    """
    out = replace(curve, markers=dict(curve.markers))
    m = len(curve.kappa)
    idx = range(m) if not sampling or sampling >= m else np.unique(np.linspace(0, m - 1, sampling).astype(int))
    flags = [None] * m
    failures = {}
    for i in idx:
        try:
            wave = curve.profiles[i]
            if wave.kappa == 0.0 and curve.kappa[i] != 0.0:
                v = wave_stability(wave, float(curve.kappa[i]), curve.gamma0, n, bc, threshold)
            else:
                v = wave_stability(wave, None, None, n, bc, threshold)
            flags[i] = v.label == "stable"
        except (NoConvergence, PreconditionError, IndexError) as exc:
            failures[int(i)] = str(exc)
    out.stable = flags
    order = np.argsort(curve.gamma_star)
    seen = [(curve.kappa[i], curve.ts[i], flags[i]) for i in order if flags[i] is not None]
    flips = [(0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])) for a, b in zip(seen, seen[1:]) if a[2] != b[2]]
    out.markers["flips"] = flips
    if flips:
        out.markers["flip"] = flips[0]
    if failures:
        out.markers["stability_failures"] = failures
    return out
