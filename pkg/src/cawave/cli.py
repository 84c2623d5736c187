"""Batch command-line front end.

Every command reads an optional JSON config, overlays its own flags, stores
the fully resolved config next to its outputs and writes CSV/JSON tables plus
SVG figures.  Exit status: 0 ok, 2 config error, 3 numerical failure,
4 partial results.
"""
from __future__ import annotations

import copy
import json
import logging
import sys
from contextlib import contextmanager
from functools import cached_property
from pathlib import Path

import click
import numpy as np

from . import curvature as cv
from . import dynamics as dy
from . import fhn
from . import model
from . import stability as st
from . import travelwave as tw
from .errors import CawaveError, ConfigError, DomainError, EmptyDataset
from .output import write_csv, write_json
from .svg import Axes, Marker, Series, write_figure

log = logging.getLogger("cawave")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4
SCHEMA_VERSION = 1
COLORS = {"front": "#c0392b", "back": "#1f4e9c", "pulse": "black",
          "N_F": "#c0392b", "N_B": "#1f4e9c", "N_P": "black"}
BRANCH_KIND = {"N_F": "front", "N_B": "back", "N_P": "pulse"}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "model": model.ModelParams().to_dict(),
    "J_l": model.DEFAULT_JL,
    "gamma0": 5.0,
    "dispersion": {"gamma_min": 0.5, "gamma_max": 20.0, "n_nodes": 800},
    "curvature": {"open_cell": False, "open_eps": [1e-3, 1e-4], "open_kappa_range": [-20.0, 70.0],
                  "open_n_nodes": 800, "hyperbola_kappas": None},
    "stability": {"n": st.N_DEFAULT, "samples": 24, "threshold": st.THRESHOLD},
    "kinetics": {"J_in": None, "t_end": None, "hopf_points": 10},
    "pde": {"kappa": 0.0, "L": 20.0, "n": 4000, "ic": "front", "t_end": None},
    "fhn": {"params": fhn.FhnParams().to_dict(), "kappa_range": [-0.5, 0.2], "n_nodes": 1200,
            "s1_eps": [5e-3, 2.5e-3, 1.25e-3], "probe_kappas": [0.02, 0.05, 0.1]},
}
# entries whose default is null accept a number
NULLABLE = {("curvature", "hyperbola_kappas"), ("kinetics", "J_in"), ("kinetics", "t_end"),
            ("pde", "t_end")}


# ---------------------------------------------------------------- config

def _check_against(defaults: dict, given: dict, path=()):
    for key, value in given.items():
        where = ".".join(path + (key,))
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        ref = defaults[key]
        if isinstance(ref, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            _check_against(ref, value, path + (key,))
        elif value is None:
            if path + (key,) not in NULLABLE:
                raise ConfigError(f"{where} may not be null")
        elif isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where} must be true or false")
        elif isinstance(ref, (int, float)) or path + (key,) in NULLABLE:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if path + (key,) == ("curvature", "hyperbola_kappas"):
                ok = isinstance(value, list) and all(isinstance(v, (int, float)) for v in value)
            if not ok:
                raise ConfigError(f"{where} must be a number")
        elif isinstance(ref, list):
            if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
                raise ConfigError(f"{where} must be a list of numbers")
        elif isinstance(ref, str) and not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class RunConfig:
    """Validated run configuration; ``data`` always holds every field."""

    def __init__(self, data: dict | None = None):
        data = dict(data or {})
        version = data.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        _check_against(DEFAULTS, data)
        self.data = _merge(DEFAULTS, data)
        try:
            self.params = model.ModelParams.from_dict(self.data["model"])
            self.fhn_params = fhn.FhnParams(**self.data["fhn"]["params"])
        except (DomainError, TypeError) as exc:
            raise ConfigError(f"invalid parameters: {exc}") from exc
        d = self.data["dispersion"]
        if not 0 < d["gamma_min"] < d["gamma_max"]:
            raise ConfigError("dispersion.gamma_min must be positive and below gamma_max")
        if not 0 < self.data["J_l"]:
            raise ConfigError("J_l must be positive")

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls(data)

    def with_overrides(self, section: str | None, **values) -> "RunConfig":
        patch = {k: v for k, v in values.items() if v is not None}
        if not patch:
            return self
        data = copy.deepcopy(self.data)
        if section is None:
            data.update(patch)
        else:
            data[section].update(patch)
        return RunConfig(data)

    def __getitem__(self, key):
        return self.data[key]


# ---------------------------------------------------------------- failures

class NumericalFailure(Exception):
    def __init__(self, module: str, point: dict, cause: Exception):
        self.module, self.point, self.cause = module, point, cause
        where = ", ".join(f"{k}={v}" for k, v in point.items())
        super().__init__(f"{module} failed at {where or 'default point'}: "
                         f"{type(cause).__name__}: {cause}")


@contextmanager
def numerical(module: str, **point):
    """Attach the module name and parameter point to numerical errors."""
    try:
        yield
    except (ConfigError, NumericalFailure):
        raise
    except (CawaveError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        raise NumericalFailure(module, point, exc) from exc


# ---------------------------------------------------------------- pipeline

class Pipeline:
    """Lazily computed results shared between the commands of one run."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg, self.out = cfg, Path(out)
        self.p = cfg.params
        self.partial: list[str] = []
        self.resolved: dict = {}

    def note_partial(self, msg: str):
        log.warning(msg)
        self.partial.append(msg)

    def path(self, name: str) -> Path:
        return self.out / name

    def figure(self, name, datasets, axes):
        try:
            write_figure(self.path(name), datasets, axes)
        except EmptyDataset as exc:
            self.note_partial(f"{name}: {exc}")

    # ---- model
    @cached_property
    def window(self):
        with numerical("model", eps=self.p.eps):
            return {"closed": model.excitability_roots(self.p, 0.0),
                    "open": model.excitability_roots(self.p, self.p.eps)}

    # ---- dispersion
    @cached_property
    def dispersion(self) -> dict:
        d = self.cfg["dispersion"]
        rng = (d["gamma_min"], d["gamma_max"])
        out = {}
        for kind in tw.KINDS:
            with numerical("travelwave", kind=kind, gamma_range=rng, J_l=self.cfg["J_l"]):
                out[kind] = tw.continue_dispersion(kind, rng, self.p, J_l=self.cfg["J_l"], n_nodes=d["n_nodes"])
        return out

    @cached_property
    def balance(self):
        with numerical("travelwave", quantity="gamma_m"):
            return tw.find_gamma_m(self.dispersion["front"], self.dispersion["back"],
                                   n_nodes=self.cfg["dispersion"]["n_nodes"])

    # ---- curvature
    @cached_property
    def curves(self) -> dict:
        disp = self.dispersion
        pulse = disp["pulse"] if len(disp["pulse"].samples) > 1 else None
        g0 = self.cfg["gamma0"]
        with numerical("curvature", gamma0=g0):
            return cv.build_curvature_curves(disp["front"], disp["back"], pulse, g0, balance=self.balance)

    @cached_property
    def critical(self):
        with numerical("curvature", gamma0=self.cfg["gamma0"], quantity="critical curvatures"):
            return cv.critical_curvatures(self.curves, n_nodes=self.cfg["dispersion"]["n_nodes"])

    @cached_property
    def annotated(self) -> dict:
        s = self.cfg["stability"]
        out = {}
        for name, curve in self.curves.items():
            with numerical("stability", branch=name, n=s["n"]):
                out[name] = st.annotate_curve(curve, s["samples"], s["n"], None, s["threshold"])
            fails = out[name].markers.get("stability_failures")
            if fails:
                self.note_partial(f"stability: {len(fails)} sample(s) of {name} failed")
        return out

    @cached_property
    def open_curves(self) -> dict:
        c = self.cfg["curvature"]
        ts_cut = self.critical_ts_Pm
        out = {}
        for eps in c["open_eps"]:
            with numerical("curvature", eps=eps, J_in=self.cfg["J_l"], kappa_range=c["open_kappa_range"]):
                out[eps] = cv.opencell_curvature_curve(tuple(c["open_kappa_range"]), self.p, self.cfg["gamma0"],
                                                       eps=eps, J_in=self.cfg["J_l"], ts_stop=0.9 * ts_cut,
                                                       n_nodes=c["open_n_nodes"])
        return out

    @property
    def critical_ts_Pm(self) -> float:
        return float(self.curves["N_P"].markers["P_m"][1]) if "N_P" in self.curves else 0.0


# ---------------------------------------------------------------- writers

def write_model_report(pl: Pipeline):
    p, cfg = pl.p, pl.cfg
    with numerical("model"):
        geo = model.geometry(p)
        lines = model.critical_line_points(p)
        g_M, u_T = model.gamma_max_tangent(cfg["J_l"], p)
        inter = model.line_intersections(cfg["J_l"], p.gamma, p)
        eq = model.equilibrium_report(cfg["J_l"], p, "open")
    win = pl.window
    write_json(pl.path("model_report.json"), {
        "params": p.to_dict(), "J_l": cfg["J_l"],
        "folds": {"u_minus": geo.u_minus, "omega_minus": geo.omega_minus,
                  "u_plus": geo.u_plus, "omega_plus": geo.omega_plus},
        "hopf_window_closed": list(win["closed"]), "hopf_window_open": list(win["open"]),
        "critical_line_points": lines, "gamma_M": g_M, "u_T": u_T,
        "line_intersections": {"J_l": inter[0], "J_m": inter[1], "J_r": inter[2]},
        "equilibrium_at_J_l": {"classification": eq.classification, "R": eq.R_value,
                               "eigenvalues": [[z.real, z.imag] for z in eq.eigenvalues]},
    })
    u = np.linspace(1e-4, 1.6 * geo.u_plus, 600)
    H = model.H_null(u, p)
    pl.figure("fig2a", [Series("w = H(u)", u, H, color="black"),
                        Marker("(u₋, ω₋)", geo.u_minus, geo.omega_minus),
                        Marker("(u₊, ω₊)", geo.u_plus, geo.omega_plus)],
              Axes("Nullcline", "u", "w"))
    ds = [Series("w = H(u)", u, H, color="black")]
    for label, J0, color in (("L₋", win["closed"][0], COLORS["front"]), ("L₊", win["closed"][1], COLORS["back"])):
        q = J0 + model.H_null(J0, p) / p.gamma
        ds.append(Series(label, u, p.gamma * (q - u), color=color, style="dashed"))
        ds.append(Marker(f"Ĵ{label[1]}", J0, float(model.H_null(J0, p)), color=color))
    if np.isfinite(lines["J_plus_c"]):
        ds.append(Marker("Ĵ₊ᶜ", lines["J_plus_c"], float(model.H_null(lines["J_plus_c"], p))))
    pl.figure("fig2b", ds, Axes("Lines of constant total calcium", "u", "w",
                                ylim=(0.0, 1.3 * geo.omega_minus)))
    J = np.linspace(1e-3, 1.5 * win["closed"][1], 600)
    R = model.R_trace(J, p)
    pl.figure("fig3a", [Series("R(J)", J, R), Series("ε", J[[0, -1]], [p.eps, p.eps], style="dashed",
                                                     color="gray"),
                        Marker("Ĵ₋", win["closed"][0], 0.0), Marker("Ĵ₊", win["closed"][1], 0.0)],
              Axes("Trace function", "J", "R(J)"))


def write_kinetics(pl: Pipeline):
    p, k = pl.p, pl.cfg["kinetics"]
    lo, hi = pl.window["open"]
    J_in = k["J_in"] if k["J_in"] is not None else 0.5 * (lo + hi)
    t_end = k["t_end"] if k["t_end"] is not None else 120.0 / p.eps
    pl.resolved["kinetics"] = {"J_in": J_in, "t_end": t_end}
    with numerical("dynamics", J_in=J_in, t_end=t_end):
        traj = dy.integrate_kinetics((J_in * 1.01, float(model.H_null(J_in, p))), p, t_end, "open", J_in=J_in)
        orbit = dy.detect_periodic_orbit(traj)
    traj.to_csv(pl.path("trajectory.csv"))
    write_json(pl.path("orbit.json"), {"J_in": J_in, "t_end": t_end, "found": orbit is not None,
                                      **({} if orbit is None else {"period": orbit.period, "u_min": orbit.u_min,
                                                                   "u_max": orbit.u_max,
                                                                   "n_cycles": orbit.n_cycles})})
    q = traj.u + traj.w / p.gamma
    tail = traj.times >= traj.times[0] + 0.6 * (traj.times[-1] - traj.times[0])
    uu = np.linspace(1e-4, max(1.0, traj.u.max() * 1.1), 500)
    pl.figure("fig3c", [Series("orbit", traj.u[tail], q[tail], style="dashed"),
                        Series("u-nullcline", uu, uu + model.H_null(uu, p) / p.gamma, color=COLORS["back"]),
                        Series("q-nullcline", [J_in, J_in], [q.min(), q.max()], color=COLORS["front"])],
              Axes("Phase portrait", "u", "q = u + w/γ"))
    pl.figure("fig3d", [Series("u(t)", traj.times[tail], traj.u[tail])], Axes("Relaxation oscillation", "t", "u"))


def write_hopf(pl: Pipeline):
    p, k = pl.p, pl.cfg["kinetics"]
    lo, hi = pl.window["open"]
    grid = np.linspace(lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo), k["hopf_points"])
    with numerical("dynamics", quantity="hopf branch", eps=p.eps):
        rows = dy.scan_hopf_branch(grid, p)
    table = [(r.J_in, r.classification, None if r.orbit is None else r.orbit.u_min,
              None if r.orbit is None else r.orbit.u_max, None if r.orbit is None else r.orbit.period, r.status)
             for r in rows]
    write_csv(pl.path("hopf_branch.csv"), ["J_in", "equilibrium", "u_min", "u_max", "period", "status"], table)
    if any(r.status != "ok" for r in rows):
        pl.note_partial("hopf: some scan points did not settle")
    onsets = {}
    for side in ("lower", "upper"):
        with numerical("dynamics", quantity="hopf onset", side=side):
            h = dy.hopf_onset(p, side)
        onsets[side] = {"J_hopf": h.J_hopf, "slope": h.slope, "r_squared": h.r_squared, "inside": h.inside,
                        "supercritical": h.supercritical,
                        "orbits": [[o.J_in, o.amplitude, o.period] for o in h.orbits]}
    write_json(pl.path("hopf_onset.json"), onsets)
    osc = [r for r in rows if r.orbit is not None]
    J = np.array([r.J_in for r in osc])
    pl.figure("fig3b", [Series("u_max", J, [r.orbit.u_max for r in osc]),
                        Series("u_min", J, [r.orbit.u_min for r in osc]),
                        Series("equilibrium", grid, grid, color="gray",
                               stable=[r.classification == "stable" for r in rows]),
                        Marker("Ĵ₋ᵉ", lo, lo), Marker("Ĵ₊ᵉ", hi, hi)],
              Axes("Periodic orbits", "J_in", "u"))


def write_pde(pl: Pipeline):
    p, c, cfg = pl.p, pl.cfg["pde"], pl.cfg
    g0, kappa = cfg["gamma0"], c["kappa"]
    with numerical("travelwave", gamma0=g0, kappa=kappa):
        bvp = cv.curved_front(kappa, p, g0, cfg["J_l"], n_nodes=cfg["dispersion"]["n_nodes"])
    t_end = c["t_end"] if c["t_end"] is not None else 0.5 * c["L"] / bvp.s
    pl.resolved["pde"] = {"t_end": t_end}
    with numerical("dynamics", gamma0=g0, kappa=kappa, L=c["L"], n=c["n"]):
        sol = dy.simulate_wave_pde(p, g0, kappa, L=c["L"], n=c["n"], ic=c["ic"], t_end=t_end, J_l=cfg["J_l"])
        level = 0.5 * (cfg["J_l"] + bvp.J_r)
        m = dy.measure_wave_speed(sol, level)
    write_csv(pl.path("pde_positions.csv"), ["t", "x_crossing"], zip(m.times, m.positions))
    rel = (m.speed - bvp.s) / bvp.s
    write_json(pl.path("pde_speed.json"), {"gamma0": g0, "kappa": kappa, "L": c["L"], "n": c["n"], "t_end": t_end,
                                          "pde_speed": m.speed, "r_squared": m.r_squared, "bvp_speed": bvp.s,
                                          "relative_difference": rel, "clipped": sol.clipped})
    if not m.good_fit:
        pl.note_partial(f"pde: crossing positions fit poorly (R^2={m.r_squared:.6f})")


def write_dispersion(pl: Pipeline):
    disp = pl.dispersion
    rows = [(kind, x.gamma, x.s, int(x.converged), x.residual) for kind in tw.KINDS for x in disp[kind].samples]
    bal = pl.balance
    meta = {"gamma_M": disp["front"].gamma_M, "gamma_m": bal.gamma_m, "J_l": pl.cfg["J_l"]}
    write_csv(pl.path("dispersion.csv"), ["branch", "gamma", "s", "converged", "residual"], rows, meta)
    write_json(pl.path("dispersion.json"), {**meta, "s_at_gamma_m": bal.s,
                                           **{f"{k}_terminated_by": disp[k].terminated_by for k in tw.KINDS},
                                           **{f"{k}_samples": len(disp[k].samples) for k in tw.KINDS}})
    ds = [Series(f"s_{k[0].upper()}", disp[k].gammas, disp[k].speeds, color=COLORS[k]) for k in tw.KINDS]
    ds.append(Marker("γ_m", bal.gamma_m, bal.s))
    if disp["front"].s_at_end is not None:
        ds.append(Marker("γ_M", disp["front"].gamma_M, disp["front"].s_at_end))
    pl.figure("fig4", ds, Axes("Dispersion curves", "γ", "s"))
    if len(disp["pulse"].samples) <= 1:
        pl.note_partial("dispersion: no pulse branch converged")


def _critical_meta(pl: Pipeline) -> dict:
    cc = pl.critical
    return {"kappa_M_f": cc.kappa_M_f, "kappa_m": cc.kappa_m, "kappa_T": cc.kappa_T, "kappa_M_b": cc.kappa_M_b,
            "gamma0": pl.cfg["gamma0"], "J_l": pl.cfg["J_l"]}


def _branch_markers(pl: Pipeline, name: str) -> list:
    m = pl.curves[name].markers
    out = []
    if name == "N_F":
        cc = pl.critical
        out.append(Marker("P̃_T", cc.kappa_T, cc.ts_T, COLORS[name]))
        if "kappa_M_f" in m:
            out.append(Marker("P̃_M^f", *m["kappa_M_f"], COLORS[name]))
        if "Q_m" in m:
            out.append(Marker("Q̃_m", *m["Q_m"], COLORS[name]))
    elif name == "N_B" and "kappa_M_b" in m:
        out.append(Marker("P̃_M^b", *m["kappa_M_b"], COLORS[name]))
    elif name == "N_P" and "P_m" in m:
        out.append(Marker("P̃_m", *m["P_m"], COLORS[name]))
    return out


def write_curvature(pl: Pipeline):
    curves = pl.curves
    meta = _critical_meta(pl)
    rows = [(name, *row) for name, c in curves.items() for row in c.rows()]
    write_csv(pl.path("curvature.csv"), ["branch", "kappa", "ts", "gamma_star", "s_star", "stable"], rows, meta)
    write_json(pl.path("critical.json"), {**pl.critical.as_dict(), "gamma0": pl.cfg["gamma0"]})
    g0, D = pl.cfg["gamma0"], pl.p.D
    disp = pl.dispersion
    hyper = pl.cfg["curvature"]["hyperbola_kappas"]
    cc = pl.critical
    for (fa, fb), name in ((("fig5a", "fig5b"), "N_F"), (("fig6a", "fig6b"), "N_B"), (("fig6c", "fig6d"), "N_P")):
        kind = BRANCH_KIND[name]
        if name not in curves:
            pl.figure(fb, [Series(name, [], [])], Axes(f"Curvature relation {name}", "κ", "ts"))
            continue
        d = disp[kind]
        ks = hyper if hyper is not None else {
            "N_F": [cc.kappa_M_f, cc.kappa_T], "N_B": [cc.kappa_m, cc.kappa_M_b], "N_P": [cc.kappa_m]}[name]
        g = np.linspace(g0 * 1.0005, d.gammas.max() * 1.05, 300)
        ds = [Series(f"s_{kind[0].upper()}(γ*)", d.gammas, d.speeds, color=COLORS[kind])]
        for k in ks:
            if np.isfinite(k):
                ds.append(Series(f"Φ at κ={k:.4g}", g, D * k * g / (g - g0), color="#d98cb3", style="dashed"))
        pl.figure(fa, ds, Axes(f"Speed against γ* ({name})", "γ*", "s",
                                      ylim=(0.0, 1.3 * float(d.speeds.max()))))
        c = curves[name]
        pl.figure(fb, [Series(name, c.kappa, c.ts, color=COLORS[name])] + _branch_markers(pl, name),
                  Axes(f"Curvature relation {name}", "κ", "ts"))
    if pl.cfg["curvature"]["open_cell"]:
        write_open_cell(pl)


def write_open_cell(pl: Pipeline):
    ocs = pl.open_curves
    closed = pl.curves
    rows, devs = [], {}
    ds = [Series(f"closed {n}", closed[n].kappa[closed[n].ts >= pl.critical_ts_Pm],
                 closed[n].ts[closed[n].ts >= pl.critical_ts_Pm], color=COLORS[n])
          for n in ("N_F", "N_P") if n in closed]
    for eps, oc in ocs.items():
        for name, c in oc.items():
            rows += [(f"{name} eps={eps:g}", *row) for row in c.rows()]
        with numerical("curvature", eps=eps, quantity="deviation from the closed-cell union"):
            devs[f"{eps:g}"] = cv.closed_union_deviation(oc, closed, pl.critical_ts_Pm)
    last = min(ocs)
    for name, color in (("open-front", COLORS["front"]), ("open-pulse", COLORS["pulse"])):
        if name in ocs[last]:
            c = ocs[last][name]
            ds.append(Series(f"{name} ε={last:g}", c.kappa, c.ts, color=color, style="dashed"))
    write_csv(pl.path("open_curvature.csv"), ["branch", "kappa", "ts", "gamma_star", "s_star", "stable"], rows)
    write_json(pl.path("open_deviation.json"), devs)
    pl.figure("fig8", ds, Axes("Open against closed cell", "κ", "ts"))


def _nearest_flags(curve) -> list:
    """Flag of the nearest evaluated sample (in gamma* order) for every point, for drawing."""
    order = np.argsort(curve.gamma_star)
    known = [i for i in order if curve.stable[i] is not None]
    if not known:
        return [None] * len(curve.kappa)
    pos = {int(i): r for r, i in enumerate(order)}
    kr = np.array([pos[int(i)] for i in known])
    return [curve.stable[known[int(np.argmin(np.abs(kr - pos[i])))]] for i in range(len(curve.kappa))]


def write_stability(pl: Pipeline):
    ann = pl.annotated
    rows, summary = [], {}
    for name, c in ann.items():
        rows += [(name, k, t, g, int(s)) for k, t, g, s in zip(c.kappa, c.ts, c.gamma_star, c.stable) if s is not None]
        flags = [s for s in c.stable if s is not None]
        summary[name] = {"evaluated": len(flags), "stable": int(sum(flags)), "flips": c.markers.get("flips", []),
                         "failures": c.markers.get("stability_failures", {})}
    s = pl.cfg["stability"]
    write_csv(pl.path("stability.csv"), ["branch", "kappa", "ts", "gamma_star", "stable"], rows,
              {"n": s["n"], "threshold": s["threshold"]})
    write_json(pl.path("stability.json"), summary)
    ds = [Series(name, c.kappa, c.ts, color=COLORS[name], stable=_nearest_flags(c)) for name, c in ann.items()]
    cc = pl.critical
    ds += [Marker("P̃_T", cc.kappa_T, cc.ts_T, COLORS["N_F"])]
    if "N_P" in pl.curves:
        ds.append(Marker("P̃_m", *pl.curves["N_P"].markers["P_m"]))
    pl.figure("fig7", ds, Axes("Curvature relation and stability", "κ", "ts"))


def write_fhn(pl: Pipeline):
    fc, q = pl.cfg["fhn"], pl.cfg.fhn_params
    with numerical("fhn", eps=q.eps):
        speed = fhn.fhn_planar_speed(q, n_nodes=fc["n_nodes"])
    with numerical("fhn", quantity="s1", eps_values=fc["s1_eps"]):
        s1 = fhn.estimate_s1(q, fc["s1_eps"], n_nodes=fc["n_nodes"])
    with numerical("fhn", kappa_range=fc["kappa_range"], eps=q.eps):
        curve = fhn.fhn_curvature_curve(tuple(fc["kappa_range"]), q, n_nodes=fc["n_nodes"])
    roots = {}
    for k in fc["probe_kappas"]:
        try:
            big, small = fhn.fhn_quadratic_roots(k, q, s1.s1)
            roots[f"{k:g}"] = [big, small]
        except CawaveError as exc:
            roots[f"{k:g}"] = str(exc)
    write_json(pl.path("fhn.json"), {"params": q.to_dict(), "s": speed.s, "s0": fhn.fhn_s0(q),
                                     "s1": s1.s1, "s1_r_squared": s1.r_squared,
                                     "s1_eps": list(s1.eps), "s1_speeds": list(s1.speeds),
                                     "fold": curve.markers.get("fold"),
                                     "terminated_by": curve.markers["terminated_by"],
                                     "quadratic_roots": roots})
    write_csv(pl.path("fhn_curve.csv"), ["kappa", "ts", "s_star"], zip(curve.kappa, curve.ts, curve.s_star),
              {"eps": q.eps, "s0": fhn.fhn_s0(q)})
    ek, et = curve.markers["eikonal"]
    ds = [Series(f"ε={q.eps:g}", curve.kappa, curve.ts), Series("ε→0", ek, et, style="dashed")]
    if "fold" in curve.markers:
        ds.append(Marker("fold", *curve.markers["fold"]))
    pl.figure("figA1", ds, Axes("FitzHugh-Nagumo curvature relation", "κ", "ts"))


WRITERS = {"model-report": [write_model_report], "dispersion": [write_dispersion],
           "curvature": [write_curvature], "stability": [write_stability], "fhn": [write_fhn]}


def run(command: str, cfg: RunConfig, out: str | Path, simulate_what: str = "kinetics") -> int:
    """Run one command and return its exit status."""
    if command == "simulate":
        writers = {"kinetics": [write_kinetics], "hopf": [write_hopf], "pde": [write_pde]}[simulate_what]
    elif command == "reproduce-figures":
        cfg = cfg.with_overrides("curvature", open_cell=True)
        writers = [write_model_report, write_hopf, write_kinetics, write_dispersion, write_curvature,
                   write_stability, write_fhn]
    elif command in WRITERS:
        writers = WRITERS[command]
    else:
        raise ConfigError(f"unknown command {command!r}")
    pl = Pipeline(cfg, out)
    pl.out.mkdir(parents=True, exist_ok=True)
    failures = []
    for w in writers:
        try:
            w(pl)
        except NumericalFailure as exc:
            log.error(str(exc))
            failures.append(str(exc))
            if len(writers) == 1:
                break
    stored = copy.deepcopy(cfg.data)
    for section, values in pl.resolved.items():
        stored[section].update(values)
    write_json(pl.out / "run_config.json", {k: v for k, v in stored.items() if k != "schema_version"})
    if failures:
        write_json(pl.out / "failures.json", {"failures": failures})
        done = len(writers) - len(failures)
        return EXIT_PARTIAL if done > 0 else EXIT_NUMERICAL
    return EXIT_PARTIAL if pl.partial else EXIT_OK


# ---------------------------------------------------------------- click

def _execute(ctx, command, section=None, simulate_what="kinetics", **overrides):
    obj = ctx.obj
    try:
        cfg = RunConfig.load(obj["config"])
        top = {k: overrides.pop(k) for k in ("J_l", "gamma0") if k in overrides}
        cfg = cfg.with_overrides(None, **top)
        if section is not None:
            cfg = cfg.with_overrides(section, **overrides)
        status = run(command, cfg, obj["out"], simulate_what)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        ctx.exit(EXIT_CONFIG)
    if status == EXIT_NUMERICAL:
        click.echo(f"{command}: numerical failure (see {Path(obj['out']) / 'failures.json'})", err=True)
    elif status == EXIT_PARTIAL:
        click.echo(f"{command}: partial results", err=True)
    ctx.exit(status)


@click.group()
@click.option("--config", "config", type=click.Path(dir_okay=False), default=None, help="JSON run configuration.")
@click.option("--out", "out", type=click.Path(file_okay=False), default="cawave-out", show_default=True,
              help="Output directory.")
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.pass_context
def main(ctx, config, out, verbose):
    """Traveling waves, curvature relations and wave stability for the calcium and FHN models."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {"config": config, "out": out}


@main.command("model-report")
@click.option("--Jl", "J_l", type=float, default=None, help="Left rest state J_l.")
@click.pass_context
def model_report_cmd(ctx, J_l):
    """Nullcline folds, Hopf windows and lines of constant total calcium."""
    _execute(ctx, "model-report", J_l=J_l)


@main.command("simulate")
@click.argument("what", type=click.Choice(["kinetics", "hopf", "pde"]), default="kinetics")
@click.option("--J-in", "J_in", type=float, default=None, help="Influx level (kinetics).")
@click.option("--t-end", "t_end", type=float, default=None, help="Integration horizon.")
@click.option("--kappa", type=float, default=None, help="Curvature (pde).")
@click.option("--gamma0", type=float, default=None)
@click.pass_context
def simulate_cmd(ctx, what, J_in, t_end, kappa, gamma0):
    """Kinetics trajectories, the Hopf branch scan or a direct PDE run."""
    if what == "pde":
        _execute(ctx, "simulate", "pde", "pde", t_end=t_end, kappa=kappa, gamma0=gamma0)
    else:
        _execute(ctx, "simulate", "kinetics", what, J_in=J_in, t_end=t_end, gamma0=gamma0)


@main.command("dispersion")
@click.option("--gamma-min", type=float, default=None)
@click.option("--gamma-max", type=float, default=None)
@click.option("--Jl", "J_l", type=float, default=None)
@click.option("--n-nodes", type=int, default=None)
@click.pass_context
def dispersion_cmd(ctx, gamma_min, gamma_max, J_l, n_nodes):
    """Front, back and pulse speed against gamma."""
    _execute(ctx, "dispersion", "dispersion", gamma_min=gamma_min, gamma_max=gamma_max, J_l=J_l, n_nodes=n_nodes)


@main.command("curvature")
@click.option("--gamma0", type=float, default=None)
@click.option("--Jl", "J_l", type=float, default=None)
@click.option("--open-cell/--no-open-cell", default=None, help="Also compute the open-cell branches.")
@click.pass_context
def curvature_cmd(ctx, gamma0, J_l, open_cell):
    """Curvature relations N_F, N_B, N_P and their critical curvatures."""
    _execute(ctx, "curvature", "curvature", gamma0=gamma0, J_l=J_l, open_cell=open_cell)


@main.command("stability")
@click.option("--gamma0", type=float, default=None)
@click.option("-n", "n", type=int, default=None, help="Grid points of the discretized operator.")
@click.option("--samples", type=int, default=None, help="Samples per branch.")
@click.pass_context
def stability_cmd(ctx, gamma0, n, samples):
    """Stability of the waves along each curvature branch."""
    _execute(ctx, "stability", "stability", gamma0=gamma0, n=n, samples=samples)


@main.command("fhn")
@click.option("--n-nodes", type=int, default=None)
@click.pass_context
def fhn_cmd(ctx, n_nodes):
    """FitzHugh-Nagumo pulse speeds and curvature relation."""
    _execute(ctx, "fhn", "fhn", n_nodes=n_nodes)


@main.command("reproduce-figures")
@click.pass_context
def reproduce_cmd(ctx):
    """Every table and figure, end to end."""
    _execute(ctx, "reproduce-figures")


@main.command("default-config")
def default_config_cmd():
    """Print the default configuration."""
    click.echo(json.dumps(DEFAULTS, indent=2, sort_keys=True))


if __name__ == "__main__":  # pragma: no cover
    main()
