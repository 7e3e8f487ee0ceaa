"""Experiment orchestration: configs, theorem proxies, refinement studies, controls.

Every experiment returns a plain ``dict`` holding the numbers its verdicts are
computed from, so the CLI can write them out unchanged.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .analysis import boundedness_check, growth_exponent_fit, FitError
from .grid import l2_norm, make_grid
from .material import (
    DensityField,
    SpherePairSampler,
    make_null_tensor,
    matched_pair,
    n_tilde_contract,
    quadratic_flux,
    radial_null_deficit,
    random_symmetric_tensor,
    symmetrize,
    symmetry_deficit,
    transverse_null_deficit,
)
from .solver import (
    ConfigError,
    InstabilityError,
    MaterialParams,
    RunConfig,
    make_cauchy_data,
    manufactured_linear_solution,
    run,
)
from .vectorfields import (
    quadratic_pair_fields,
    quadratic_test_field,
    smooth_test_field,
    verify_commutators,
    verify_leibniz_N,
)

log = logging.getLogger(__name__)

CONFIG_SCHEMA = 1
RATIO_KEYS = ("ratio_41", "ratio_42", "ratio_43", "ratio_44", "x2_deficit", "dt2_deficit")

DEFAULTS = {
    "schema_version": CONFIG_SCHEMA,
    "seed": 7,
    "grid": {"half_width": 8.0, "points_per_axis": 65},
    "params": {"c1": 2.0, "c2": 1.0},
    "data": {"profile": "bump", "amplitude": 0.01, "radius": 2.0, "envelope": "poly"},
    "density": {"delta": 0.05, "radius": 2.0},
    "tensor": {"kind": "generic"},          # generic | null | zero
    "run": {"cfl": 0.5, "horizon": 2.0, "report_stride": 4, "k": 3, "dt_factor": 1.0},
    "gates": {"slope_margin": 0.1, "equivalence": [0.8, 1.2], "ratio_stability": 2.0,
              "null_bound": 4.0, "max_order": 1.8, "order_band": 0.2, "phase_tol": 0.01,
              "drift_tol": 1e-3, "exact_tol": 1e-12},
    "theorem1": {"levels": [65, 97], "report_strides": [4, 6]},
    "theorem2": {"k": 1, "report_stride": 2},
    "convergence": {"levels": [33, 65, 129], "half_width": 4.0, "width": 2.0, "horizon": 1.0,
                    "phase_points": 65, "phase_half_width": 4.0, "phase_horizon": 1.5},
    "commutators": {"levels": [33, 65, 129], "half_width": 2.2, "quadratic_levels": [9, 13, 17]},
    "controls": {"amplitude": 0.5, "cfl_multiple": 2.5},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides``."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        if user.get("schema_version", CONFIG_SCHEMA) != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema_version {user.get('schema_version')!r}")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


@dataclass
class Verdict:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# -- building blocks ----------------------------------------------------------

def build_tensor(kind: str, seed: int) -> np.ndarray | None:
    if kind == "generic":
        return random_symmetric_tensor(seed)
    if kind == "null":
        return make_null_tensor(seed)
    if kind == "zero":
        return None
    raise ConfigError(f"unknown tensor kind {kind!r}")


def build_run(cfg: dict, points: int | None = None, B=None, amplitude: float | None = None,
              dt_factor: float | None = None, k: int | None = None, stride: int | None = None,
              use_tensor: bool = True) -> RunConfig:
    g = make_grid(float(cfg["grid"]["half_width"]), int(points or cfg["grid"]["points_per_axis"]))
    params = MaterialParams(float(cfg["params"]["c1"]), float(cfg["params"]["c2"]))
    r = cfg["run"]
    k = int(k or r["k"])
    d = cfg["data"]
    data = make_cauchy_data(d["profile"], float(d["amplitude"] if amplitude is None else amplitude),
                            float(d["radius"]), g, max(k, 3), params, envelope=d["envelope"])
    dens = cfg["density"]
    try:
        density = DensityField(float(dens["delta"]), float(dens["radius"]), g) if dens["delta"] else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if B is None and use_tensor:
        B = build_tensor(cfg["tensor"]["kind"], int(cfg["seed"]))
    return RunConfig(g, params, data, B=B, density=density, cfl=float(r["cfl"]), horizon=float(r["horizon"]),
                     report_stride=int(stride or r["report_stride"]), k_report=k,
                     dt_factor=float(r["dt_factor"] if dt_factor is None else dt_factor))


def _series(reports, key):
    return [(rep.t, rep.row()[key]) for rep in reports]


def execute(rc: RunConfig, label: str = "") -> dict:
    """Run and summarise; instabilities are recorded, not raised."""
    t0 = time.time()
    out = {"label": label, "points": rc.grid.n, "eps_fit": rc.data.eps_measured,
           "delta_fit": float(np.abs(rc.rho_tilde).max()) if rc.rho_tilde is not None else 0.0,
           "aborted": False, "abort_reason": "", "reports": []}
    try:
        res = run(rc, progress=lambda rep: log.info("%s t=%.3f E%d=%.5g", label, rep.t, rc.k_report,
                                                    rep.E[rc.k_report]))
        reports = res.reports
        out.update(dt=res.dt, steps=res.steps, t_final=res.t_final,
                   band_relative=res.band_max / res.sup_initial if res.sup_initial else 0.0)
    except InstabilityError as exc:
        reports = exc.reports
        out.update(aborted=True, abort_reason=str(exc), abort_t=exc.t, abort_kind=type(exc).__name__)
    out["reports"] = reports
    out["seconds"] = time.time() - t0
    return out


def _ratio_maxima(reports) -> dict:
    return {key: max((rep.row()[key] for rep in reports), default=0.0) for key in RATIO_KEYS}


# -- tensor algebra ---------------------------------------------------------------

def _naive_flux(B, Gu, Gv):
    out = np.zeros((3, 3) + Gu.shape[2:])
    for i, j, k, l, m, n in np.ndindex(*B.shape):
        out[i, l] += B[i, j, k, l, m, n] * Gu[j, m] * Gv[k, n]
    return out


def _naive_tilde(B, Gu, Gv, Gw):
    out = np.zeros(Gu.shape[2:])
    for i, j, k, l, m, n in np.ndindex(*B.shape):
        out += B[i, j, k, l, m, n] * Gu[i, l] * Gv[j, m] * Gw[k, n]
    return out


def check_tensor(seed: int, null: bool = True, isotropic: bool = False, tol: float = 1e-10) -> dict:
    """Symmetrisation, null deficits on a fresh dense sampler, and contraction oracles."""
    rng = np.random.default_rng(seed)
    sym_def = symmetry_deficit(symmetrize(rng.standard_normal((3,) * 6)))
    B = make_null_tensor(seed, isotropic) if null else random_symmetric_tensor(seed, isotropic)
    fresh = SpherePairSampler.make(2000, 4000, seed=seed + 1000)
    rd, td = radial_null_deficit(B, fresh), transverse_null_deficit(B, fresh)
    Gu, Gv, Gw = rng.standard_normal((3, 3, 3, 4, 3, 2))
    flux_err = float(np.abs(quadratic_flux(B, Gu, Gv) - _naive_flux(B, Gu, Gv)).max())
    tilde_err = float(np.abs(n_tilde_contract(B, Gu, Gv, Gw) - _naive_tilde(B, Gu, Gv, Gw)).max())
    verdicts = [
        Verdict("symmetrize", sym_def == 0.0, f"deficit {sym_def:.3g}"),
        Verdict("contractions", max(flux_err, tilde_err) <= 1e-13,
                f"flux {flux_err:.2e}, cubic {tilde_err:.2e} vs 6-loop oracle"),
    ]
    if null:
        verdicts.append(Verdict("null deficits", rd <= tol and td <= tol,
                                f"radial {rd:.2e}, transverse {td:.2e} (tol {tol:g})"))
    return {"tensor": B, "symmetry_deficit": sym_def, "radial_deficit": rd, "transverse_deficit": td,
            "flux_error": flux_err, "cubic_error": tilde_err, "verdicts": verdicts}


# -- commutation identities ---------------------------------------------------------

def commutator_study(cfg: dict, levels=None) -> dict:
    """Refinement orders on smooth fields plus exactness on space-time quadratics."""
    c = cfg["commutators"]
    gates = cfg["gates"]
    levels = tuple(levels or c["levels"])
    qlev = tuple(c["quadratic_levels"])
    p = cfg["params"]
    seed = int(cfg["seed"])
    B_iso = make_null_tensor(seed, isotropic=True)
    rho_fn = lambda g: 0.05 * np.where(((g.x[0] + 0.2) ** 2 + g.x[1] ** 2 + g.x[2] ** 2) < 1.8**2,
                                       (1 - ((g.x[0] + 0.2) ** 2 + g.x[1] ** 2 + g.x[2] ** 2) / 1.8**2) ** 5, 0.0)
    lin_rho = lambda g: 0.1 + 0.02 * g.x[0] - 0.01 * g.x[2]
    fu, fv = quadratic_pair_fields()
    kw = dict(min_order=gates["max_order"], exact_tol=gates["exact_tol"])
    smooth = {
        "commutators": verify_commutators(smooth_test_field(), levels, c["half_width"],
                                          c1=p["c1"], c2=p["c2"], **kw),
        "leibniz": verify_leibniz_N(B_iso, smooth_test_field(), smooth_test_field(variant=1), rho_fn,
                                    levels, c["half_width"], **kw),
    }
    exact = {
        "commutators": verify_commutators(quadratic_test_field, qlev, 1.0, c1=p["c1"], c2=p["c2"], margin=3, **kw),
        "leibniz": verify_leibniz_N(B_iso, fu, fv, lin_rho, qlev, 1.0, margin=3, **kw),
    }
    smooth_ok = all(v["pass"] for group in smooth.values() for v in group.values())
    exact_ok = all(v["exact"] for group in exact.values() for v in group.values())
    worst = min((min(v["orders"]) for group in smooth.values() for v in group.values() if not v["exact"]),
                default=math.inf)
    worst_exact = max(max(v["residuals"]) for group in exact.values() for v in group.values())
    verdicts = [
        Verdict("commutation orders", smooth_ok, f"min observed order {worst:.3f} over levels {levels}"),
        Verdict("commutation exact", exact_ok, f"max residual {worst_exact:.2e} on quadratic fields"),
    ]
    return {"smooth": smooth, "exact": exact, "levels": list(levels), "verdicts": verdicts}


# -- solver verification ------------------------------------------------------------

def _packet(kind: str, params: MaterialParams, width: float, offset: float, wavelength=None, oblique=False):
    normal = (1.0, 1.0, 1.0) if oblique else (1.0, 0.0, 0.0)
    pol = None if kind == "pressure" else ((1.0, -1.0, 0.0) if oblique else (0.0, 1.0, 0.0))
    return manufactured_linear_solution(kind, params, normal, pol, width, offset, 1.0, wavelength)


def _packet_run(pk, n: int, half_width: float, horizon: float, params: MaterialParams):
    g = make_grid(half_width, n)
    rc = RunConfig(g, params, pk.cauchy(g), horizon=horizon, k_report=1, report_stride=10**9,
                   boundary=lambda t: pk.on_grid(t, g))
    return g, run(rc)


def convergence_study(cfg: dict, levels=None) -> dict:
    """L2 error of plane packets against the exact travelling solution."""
    c = cfg["convergence"]
    params = MaterialParams(cfg["params"]["c1"], cfg["params"]["c2"])
    levels = list(levels or c["levels"])
    out = {"levels": levels, "kinds": {}}
    for kind in ("shear", "pressure"):
        # oblique normal so the mixed grad-div stencils are exercised
        pk = _packet(kind, params, c["width"], -1.0, oblique=True)
        errs = []
        for n in levels:
            g, res = _packet_run(pk, n, c["half_width"], c["horizon"], params)
            errs.append(l2_norm(res.final - pk.on_grid(res.t_final, g), g))
        orders = [math.log2(a / b) for a, b in zip(errs[:-1], errs[1:])]
        out["kinds"][kind] = {"errors": errs, "orders": orders}
    band = cfg["gates"]["order_band"]
    ok = all(abs(o - 2.0) <= band for v in out["kinds"].values() for o in v["orders"])
    detail = "; ".join(f"{k} orders " + ", ".join(f"{o:.3f}" for o in v["orders"]) for k, v in out["kinds"].items())
    out["verdicts"] = [Verdict("manufactured convergence", ok, detail + f" (need 2.0 +- {band})")]
    return out


def phase_speed_study(cfg: dict) -> dict:
    """Fitted propagation speed of 20-points-per-wavelength packets."""
    c = cfg["convergence"]
    params = MaterialParams(cfg["params"]["c1"], cfg["params"]["c2"])
    g0 = make_grid(c["phase_half_width"], c["phase_points"])
    lam = 20 * g0.h
    out = {"wavelength": lam, "kinds": {}}
    for kind in ("shear", "pressure"):
        pk = _packet(kind, params, 2 * lam, -1.0, lam)
        g, res = _packet_run(pk, c["phase_points"], c["phase_half_width"], c["phase_horizon"], params)
        mid = g.n // 2
        line = g.interior_view(res.final)[:, :, mid, mid]
        x1 = g.axis_coords[g.interior[0]]
        d = np.asarray(pk.polarization)[:, None]

        def mismatch(speed):
            return float(np.sum((line - d * pk.profile(x1 - pk.offset - speed * res.t_final)[None]) ** 2))

        fit = minimize_scalar(mismatch, bounds=(0.9 * pk.c, 1.1 * pk.c), method="bounded",
                              options={"xatol": 1e-10})
        out["kinds"][kind] = {"speed": float(fit.x), "exact": pk.c, "relative_error": float(fit.x / pk.c - 1)}
    tol = cfg["gates"]["phase_tol"]
    ok = all(abs(v["relative_error"]) <= tol for v in out["kinds"].values())
    detail = ", ".join(f"{k} {100 * v['relative_error']:+.3f}%" for k, v in out["kinds"].items())
    out["verdicts"] = [Verdict("phase speed", ok, detail + f" at 20 points/wavelength (tol {100 * tol:g}%)")]
    return out


def linear_conservation(cfg: dict, points: int | None = None) -> dict:
    """Constant-density linear run of the default data: E_1 drift and boundary band."""
    overrides = {"density": {"delta": 0.0}, "tensor": {"kind": "zero"}}
    c2 = _merge(cfg, overrides)
    rc = build_run(c2, points=points, k=1, stride=2, use_tensor=False)
    res = execute(rc, "linear")
    E = [rep.E[1] for rep in res["reports"]]
    drift = max(abs(e / E[0] - 1) for e in E) if E and E[0] else 0.0
    tol = cfg["gates"]["drift_tol"]
    res["drift"] = drift
    res["verdicts"] = [
        Verdict("linear E1 drift", not res["aborted"] and drift < tol, f"max relative drift {drift:.2e} (tol {tol:g})"),
        Verdict("propagation sentinel", not res["aborted"],
                res["abort_reason"] or f"boundary band {res.get('band_relative', 0):.2e} of initial sup"),
    ]
    return res


# -- growth proxy and lemma ratios ---------------------------------------------------

def theorem1_proxy(cfg: dict, levels=None) -> dict:
    """Default nonlinear inhomogeneous runs at two resolutions."""
    t1 = cfg["theorem1"]
    levels = list(levels or t1["levels"])
    strides = list(t1["report_strides"])
    gates = cfg["gates"]
    runs = []
    for n, stride in zip(levels, strides):
        runs.append(execute(build_run(cfg, points=n, stride=stride), f"theorem1-{n}"))
    fine = runs[-1]
    k = int(cfg["run"]["k"])
    lo, hi = gates["equivalence"]
    verdicts = []
    out = {"levels": levels, "runs": runs}
    if fine["aborted"]:
        verdicts.append(Verdict("growth slope", False, f"run aborted: {fine['abort_reason']}"))
        slope = math.nan
    else:
        try:
            slope = growth_exponent_fit(_series(fine["reports"], f"E{k}"))
        except FitError as exc:
            slope = math.nan
            verdicts.append(Verdict("growth slope", False, str(exc)))
    bound = fine["eps_fit"] + fine["delta_fit"] + gates["slope_margin"]
    out.update(slope=slope, slope_bound=bound)
    if not verdicts:
        verdicts.append(Verdict("growth slope", slope <= bound,
                                f"E{k} slope {slope:.4f} <= eps {fine['eps_fit']:.4f} + delta {fine['delta_fit']:.4f}"
                                f" + {gates['slope_margin']:g} = {bound:.4f}"))
    eq = [rep.E_hat[k] / rep.E[k] for rep in fine["reports"] if rep.E[k] > 0]
    eq_ok = bool(eq) and min(eq) >= lo and max(eq) <= hi and not fine["aborted"]
    out["equivalence"] = [min(eq, default=math.nan), max(eq, default=math.nan)]
    verdicts.append(Verdict("modified-energy equivalence", eq_ok,
                            f"Ehat/E in [{out['equivalence'][0]:.4f}, {out['equivalence'][1]:.4f}] (need [{lo}, {hi}])"))
    out["verdicts"] = verdicts
    out["ratio_check"] = ratio_stability(runs, gates["ratio_stability"])
    return out


def ratio_stability(runs: list[dict], factor: float = 2.0) -> dict:
    """Time-maxima of every lemma ratio per run, and their spread across resolutions."""
    maxima = [_ratio_maxima(r["reports"]) for r in runs]
    finite = all(math.isfinite(v) for m in maxima for v in m.values())
    spread = {}
    for key in RATIO_KEYS:
        vals = [m[key] for m in maxima]
        lo, hi = min(vals), max(vals)
        spread[key] = math.inf if lo == 0 and hi > 0 else (1.0 if hi == 0 else hi / lo)
    ok = finite and all(s <= factor for s in spread.values()) and not any(r["aborted"] for r in runs)
    worst = max(spread, key=spread.get)
    verdict = Verdict("lemma ratio stability", ok,
                      f"worst spread {worst} {spread[worst]:.3f} across {[r['points'] for r in runs]} (limit {factor:g}x)")
    return {"maxima": maxima, "spread": spread, "verdicts": [verdict]}


# -- null vs generic -----------------------------------------------------------------

def theorem2_proxy(cfg: dict) -> dict:
    """Null vs generic tensor of equal norm, same data and density; E_1 boundedness."""
    t2 = cfg["theorem2"]
    gates = cfg["gates"]
    B_null, B_gen = matched_pair(int(cfg["seed"]))
    runs = {}
    for name, B in (("null", B_null), ("generic", B_gen)):
        runs[name] = execute(build_run(cfg, B=B, k=int(t2["k"]), stride=int(t2["report_stride"])), f"theorem2-{name}")
    ratio = {name: (math.inf if r["aborted"] else boundedness_check(_series(r["reports"], "E1")))
             for name, r in runs.items()}
    eq = [rep.E_hat[1] / rep.E[1] for r in runs.values() for rep in r["reports"] if rep.E[1] > 0]
    lo, hi = gates["equivalence"]
    bound = gates["null_bound"]
    ok = ratio["null"] <= ratio["generic"] and ratio["null"] <= bound
    verdicts = [
        Verdict("null-vs-generic boundedness", ok,
                f"E1 max/initial null {ratio['null']:.6f}, generic {ratio['generic']:.6f} (bound {bound:g})"),
        Verdict("modified-energy equivalence (pair)", bool(eq) and min(eq) >= lo and max(eq) <= hi,
                f"Ehat1/E1 in [{min(eq, default=math.nan):.4f}, {max(eq, default=math.nan):.4f}]"),
    ]
    return {"runs": runs, "ratio": ratio, "tensors": {"null": B_null, "generic": B_gen}, "verdicts": verdicts}


# -- negative controls ---------------------------------------------------------------

def negative_controls(cfg: dict, points: int | None = None) -> dict:
    """Large data must fail the growth gate or abort; a step past the CFL bound must abort.

    The large-amplitude run uses the growth proxy's finest grid and is held to the
    gate of the default-amplitude run there; a gate rebuilt from the large data's
    own size would exceed any slope the horizon can show.
    """
    ctrl = cfg["controls"]
    t1 = cfg["theorem1"]
    points = int(points or t1["levels"][-1])
    stride = int(t1["report_strides"][list(t1["levels"]).index(points)]) if points in t1["levels"] else None
    ref = build_run(cfg, points=points, stride=stride)
    bound = ref.data.eps_measured + (float(np.abs(ref.rho_tilde).max()) if ref.rho_tilde is not None else 0.0) \
        + cfg["gates"]["slope_margin"]
    big = execute(build_run(cfg, points=points, amplitude=float(ctrl["amplitude"]), stride=stride),
                  "control-amplitude")
    if big["aborted"]:
        big_detected, big_detail = True, f"aborted: {big['abort_reason']}"
    else:
        k = int(cfg["run"]["k"])
        try:
            slope = growth_exponent_fit(_series(big["reports"], f"E{k}"))
        except FitError as exc:
            slope = math.nan
        big_detected = not slope <= bound
        big_detail = f"slope {slope:.4f} vs default-run gate {bound:.4f} at {points}^3"
    # cfl_multiple is relative to the bound (cfl = 1), dt_factor to the configured cfl
    dt_factor = float(ctrl["cfl_multiple"]) / float(cfg["run"]["cfl"])
    cfl = execute(build_run(cfg, points=points, dt_factor=dt_factor, k=1, stride=10**6), "control-cfl")
    cfl_ok = cfl["aborted"] and cfl["abort_kind"] != "BoundaryContactError"
    verdicts = [
        Verdict("control: large amplitude detected", big_detected, big_detail),
        Verdict("control: over-CFL step aborts", cfl_ok,
                f"{ctrl['cfl_multiple']:g}x bound: " + (cfl["abort_reason"] or "run completed")),
    ]
    return {"amplitude": big, "cfl": cfl, "gate": bound, "points": points, "verdicts": verdicts}
