"""Leapfrog integration of rho(x) u_tt = A u + N(u, u) on a truncated box."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .analysis import EnergyReport, diagnose, required_halfwidth
from .grid import Grid, check_speeds, elastic_operator, refresh_ghosts, sup_norm
from .material import DensityField, apply_N
from .vectorfields import Trajectory, h_lambda_norm

CHECKPOINT_SCHEMA = 1
PROFILES = ("bump", "shear_packet", "pressure_packet")


class ConfigError(ValueError):
    pass


class InstabilityError(RuntimeError):
    """Run aborted by a sentinel; carries the reports gathered so far."""

    def __init__(self, message: str, step: int = -1, t: float = float("nan"), reports=None):
        super().__init__(message)
        self.step = step
        self.t = t
        self.reports = list(reports or [])


class BoundaryContactError(InstabilityError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    c1: float = 2.0
    c2: float = 1.0

    def __post_init__(self):
        try:
            check_speeds(self.c1, self.c2)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


# -- profiles -------------------------------------------------------------------

def smooth_bump(s):
    """``exp(1 - 1/(1 - s^2))`` for |s| < 1, else 0; equals 1 at s = 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


def smooth_bump_prime(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1.0
    sm = s[m]
    out[m] = np.exp(1.0 - 1.0 / (1.0 - sm**2)) * (-2.0 * sm / (1.0 - sm**2) ** 2)
    return out


def poly_bump(s, power: int = 6):
    """``(1 - s^2)^power`` for |s| < 1, else 0 (C^{power-1})."""
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1.0, (1.0 - np.minimum(s * s, 1.0)) ** power, 0.0)


def poly_bump_prime(s, power: int = 6):
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1.0, -2.0 * power * s * (1.0 - np.minimum(s * s, 1.0)) ** (power - 1), 0.0)


ENVELOPES = ("poly", "exp")
DATA_POWER = 4


def _envelope(kind: str, s):
    if kind == "poly":
        return poly_bump(s, DATA_POWER), poly_bump_prime(s, DATA_POWER)
    if kind == "exp":
        return smooth_bump(s), smooth_bump_prime(s)
    raise ConfigError(f"unknown envelope {kind!r}; choose from {ENVELOPES}")


@dataclass
class CauchyData:
    u0: np.ndarray
    u1: np.ndarray
    support_radius: float
    eps_measured: float
    profile: str = "bump"
    amplitude: float = 0.0


def make_cauchy_data(profile: str, amplitude: float, R0: float, grid: Grid, k: int = 3,
                     params: MaterialParams | None = None, margin: float | None = None,
                     wavelength: float | None = None, envelope: str = "poly") -> CauchyData:
    """Compactly supported data inside the ball of radius ``R0``.

    The envelope ``phi`` is ``(1 - s^2)^4`` (``envelope="poly"``) or the
    C-infinity ``exp(1 - 1/(1 - s^2))`` (``envelope="exp"``).
    ``bump``: ``a d phi(r/R0)`` with ``d = (1,1,1)/sqrt 3`` and zero velocity.
    ``shear_packet`` / ``pressure_packet``: a carrier ``cos(2 pi x1 / wavelength)``
    under the same envelope, polarised along e2 / e1, with the velocity of a
    right-moving plane wave ``u1 = -c d_1 u0`` (c = c2 / c1).
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {PROFILES}")
    params = params or MaterialParams()
    margin = 4 * grid.h if margin is None else margin
    if R0 <= 0 or R0 + margin >= grid.half_width:
        raise ConfigError(f"support radius {R0} + margin {margin} must be < half width {grid.half_width}")
    x = grid.x
    s = grid.r / R0
    env, env_prime = _envelope(envelope, s)
    if profile == "bump":
        d = np.ones(3) / math.sqrt(3.0)
        u0 = amplitude * env[None] * d[:, None, None, None]
        u1 = np.zeros_like(u0)
    else:
        lam = R0 if wavelength is None else wavelength
        kap = 2.0 * math.pi / lam
        shear = profile == "shear_packet"
        d = np.array([0.0, 1.0, 0.0]) if shear else np.array([1.0, 0.0, 0.0])
        c = params.c2 if shear else params.c1
        carrier = np.cos(kap * x[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            ds_dx1 = np.where(grid.r > 0, x[0] / (grid.r * R0), 0.0)
        d1 = env_prime * ds_dx1 * carrier - env * kap * np.sin(kap * x[0])
        u0 = amplitude * (env * carrier)[None] * d[:, None, None, None]
        u1 = -c * amplitude * d1[None] * d[:, None, None, None]
    refresh_ghosts(u0, grid)
    refresh_ghosts(u1, grid)
    eps = h_lambda_norm(u0, u1, max(k - 2, 1), grid)
    return CauchyData(u0, u1, R0, eps, profile, amplitude)


# -- manufactured plane packets ---------------------------------------------------

@dataclass(frozen=True)
class PlanePacket:
    """``u(t, x) = a d f(x.n - s0 - c t)``, ``f(s) = phi(s/w) cos(2 pi s / lam)``.

    ``phi`` is the polynomial bump ``(1 - s^2)^6``: compactly supported and
    smooth enough (C^5) for clean second-order refinement studies.
    """

    kind: str
    c: float
    normal: tuple
    polarization: tuple
    width: float = 1.0
    offset: float = 0.0
    amplitude: float = 1.0
    wavelength: float | None = None

    def profile(self, s):
        f = poly_bump(s / self.width)
        if self.wavelength:
            f = f * np.cos(2.0 * math.pi * s / self.wavelength)
        return f

    def profile_prime(self, s):
        fp = poly_bump_prime(s / self.width) / self.width
        if self.wavelength:
            kap = 2.0 * math.pi / self.wavelength
            return fp * np.cos(kap * s) - poly_bump(s / self.width) * kap * np.sin(kap * s)
        return fp

    def _s(self, t, x1, x2, x3):
        n = self.normal
        return n[0] * x1 + n[1] * x2 + n[2] * x3 - self.offset - self.c * t

    def __call__(self, t, x1, x2, x3):
        f = self.amplitude * self.profile(self._s(t, x1, x2, x3))
        return np.stack([di * f for di in self.polarization])

    def velocity(self, t, x1, x2, x3):
        f = -self.c * self.amplitude * self.profile_prime(self._s(t, x1, x2, x3))
        return np.stack([di * f for di in self.polarization])

    def on_grid(self, t: float, grid: Grid) -> np.ndarray:
        x = grid.x
        return np.asarray(self(t, x[0], x[1], x[2]), dtype=float)

    def cauchy(self, grid: Grid) -> CauchyData:
        x = grid.x
        u0 = self.on_grid(0.0, grid)
        u1 = np.asarray(self.velocity(0.0, x[0], x[1], x[2]), dtype=float)
        return CauchyData(u0, u1, math.inf, float("nan"), f"{self.kind}_plane", self.amplitude)


def manufactured_linear_solution(kind: str, params: MaterialParams, normal=(1.0, 0.0, 0.0),
                                 polarization=None, width: float = 1.0, offset: float = 0.0,
                                 amplitude: float = 1.0, wavelength: float | None = None) -> PlanePacket:
    """Exact travelling solution of the constant-density linear system."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    if kind == "pressure":
        d = n if polarization is None else np.asarray(polarization, dtype=float)
        c = params.c1
        if np.linalg.norm(np.cross(d, n)) > 1e-12:
            raise ValueError("pressure packet needs polarisation parallel to the normal")
    elif kind == "shear":
        if polarization is None:
            raise ValueError("shear packet needs a polarisation orthogonal to the normal")
        d = np.asarray(polarization, dtype=float)
        c = params.c2
        if abs(float(d @ n)) > 1e-12:
            raise ValueError("shear packet needs polarisation orthogonal to the normal")
    else:
        raise ValueError(f"kind must be 'shear' or 'pressure', got {kind!r}")
    d = d / np.linalg.norm(d)
    return PlanePacket(kind, c, tuple(n), tuple(d), width, offset, amplitude, wavelength)


# -- time stepping ------------------------------------------------------------------

@dataclass
class RunConfig:
    grid: Grid
    params: MaterialParams
    data: CauchyData
    B: np.ndarray | None = None
    density: DensityField | None = None
    cfl: float = 0.5
    horizon: float = 2.0
    report_stride: int = 4
    k_report: int = 3
    dt_factor: float = 1.0            # >1 only for deliberate instability probes
    boundary: Callable[[float], np.ndarray] | None = None  # analytic ghost values at time t
    blowup_factor: float = 1e3
    band_tol: float = 1e-6            # relative to the initial sup norm
    band_width: int = 2
    max_reports: int | None = None

    def __post_init__(self):
        if not 0 < self.cfl < 1:
            raise ConfigError(f"cfl must lie in (0, 1), got {self.cfl}")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.report_stride < 1:
            raise ConfigError("report_stride must be >= 1")
        if not 1 <= self.k_report <= 3:
            raise ConfigError("k_report must be 1, 2 or 3")
        if self.density is not None and self.density.grid != self.grid:
            raise ConfigError("density lives on a different grid")
        if self.boundary is None:
            limit = self.horizon_limit()
            if self.horizon > limit + 1e-12:
                raise ConfigError(f"horizon {self.horizon} exceeds the no-contact bound {limit:.4f}")

    def horizon_limit(self) -> float:
        rr = self.density.radius if self.density is not None and self.density.delta > 0 else 0.0
        R = max(self.data.support_radius, rr)
        return (self.grid.half_width - R - 2 * self.grid.h) / self.params.c1

    @property
    def rho(self) -> np.ndarray | None:
        return None if self.density is None or self.density.delta == 0 else self.density.rho

    @property
    def rho_tilde(self) -> np.ndarray | None:
        return None if self.density is None or self.density.delta == 0 else self.density.rho_tilde

    @property
    def nonlinear(self) -> bool:
        return self.B is not None and bool(np.any(self.B))


def cfl_dt(grid: Grid, params: MaterialParams, rho_min: float = 1.0, cfl: float = 0.5) -> float:
    """``cfl h sqrt(min rho) / (c1 sqrt 3)``; the explicit scheme is stable for cfl < 1."""
    return cfl * grid.h * math.sqrt(rho_min) / (params.c1 * math.sqrt(3.0))


def _acceleration(u: np.ndarray, cfg: RunConfig, rho: np.ndarray | None) -> np.ndarray:
    acc = elastic_operator(u, cfg.params.c1, cfg.params.c2, cfg.grid)
    if cfg.nonlinear:
        acc += apply_N(cfg.B, u, u, cfg.grid)
    if rho is not None:
        acc /= rho
    return acc


def _fix_ghosts(u: np.ndarray, t: float, cfg: RunConfig) -> np.ndarray:
    return refresh_ghosts(u, cfg.grid, None if cfg.boundary is None else cfg.boundary(t))


def step(prev: np.ndarray, curr: np.ndarray, t: float, dt: float, cfg: RunConfig,
         rho: np.ndarray | None = None) -> np.ndarray:
    """Leapfrog: ``2 curr - prev + dt^2 (A curr + N(curr, curr)) / rho``."""
    nxt = _acceleration(curr, cfg, rho)
    nxt *= dt * dt
    nxt += 2.0 * curr
    nxt -= prev
    return _fix_ghosts(nxt, t + dt, cfg)


def first_step(u0: np.ndarray, u1: np.ndarray, dt: float, cfg: RunConfig,
               rho: np.ndarray | None = None) -> np.ndarray:
    """Taylor start ``u0 + dt u1 + dt^2/2 (A u0 + N(u0, u0)) / rho``."""
    out = u0 + dt * u1 + 0.5 * dt * dt * _acceleration(u0, cfg, rho)
    return _fix_ghosts(out, dt, cfg)


@dataclass
class RunResult:
    reports: list[EnergyReport]
    window: Trajectory
    steps: int
    dt: float
    t_final: float
    band_max: float = 0.0
    sup_initial: float = 0.0
    history: list = field(default_factory=list)   # (t, sup norm) per step

    @property
    def final(self) -> np.ndarray:
        return self.window.states[-1]


def _sentinels(u: np.ndarray, n: int, t: float, cfg: RunConfig, sup0: float, reports) -> tuple[float, float]:
    if not np.all(np.isfinite(u)):
        raise InstabilityError(f"non-finite values at step {n} (t={t:.4f})", n, t, reports)
    sup = sup_norm(u, cfg.grid)
    if sup > cfg.blowup_factor * max(sup0, 1e-300) and sup0 > 0:
        raise InstabilityError(f"sup norm grew by {sup / sup0:.3g} at step {n} (t={t:.4f})", n, t, reports)
    band = 0.0
    if cfg.boundary is None:
        ui = cfg.grid.interior_view(u)
        mag = np.sqrt(np.sum(ui * ui, axis=0))
        band = float(mag[cfg.grid.band_mask(cfg.band_width)].max())
        if band > cfg.band_tol * sup0:
            raise BoundaryContactError(
                f"field {band:.3g} near the boundary at step {n} (t={t:.4f}), limit {cfg.band_tol * sup0:.3g}",
                n, t, reports)
    return sup, band


def run(cfg: RunConfig, progress: Callable[[EnergyReport], None] | None = None) -> RunResult:
    """Integrate to the horizon, emitting a report every ``report_stride`` steps.

    Reports are evaluated at the centre of a sliding window of
    ``2m + 1`` levels (m = k_report), so they lag the newest level by m steps.
    """
    g = cfg.grid
    rho = cfg.rho
    rho_min = 1.0 if rho is None else float(rho.min())
    dt = cfl_dt(g, cfg.params, rho_min, cfg.cfl) * cfg.dt_factor
    nsteps = int(math.floor(cfg.horizon / dt + 1e-9))
    m = required_halfwidth(cfg.k_report)
    if nsteps < 2 * m:
        raise ConfigError(f"horizon too short for a k={cfg.k_report} report ({nsteps} steps)")

    u0 = _fix_ghosts(cfg.data.u0.copy(), 0.0, cfg)
    sup0 = sup_norm(u0, g) if sup_norm(u0, g) > 0 else sup_norm(cfg.data.u1, g) * dt
    window: deque = deque(maxlen=2 * m + 1)
    window.append(u0)
    reports: list[EnergyReport] = []
    history = [(0.0, sup_norm(u0, g))]
    band_max = 0.0
    prev, curr = u0, first_step(u0, cfg.data.u1, dt, cfg, rho)
    rt = cfg.rho_tilde
    for n in range(1, nsteps + 1):
        if n > 1:
            prev, curr = curr, step(prev, curr, (n - 1) * dt, dt, cfg, rho)
        t = n * dt
        sup, band = _sentinels(curr, n, t, cfg, sup0, reports)
        band_max = max(band_max, band)
        history.append((t, sup))
        window.append(curr)
        c = n - m
        if n >= 2 * m and (c - m) % cfg.report_stride == 0:
            if cfg.max_reports is None or len(reports) < cfg.max_reports:
                traj = Trajectory(g, (n - 2 * m) * dt, dt, np.stack(window))
                rep = diagnose(traj, cfg.k_report, cfg.params, cfg.B, rt)
                if not rep.is_finite():
                    raise InstabilityError(f"non-finite diagnostics at t={rep.t:.4f}", n, t, reports)
                if "negative energy" in rep.flags:
                    raise InstabilityError(f"negative energy at t={rep.t:.4f}", n, t, reports)
                reports.append(rep)
                if progress is not None:
                    progress(rep)
    traj = Trajectory(g, (nsteps - len(window) + 1) * dt, dt, np.stack(window))
    return RunResult(reports, traj, nsteps, dt, nsteps * dt, band_max, sup0, history)


# -- checkpoints ----------------------------------------------------------------------

def save_checkpoint(directory, traj: Trajectory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {
        "schema_version": CHECKPOINT_SCHEMA,
        "grid": {"half_width": traj.grid.half_width, "points_per_axis": traj.grid.n, "ghost_layers": traj.grid.ghost},
        "t0": traj.t0,
        "dt": traj.dt,
        "levels": [f"level_{i:03d}.npy" for i in range(traj.nlev)],
    }
    for i, name in enumerate(header["levels"]):
        np.save(d / name, traj.states[i])
    (d / "header.json").write_text(json.dumps(header, indent=2))
    return d


def load_checkpoint(directory) -> Trajectory:
    d = Path(directory)
    header = json.loads((d / "header.json").read_text())
    if header.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"unsupported checkpoint schema {header.get('schema_version')}")
    gs = header["grid"]
    grid = Grid(float(gs["half_width"]), int(gs["points_per_axis"]), int(gs["ghost_layers"]))
    states = np.stack([np.load(d / name) for name in header["levels"]])
    if states.shape[-3:] != grid.shape:
        raise ConfigError("checkpoint arrays do not match the grid in the header")
    return Trajectory(grid, float(header["t0"]), float(header["dt"]), states)
