"""Projections, weights, the energy functionals and the lemma-ratio diagnostics.

All quantities are evaluated at the centre level of a :class:`Trajectory`.
``diagnose`` walks the Gamma-word tree once and accumulates everything a
report row needs; the small named functions below are conveniences on top.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import Grid, gradient, l2_norm, partial, potential_energy
from .material import CubicFormCache
from .vectorfields import (
    MAX_WORD_ORDER,
    Trajectory,
    iter_word_results,
    second_time_difference,
    time_derivative,
    wave_operator,
)

CSV_COLUMNS = ("t", "E1", "E2", "E3", "X2", "X3", "Etilde3", "Ehat3",
               "ratio_41", "ratio_42", "ratio_43", "ratio_44", "x2_deficit", "dt2_deficit")


# -- pointwise pieces -------------------------------------------------------

@lru_cache(maxsize=8)
def _unit_radial(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    r = grid.r
    near_origin = r < 0.5 * grid.h
    safe = np.where(near_origin, 1.0, r)
    n = np.where(near_origin, 0.0, grid.x / safe)
    return n, near_origin


def project(a: int, u: np.ndarray, grid: Grid) -> np.ndarray:
    """``P_1 u = (x/r)(x/r . u)``, ``P_2 u = u - P_1 u``; ``P_1 = 0`` where r < h/2.

    ``u`` may carry leading axes before the component axis.
    """
    if a not in (1, 2):
        raise ValueError(f"projection label must be 1 or 2, got {a}")
    n, _ = _unit_radial(grid)
    p1 = n * np.einsum("ixyz,...ixyz->...xyz", n, u)[..., None, :, :, :]
    return p1 if a == 1 else u - p1


def japanese(s) -> np.ndarray:
    return np.sqrt(1.0 + np.asarray(s, dtype=float) ** 2)


def weight_field(a: int, t: float, grid: Grid, params) -> np.ndarray:
    """``<c_a t - r>`` on the grid (a=1 pairs with c1, a=2 with c2)."""
    c = params.c1 if a == 1 else params.c2
    return japanese(c * t - grid.r)


def safe_ratio(num: float, den: float) -> float:
    """Quotient with the 0/0 -> 0 convention."""
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def _interior(f, grid):
    return f[(Ellipsis,) + grid.interior]


def _sup(f, grid, mask=None):
    """Sup over interior nodes of a non-negative scalar field (optionally masked)."""
    fi = _interior(f, grid)
    if mask is not None:
        fi = np.where(_interior(mask, grid), fi, 0.0)
    return float(fi.max()) if fi.size else 0.0


def _pnorm(v):
    """Pointwise Euclidean norm over every axis but the trailing three."""
    return np.sqrt(np.sum(v.reshape((-1,) + v.shape[-3:]) ** 2, axis=0))


def linear_energy(ut: np.ndarray, u: np.ndarray, c1: float, c2: float, grid: Grid) -> float:
    """``1/2 int |u_t|^2`` plus the discrete potential matching the solver's operator.

    ``ut`` may also be a precomputed kinetic density ``|u_t|^2`` (scalar field).
    """
    kin_density = ut if ut.ndim == 3 else np.sum(ut * ut, axis=0)
    kin = 0.5 * float(np.sum(_interior(kin_density, grid))) * grid.h**3
    return kin + potential_energy(u, c1, c2, grid)


def kinetic_density(traj: Trajectory) -> np.ndarray:
    """``D_+ u . D_- u`` at the window centre.

    A second-order stand-in for ``|u_t|^2`` whose integral, together with the
    summation-by-parts potential, is exactly invariant under the leapfrog for
    linear constant-density runs.  The centred ``|D_0 u|^2`` drifts by O(dt^2).
    """
    s, c = traj.states, traj.halfwidth
    fwd = (s[c + 1] - s[c]) / traj.dt
    bwd = (s[c] - s[c - 1]) / traj.dt
    return np.sum(fwd * bwd, axis=0)


# -- report -------------------------------------------------------------------

@dataclass
class EnergyReport:
    t: float
    E: dict = field(default_factory=dict)        # {k: E_k}
    X: dict = field(default_factory=dict)        # {k: X_k}
    E_tilde: dict = field(default_factory=dict)
    E_hat: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)   # ratio_41 .. ratio_44
    x2_deficit: float = 0.0
    dt2_deficit: float = 0.0
    flags: list = field(default_factory=list)

    def row(self) -> dict:
        nan = float("nan")
        return {
            "t": self.t,
            "E1": self.E.get(1, nan), "E2": self.E.get(2, nan), "E3": self.E.get(3, nan),
            "X2": self.X.get(2, nan), "X3": self.X.get(3, nan),
            "Etilde3": self.E_tilde.get(3, nan), "Ehat3": self.E_hat.get(3, nan),
            **{f"ratio_4{i}": self.ratios.get(f"ratio_4{i}", nan) for i in (1, 2, 3, 4)},
            "x2_deficit": self.x2_deficit, "dt2_deficit": self.dt2_deficit,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("E", "X", "E_tilde", "E_hat"):
            d[key] = {str(k): v for k, v in d[key].items()}
        return d

    def is_finite(self) -> bool:
        vals = [v for v in self.row().values() if not (isinstance(v, float) and math.isnan(v))]
        return all(math.isfinite(v) for v in vals)


def required_halfwidth(k: int) -> int:
    """Time levels needed on each side of the evaluation time for ``diagnose(k)``."""
    return k


def diagnose(traj: Trajectory, k: int, params, B: np.ndarray | None = None,
             rho_tilde: np.ndarray | None = None) -> EnergyReport:
    """Every functional and lemma ratio for orders ``1..k`` at the window centre.

    ``E_j`` sums words of length ``<= j-1``; ``X_j`` sums words of length
    ``<= j-2``.  ``E_tilde``/``E_hat`` are reported at order ``k`` only.
    """
    if not 1 <= k <= MAX_WORD_ORDER + 1:
        raise ValueError(f"k must lie in 1..{MAX_WORD_ORDER + 1}, got {k}")
    grid = traj.grid
    c1, c2 = params.c1, params.c2
    t = traj.t_center
    traj = traj.trim(required_halfwidth(k))
    nl = B is not None and np.any(B)
    rt = None if rho_tilde is None or not np.any(rho_tilde) else rho_tilde

    r_w = japanese(grid.r)
    _, origin = _unit_radial(grid)
    off_origin = ~origin
    w = {a: weight_field(a, t, grid, params) for a in (1, 2)}

    E_len = np.zeros(k)          # contribution by word length
    X_len = np.zeros(max(k - 1, 1))
    cubic = 0.0
    dens = 0.0
    dt2_sum = 0.0
    sup41 = 0.0
    sup42 = 0.0
    sup43 = {1: 0.0, 2: 0.0}
    sup44 = {1: 0.0, 2: 0.0}
    cache = None
    u_c = traj.center
    if nl:
        cache = CubicFormCache(B, gradient(u_c, grid), grid)

    for word, res in iter_word_results(traj, k - 1, 1):
        L = len(word)
        v = res.center
        vt = time_derivative(res).center
        kin = kinetic_density(res)
        G = gradient(v, grid)
        E_len[L] += linear_energy(kin, v, c1, c2, grid)
        if cache is not None:
            cubic += cache.integral(G)
        if rt is not None:
            dens += float(np.sum(_interior(rt * kin, grid)) * grid.h**3)
        if L <= k - 2:
            sup41 = max(sup41, _sup(np.sqrt(r_w) * _pnorm(v), grid))
            first = np.concatenate([vt[None], np.moveaxis(G, 1, 0)])  # (beta, comp, ...)
            vt_grad = gradient(vt, grid)
            # D2[beta, l] = d_beta d_l Gamma u, beta = t, 1, 2, 3
            D2 = np.concatenate([np.moveaxis(vt_grad, 1, 0)[None],
                                 np.stack([np.moveaxis(partial(G, b, grid), 1, 0) for b in range(3)])])
            for a in (1, 2):
                wp = _interior(w[a] * project(a, D2, grid), grid)
                X_len[L] += float(np.sum(np.sqrt(np.sum(wp * wp, axis=(2, 3, 4, 5)) * grid.h**3)))
            vtt = second_time_difference(res).center
            for a in (1, 2):
                dt2_sum += l2_norm(w[a] * project(a, vtt, grid), grid)
        if k >= 2 and L <= max(k - 3, 0):
            # at k < 3 this runs on the empty word only
            sup42 = max(sup42, _sup(r_w * _pnorm(first), grid))
            for a in (1, 2):
                pf = project(a, first, grid)
                sup43[a] = max(sup43[a], _sup(r_w * np.sqrt(w[a]) * _pnorm(pf), grid, off_origin))
        if k >= 2 and L == 0:
            # weighted d grad u, clamped to the empty word at desk scale
            dgrad = D2
            for a in (1, 2):
                sup44[a] = max(sup44[a], _sup(r_w * w[a] * _pnorm(project(a, dgrad, grid)), grid, off_origin))

    rep = EnergyReport(t=t)
    for j in range(1, k + 1):
        rep.E[j] = float(np.sum(E_len[:j]))
    for j in range(2, k + 1):
        rep.X[j] = float(np.sum(X_len[: j - 1]))
    rep.E_tilde[k] = rep.E[k] + cubic
    rep.E_hat[k] = rep.E_tilde[k] + dens

    Ek = rep.E[k]
    if min(rep.E.values()) < 0:
        # D+ . D- kinetic term is indefinite only past the stability limit
        rep.flags.append("negative energy")
    sE = math.sqrt(max(Ek, 0.0))
    Xk = rep.X.get(k, 0.0)
    rep.ratios["ratio_41"] = safe_ratio(sup41, sE) if k >= 2 else 0.0
    rep.ratios["ratio_42"] = safe_ratio(sup42, sE)
    rep.ratios["ratio_43"] = safe_ratio(max(sup43.values()), sE + Xk)
    rep.ratios["ratio_44"] = safe_ratio(max(sup44.values()), Xk)
    if k < 4:
        rep.flags.append("ratio_44 evaluated on |alpha| = 0 only")
    if k < 3:
        rep.flags.append("ratio_42/43 evaluated on |alpha| = 0 only")

    # X2 lemma: X_2 / (E_2^(1/2) + t ||L u||)
    if k >= 2:
        Lu = wave_operator(traj.trim(1), c1, c2).center
        den = math.sqrt(max(rep.E[2], 0.0)) + t * l2_norm(Lu, grid)
        rep.x2_deficit = safe_ratio(rep.X[2], den)
        rep.dt2_deficit = safe_ratio(dt2_sum, sE)
    for name, val in list(rep.ratios.items()) + [("x2_deficit", rep.x2_deficit), ("dt2_deficit", rep.dt2_deficit)]:
        if val == 0.0 and Ek == 0.0:
            rep.flags.append(f"{name}: 0/0")
    return rep


# -- single-quantity conveniences -----------------------------------------------

def energy_E(k, traj, params) -> float:
    return diagnose(traj, k, params).E[k]


def energy_X(k, traj, params) -> float:
    if k < 2:
        raise ValueError("X_k needs k >= 2")
    return diagnose(traj, k, params).X[k]


def energy_E_tilde(k, traj, B, params) -> float:
    return diagnose(traj, k, params, B).E_tilde[k]


def energy_E_hat(k, traj, B, rho_tilde, params) -> float:
    return diagnose(traj, k, params, B, rho_tilde).E_hat[k]


def sobolev_ratio_report(k, traj, params) -> dict:
    if k < 2:
        raise ValueError("no admissible word for k < 2")
    return dict(diagnose(traj, k, params).ratios)


def lemma_X2_check(traj, params) -> float:
    return diagnose(traj, 2, params).x2_deficit


def lemma_dt2_check(k, traj, params) -> float:
    return diagnose(traj, k, params).dt2_deficit


def energy_X_bruteforce(k: int, traj: Trajectory, params) -> float:
    """Term-by-term X_k via independent word application (slow test oracle)."""
    from .vectorfields import apply_word, enumerate_words

    grid = traj.grid
    t = traj.t_center
    total = 0.0
    for word in enumerate_words(k - 1):
        res = apply_word(word, traj.trim(len([c for c in word if c in ("dt", "S")]) + 1))
        v = res.trim(1)
        for a in (1, 2):
            wa = weight_field(a, t, grid, params)
            for beta in range(4):
                for l in range(3):
                    if beta == 0:
                        q = partial(time_derivative(v).center, l, grid)
                    else:
                        q = partial(partial(v.center, l, grid), beta - 1, grid)
                    total += l2_norm(wa * project(a, q, grid), grid)
    return total


# -- growth laws ------------------------------------------------------------------

class FitError(ValueError):
    pass


def growth_exponent_fit(series) -> float:
    """Least-squares slope of log E against log <t> over the second half of the series."""
    data = np.asarray(series, dtype=float)
    if data.ndim != 2 or data.shape[0] < 8:
        raise FitError(f"growth fit needs at least 8 samples, got {len(data)}")
    tail = data[len(data) // 2:]
    x = np.log(japanese(tail[:, 0]))
    y = np.log(tail[:, 1])
    if not np.all(np.isfinite(y)):
        raise FitError("energies must be positive and finite")
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def boundedness_check(series) -> float:
    """``max_t E(t) / E(t_ref)`` with ``t_ref`` the first sample after t = 0."""
    data = np.asarray(series, dtype=float)
    if data.size == 0:
        return 1.0
    ref_idx = 1 if data[0, 0] == 0.0 and len(data) > 1 else 0
    ref = data[ref_idx, 1]
    if ref == 0.0:
        return 1.0 if np.all(data[:, 1] == 0.0) else math.inf
    return float(np.max(data[ref_idx:, 1]) / ref)


@dataclass(frozen=True)
class TheoremTargets:
    M: float
    eps: float
    delta: float
    k: int

    def __post_init__(self):
        if self.eps > self.M:
            raise ValueError("eps must not exceed M")
        if not 0 <= self.delta < 0.5:
            raise ValueError("delta must lie in [0, 1/2)")
        if self.k < 1:
            raise ValueError("k must be positive")
