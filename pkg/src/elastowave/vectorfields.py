"""Commuting vector fields: d_t, d_1..d_3, rotations Omega~_l = Omega_l I + U_l, scaling S~.

A word is a tuple of letters; ``("O3", "dt")`` means ``Omega~_3 d_t u``: the
rightmost letter acts first.  Temporal letters (``dt``, ``S``) consume one
time level on each side of a :class:`Trajectory`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .grid import Grid, elastic_operator, l2_norm, partial

LETTERS = ("dt", "d1", "d2", "d3", "O1", "O2", "O3", "S")
TEMPORAL = frozenset({"dt", "S"})
MAX_WORD_ORDER = 2
ROUNDOFF_ULPS = 8

U = np.array([
    [[0, 0, 0], [0, 0, 1], [0, -1, 0]],
    [[0, 0, -1], [0, 0, 0], [1, 0, 0]],
    [[0, 1, 0], [-1, 0, 0], [0, 0, 0]],
], dtype=float)


class WindowError(ValueError):
    pass


@dataclass
class Trajectory:
    """Equally spaced time levels ``t0 + i dt`` of a vector (or scalar) field."""

    grid: Grid
    t0: float
    dt: float
    states: np.ndarray  # (nlev, 3, N, N, N) or (nlev, N, N, N)

    @property
    def nlev(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nlev)

    @property
    def halfwidth(self) -> int:
        return (self.nlev - 1) // 2

    @property
    def t_center(self) -> float:
        return self.t0 + self.dt * self.halfwidth

    @property
    def center(self) -> np.ndarray:
        return self.states[self.halfwidth]

    def trim(self, halfwidth: int) -> "Trajectory":
        c = self.halfwidth
        if halfwidth > c:
            raise WindowError(f"window half-width {c} < required {halfwidth}")
        if halfwidth == c:
            return self
        return Trajectory(self.grid, self.t0 + (c - halfwidth) * self.dt, self.dt,
                          self.states[c - halfwidth: c + halfwidth + 1])

    def with_states(self, states: np.ndarray, shrink: int = 0) -> "Trajectory":
        return Trajectory(self.grid, self.t0 + shrink * self.dt, self.dt, states)

    @classmethod
    def sample(cls, func: Callable, grid: Grid, t_center: float, dt: float, halfwidth: int) -> "Trajectory":
        """Sample ``func(t, x1, x2, x3)`` on ``2*halfwidth + 1`` levels centred at ``t_center``."""
        times = t_center + dt * np.arange(-halfwidth, halfwidth + 1)
        x = grid.x
        states = np.stack([np.asarray(func(t, x[0], x[1], x[2]), dtype=float) for t in times])
        return cls(grid, float(times[0]), dt, states)


def temporal_order(word) -> int:
    return sum(1 for w in word if w in TEMPORAL)


# -- spatial pieces --------------------------------------------------------

def rotation(f: np.ndarray, l: int, grid: Grid) -> np.ndarray:
    """``Omega_l f = (x ^ grad)_l f`` applied componentwise; ``l`` in 0..2."""
    a, b = (l + 1) % 3, (l + 2) % 3
    x = grid.x
    return x[a] * partial(f, b, grid) - x[b] * partial(f, a, grid)


def mix_components(u: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``(M u)^i`` on the component axis (axis -4)."""
    return np.einsum("ij,...jxyz->...ixyz", M, u)


def rotation_tilde(u: np.ndarray, l: int, grid: Grid) -> np.ndarray:
    return rotation(u, l, grid) + mix_components(u, U[l])


def radial_derivative(f: np.ndarray, grid: Grid) -> np.ndarray:
    """``r d_r f = x . grad f`` (no division by r)."""
    x = grid.x
    out = x[0] * partial(f, 0, grid)
    out += x[1] * partial(f, 1, grid)
    out += x[2] * partial(f, 2, grid)
    return out


# -- generators on trajectories --------------------------------------------

def time_derivative(traj: Trajectory) -> Trajectory:
    if traj.nlev < 3:
        raise WindowError("d_t needs at least 3 time levels")
    s = traj.states
    return traj.with_states((s[2:] - s[:-2]) * (0.5 / traj.dt), shrink=1)


def second_time_difference(traj: Trajectory) -> Trajectory:
    """Compact ``(u(t+dt) - 2u(t) + u(t-dt)) / dt^2`` (the leapfrog's own d_t^2)."""
    if traj.nlev < 3:
        raise WindowError("d_t^2 needs at least 3 time levels")
    s = traj.states
    return traj.with_states((s[2:] - 2.0 * s[1:-1] + s[:-2]) / traj.dt**2, shrink=1)


def _time_column(traj: Trajectory) -> np.ndarray:
    return traj.times.reshape((-1,) + (1,) * (traj.states.ndim - 1))


def apply_generator(letter: str, traj: Trajectory, vector: bool = True) -> Trajectory:
    """Apply one generator to every admissible level of ``traj``.

    Scalar trajectories (``vector=False``) get the rotations without the
    component-mixing matrix.
    """
    g = traj.grid
    if letter == "dt":
        return time_derivative(traj)
    if letter in ("d1", "d2", "d3"):
        return traj.with_states(partial(traj.states, int(letter[1]) - 1, g))
    if letter in ("O1", "O2", "O3"):
        l = int(letter[1]) - 1
        f = rotation_tilde(traj.states, l, g) if vector else rotation(traj.states, l, g)
        return traj.with_states(f)
    if letter == "S":
        ut = time_derivative(traj)
        inner = traj.states[1:-1]
        out = _time_column(ut) * ut.states + radial_derivative(inner, g) - inner
        return ut.with_states(out)
    raise ValueError(f"unknown generator {letter!r}")


def apply_generator_at(letter: str, traj: Trajectory, level: int) -> np.ndarray:
    """Spec-style convenience: the generator's value at window index ``level``."""
    shrink = 1 if letter in TEMPORAL else 0
    if letter in TEMPORAL and not (1 <= level <= traj.nlev - 2):
        raise WindowError(f"level {level} has no temporal neighbours")
    lo = level - shrink
    sub = traj.with_states(traj.states[lo: level + shrink + 1], shrink=lo)
    return apply_generator(letter, sub).states[0]


def apply_word(word, traj: Trajectory, vector: bool = True) -> Trajectory:
    if temporal_order(word) > traj.halfwidth:
        raise WindowError(f"word {word} needs temporal half-width {temporal_order(word)}, window has {traj.halfwidth}")
    out = traj
    for letter in reversed(tuple(word)):
        out = apply_generator(letter, out, vector)
    return out


def enumerate_words(k: int, max_order: int = MAX_WORD_ORDER, letters=LETTERS) -> list[tuple[str, ...]]:
    """All words of length <= k-1, shortest first, lexicographic in ``letters`` order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k - 1 > max_order:
        raise ValueError(f"|alpha| <= {k - 1} exceeds the configured maximum {max_order}")
    out = []
    for length in range(k):
        out.extend(itertools.product(letters, repeat=length))
    return out


def iter_word_results(traj: Trajectory, max_len: int, halfwidth: int,
                      letters=LETTERS) -> Iterator[tuple[tuple[str, ...], Trajectory]]:
    """Yield ``(word, Gamma^word u)`` for every word of length <= max_len.

    Results carry ``halfwidth`` levels on each side of the centre.  Inner
    (rightmost) sub-words are computed once and reused, so memory holds one
    branch of the word tree at a time.
    """
    def visit(word, result):
        yield word, result.trim(halfwidth)
        if len(word) == max_len:
            return
        for g in letters:
            need = halfwidth + (max_len - len(word) - 1) + (1 if g in TEMPORAL else 0)
            child = apply_generator(g, result.trim(need))
            yield from visit((g,) + word, child)

    root = traj.trim(halfwidth + max_len)
    yield from visit((), root)


# -- space-time operators ---------------------------------------------------

def wave_operator(traj: Trajectory, c1: float, c2: float) -> Trajectory:
    """``L u = d_t^2 u - A u`` (compact d_t^2), one level lost per side."""
    tt = second_time_difference(traj)
    inner = traj.states[1:-1]
    return tt.with_states(tt.states - elastic_operator(inner, c1, c2, traj.grid))


# -- verification ------------------------------------------------------------

def _core_norm(f: np.ndarray, grid: Grid, margin: int) -> float:
    if margin <= 0:
        return l2_norm(f, grid)
    g, n = grid.ghost, grid.n
    s = slice(g + margin, g + n - margin)
    fc = f[(Ellipsis, s, s, s)]
    return float(np.sqrt(np.sum(fc * fc) * grid.h**3))


def commutator_residuals(traj: Trajectory, c1: float, c2: float, margin: int = 0) -> dict[str, dict[str, float]]:
    """Discrete residuals of the Gamma-L commutation identities at the window centre.

    Returns ``{name: {"residual": ..., "scale": ...}}`` where ``scale`` is the
    norm of the leading term, for relative statements.
    """
    g = traj.grid
    w2 = traj.trim(2)
    Lu = wave_operator(w2, c1, c2)  # halfwidth 1
    out = {}
    # floating-point floor: third differences of u over the smallest step,
    # times the largest multiplier (t or |x|) carried by the generators
    tau = min(traj.dt, g.h)
    mult = 1.0 + abs(traj.t_center) + g.half_width * math.sqrt(3.0)
    noise = ROUNDOFF_ULPS * np.finfo(float).eps * mult * _core_norm(w2.center, g, margin) * (c1 * c1 + 1.0) / tau**3

    def record(name, lhs, rhs):
        out[name] = {"residual": _core_norm(lhs - rhs, g, margin), "scale": _core_norm(lhs, g, margin),
                     "noise": noise}

    for letter in ("dt", "d1", "d2", "d3", "O1", "O2", "O3"):
        lhs = apply_generator(letter, Lu).trim(0).center
        rhs = wave_operator(apply_generator(letter, w2).trim(1), c1, c2).center
        record(f"[{letter},L]", lhs, rhs)
    lhs = apply_generator("S", Lu).center
    rhs = wave_operator(apply_generator("S", w2), c1, c2).center - 2.0 * Lu.trim(0).center
    record("[S,L]", lhs, rhs)
    tt = second_time_difference(w2)
    lhs = apply_generator("S", tt).center
    rhs = second_time_difference(apply_generator("S", w2)).center - 2.0 * tt.trim(0).center
    record("[S,dt2]", lhs, rhs)
    return out


def leibniz_residuals(B: np.ndarray, traj_u: Trajectory, traj_v: Trajectory, rho_tilde: np.ndarray | None,
                      margin: int = 0, rotations: bool = True) -> dict[str, dict[str, float]]:
    """Residuals of the product rules of Gamma over N(u, v) and over rho~ d_t^2 u.

    ``rotations=False`` skips the Omega~ rule for N, which holds only for
    rotation-invariant coefficient tensors.
    """
    from .material import apply_N

    g = traj_u.grid
    u2, v2 = traj_u.trim(1), traj_v.trim(1)
    out = {}

    def record(name, lhs, rhs):
        out[name] = {"residual": _core_norm(lhs - rhs, g, margin), "scale": _core_norm(lhs, g, margin)}

    def N_traj(a: Trajectory, b: Trajectory) -> Trajectory:
        return a.with_states(np.stack([apply_N(B, a.states[i], b.states[i], g) for i in range(a.nlev)]))

    Nuv = N_traj(u2, v2)
    letters = ["dt", "d1", "d2", "d3"] + (["O1", "O2", "O3"] if rotations else [])
    for letter in letters:
        gu, gv = apply_generator(letter, u2).trim(0), apply_generator(letter, v2).trim(0)
        lhs = apply_generator(letter, Nuv).trim(0).center
        rhs = apply_N(B, gu.center, v2.trim(0).center, g) + apply_N(B, u2.trim(0).center, gv.center, g)
        record(f"{letter} N", lhs, rhs)
    su, sv = apply_generator("S", u2), apply_generator("S", v2)
    uc, vc = u2.trim(0).center, v2.trim(0).center
    lhs = apply_generator("S", Nuv).center
    rhs = apply_N(B, su.center, vc, g) + apply_N(B, uc, sv.center, g) - 2.0 * Nuv.trim(0).center
    record("S N", lhs, rhs)

    if rho_tilde is not None:
        u3 = traj_u.trim(2)
        tt = second_time_difference(u3)  # halfwidth 1
        prod = tt.with_states(rho_tilde * tt.states)
        ttc = tt.trim(0).center
        for letter in ("dt", "d1", "d2", "d3", "O1", "O2", "O3"):
            lhs = apply_generator(letter, prod).trim(0).center
            inner = second_time_difference(apply_generator(letter, u3).trim(1)).center
            if letter == "dt":
                coef = 0.0
            elif letter[0] == "d":
                coef = partial(rho_tilde, int(letter[1]) - 1, g)
            else:
                coef = rotation(rho_tilde, int(letter[1]) - 1, g)
            record(f"{letter} rho", lhs, coef * ttc + rho_tilde * inner)
        lhs = apply_generator("S", prod).center
        inner = second_time_difference(apply_generator("S", u3)).center
        rhs = radial_derivative(rho_tilde, g) * ttc + rho_tilde * inner - 2.0 * rho_tilde * ttc
        record("S rho", lhs, rhs)
    return out


def observed_orders(errors) -> list[float]:
    e = np.asarray(errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return [float(v) for v in np.log2(e[:-1] / e[1:])]


def refinement_verdicts(table: dict[str, list[dict[str, float]]], min_order: float = 1.8,
                        exact_tol: float = 1e-12) -> dict[str, dict]:
    """Per identity: residuals across levels, observed orders, and a pass flag.

    An identity is exact if every residual is ``<= exact_tol`` times its scale
    (or absolutely), or below the row's floating-point ``noise`` floor when one
    is recorded.  It passes if exact or if every observed order is ``>= min_order``.
    """
    verdicts = {}
    for name, rows in table.items():
        res = [r["residual"] for r in rows]
        floor = [max(exact_tol * max(r["scale"], 1.0), r.get("noise", 0.0)) for r in rows]
        exact = all(r <= f for r, f in zip(res, floor))
        orders = observed_orders(res)
        ok = exact or all(o >= min_order for o in orders)
        verdicts[name] = {"residuals": res, "orders": orders, "exact": exact, "pass": bool(ok)}
    return verdicts


# -- H_Lambda norm ------------------------------------------------------------

LAMBDA_LETTERS = ("d1", "d2", "d3", "O1", "O2", "O3", "R")


def apply_lambda(letter: str, f: np.ndarray, grid: Grid, vector: bool = True) -> np.ndarray:
    if letter[0] == "d":
        return partial(f, int(letter[1]) - 1, grid)
    if letter[0] == "O":
        l = int(letter[1]) - 1
        return rotation_tilde(f, l, grid) if vector else rotation(f, l, grid)
    if letter == "R":
        return radial_derivative(f, grid) - f
    raise ValueError(f"unknown Lambda letter {letter!r}")


def iter_lambda_words(f: np.ndarray, grid: Grid, max_len: int, vector: bool = True):
    def visit(word, val):
        yield word, val
        if len(word) < max_len:
            for letter in LAMBDA_LETTERS:
                yield from visit((letter,) + word, apply_lambda(letter, val, grid, vector))
    yield from visit((), f)


def h_lambda_norm(f: np.ndarray, g: np.ndarray, k: int, grid: Grid) -> float:
    """``sum_{|alpha| <= k-1} ||Lambda^a f|| + ||grad Lambda^a f|| + ||Lambda^a g||``."""
    if k - 1 > MAX_WORD_ORDER:
        raise ValueError(f"k={k} exceeds supported word length {MAX_WORD_ORDER}")
    if k < 1:
        return 0.0
    total = 0.0
    for _, lf in iter_lambda_words(f, grid, k - 1):
        total += l2_norm(lf, grid)
        total += l2_norm(np.stack([partial(lf, a, grid) for a in range(3)]), grid)
    for _, lg in iter_lambda_words(g, grid, k - 1):
        total += l2_norm(lg, grid)
    return float(total)


# -- refinement drivers ---------------------------------------------------------

def poly_bump(s2: np.ndarray, power: int = 5) -> np.ndarray:
    """``(1 - s^2)^power`` inside the unit ball, 0 outside (C^{power-1})."""
    return np.where(s2 < 1.0, (1.0 - np.minimum(s2, 1.0)) ** power, 0.0)


def smooth_test_field(radius: float = 2.0, shift=(0.1, 0.0, 0.0), power: int = 5, variant: int = 0):
    """A compactly supported, time-periodic vector field ``(t, x1, x2, x3) -> (3, ...)``."""
    c = np.asarray(shift, dtype=float)

    def field(t, x1, x2, x3):
        s = poly_bump(((x1 - c[0]) ** 2 + (x2 - c[1]) ** 2 + (x3 - c[2]) ** 2) / radius**2, power)
        if variant == 0:
            return np.stack([s * np.cos(t) * (1 + 0.5 * x2), s * np.cos(t) * 0.5 * x3, s * np.cos(t)])
        return np.stack([s * np.sin(t + 1), s * 0.5 * x1, -s * np.cos(2 * t)])
    return field


def quadratic_test_field(t, x1, x2, x3):
    """``t^2 x`` plus a mixed quadratic: every stencil used is exact on it."""
    return np.stack([t * t * x1 + x2 * x3, t * t * x2 + t * x1, t * t * x3 - x1 * x2])


def quadratic_pair_fields():
    """Two fields quadratic jointly in (t, x).

    Their gradients are affine, so N(u, v) and every product rule applied to it
    stay within the polynomial degree that the stencils reproduce exactly.
    """
    def u(t, x1, x2, x3):
        return np.stack([t * x1 + x2 * x3, t * t + x1 * x2, t * x3 - x1 * x1])

    def v(t, x1, x2, x3):
        return np.stack([x2 * x2 - t * x1, x1 * x3 + t * t, t * x2 + x1 * x3])
    return u, v


def verify_commutators(field, levels=(33, 65, 129), half_width: float = 2.2, t_center: float = 0.5,
                       dt_ratio: float = 0.5, c1: float = 2.0, c2: float = 1.0, margin: int = 0,
                       min_order: float = 1.8, exact_tol: float = 1e-12) -> dict[str, dict]:
    """Joint (h, dt = dt_ratio h) refinement of the Gamma-L commutator residuals."""
    table: dict[str, list] = {}
    for n in levels:
        grid = Grid(half_width, n)
        traj = Trajectory.sample(field, grid, t_center, dt_ratio * grid.h, 2)
        for name, row in commutator_residuals(traj, c1, c2, margin).items():
            table.setdefault(name, []).append(row)
    return refinement_verdicts(table, min_order, exact_tol)


def verify_leibniz_N(B: np.ndarray, field_u, field_v, rho_fn=None, levels=(33, 65, 129),
                     half_width: float = 2.2, t_center: float = 0.5, dt_ratio: float = 0.5,
                     rotations: bool = True, margin: int = 0, min_order: float = 1.8,
                     exact_tol: float = 1e-12) -> dict[str, dict]:
    """Joint refinement of the product rules for N and for rho~ d_t^2.

    ``rho_fn(grid)`` returns the sampled rho~ (or None to skip those rules).
    """
    table: dict[str, list] = {}
    for n in levels:
        grid = Grid(half_width, n)
        dt = dt_ratio * grid.h
        tu = Trajectory.sample(field_u, grid, t_center, dt, 2)
        tv = Trajectory.sample(field_v, grid, t_center, dt, 2)
        rho = None if rho_fn is None else rho_fn(grid)
        for name, row in leibniz_residuals(B, tu, tv, rho, margin, rotations).items():
            table.setdefault(name, []).append(row)
    return refinement_verdicts(table, min_order, exact_tol)
