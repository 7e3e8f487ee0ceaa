"""Uniform Cartesian grid over a cube and the centered-difference operators.

Field layout
------------
Every field is a plain ``numpy`` array whose last three axes run over the
padded node set (interior plus ``ghost`` layers on each side):

* scalar field: ``(N, N, N)``
* vector field: ``(3, N, N, N)``
* stacks of either (time levels, gradient components, ...) simply add
  leading axes; all operators act on the trailing three axes.

Ghost semantics: a three-point stencil is evaluated on every node that has
both neighbours inside the padded array, and the outermost layer along the
differentiated axis is set to zero.  With zero ghosts this is exactly the
lattice operator applied to the zero extension of the field; with analytic
ghosts (manufactured solutions) a nest of depth ``ghost`` is still exact on
the interior.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    half_width: float
    n: int
    ghost: int = 2

    def __post_init__(self):
        if self.n % 2 != 1 or self.n < 3:
            raise GridError(f"points_per_axis must be odd and >= 3, got {self.n}")
        if not self.half_width > 0:
            raise GridError(f"half_width must be positive, got {self.half_width}")
        if self.ghost < 2:
            raise GridError(f"ghost_layers must be >= 2, got {self.ghost}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def padded(self) -> int:
        return self.n + 2 * self.ghost

    @property
    def interior(self) -> tuple[slice, slice, slice]:
        s = slice(self.ghost, self.ghost + self.n)
        return (s, s, s)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.padded,) * 3

    @cached_property
    def axis_coords(self) -> np.ndarray:
        """1-D node coordinates including ghosts; index ``ghost + (n-1)/2`` is 0."""
        idx = np.arange(self.padded) - self.ghost - (self.n - 1) // 2
        return idx * self.h

    @cached_property
    def x(self) -> np.ndarray:
        """Node coordinates, shape ``(3, N, N, N)``."""
        c = self.axis_coords
        return np.stack(np.meshgrid(c, c, c, indexing="ij"))

    @cached_property
    def r(self) -> np.ndarray:
        return np.sqrt(np.sum(self.x**2, axis=0))

    def zeros(self, vector: bool = True) -> np.ndarray:
        return np.zeros(((3,) if vector else ()) + self.shape)

    def sample(self, func: Callable, *args) -> np.ndarray:
        """Evaluate ``func(x1, x2, x3, *args)`` on all padded nodes."""
        x = self.x
        out = np.asarray(func(x[0], x[1], x[2], *args), dtype=float)
        return np.array(np.broadcast_to(out, out.shape[:-3] + self.shape))

    def interior_view(self, f: np.ndarray) -> np.ndarray:
        return f[(Ellipsis,) + self.interior]

    def band_mask(self, width: int = 2) -> np.ndarray:
        """Interior nodes within ``width`` cells of the ghost layers."""
        m = np.zeros((self.n,) * 3, dtype=bool)
        m[:width], m[-width:] = True, True
        m[:, :width], m[:, -width:] = True, True
        m[:, :, :width], m[:, :, -width:] = True, True
        return m


def make_grid(L: float, n: int, g: int = 2) -> Grid:
    return Grid(float(L), int(n), int(g))


def refresh_ghosts(f: np.ndarray, grid: Grid, fill: np.ndarray | None = None) -> np.ndarray:
    """Overwrite ghost layers in place: zeros, or values copied from ``fill``."""
    g = grid.ghost
    for ax in (-3, -2, -1):
        for sl in (slice(0, g), slice(-g, None)):
            idx = [slice(None)] * f.ndim
            idx[ax] = sl
            idx = tuple(idx)
            f[idx] = 0.0 if fill is None else fill[idx]
    return f


def partial(f: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Centered difference ``(f(x+h e) - f(x-h e)) / 2h`` along spatial ``axis`` (0, 1, 2)."""
    ax = f.ndim - 3 + axis
    out = np.empty_like(f)
    hi = [slice(None)] * f.ndim
    lo = [slice(None)] * f.ndim
    mid = [slice(None)] * f.ndim
    hi[ax], lo[ax], mid[ax] = slice(2, None), slice(None, -2), slice(1, -1)
    np.subtract(f[tuple(hi)], f[tuple(lo)], out=out[tuple(mid)])
    out[tuple(mid)] *= 0.5 / grid.h
    edge = [slice(None)] * f.ndim
    for i in (0, -1):
        edge[ax] = i
        out[tuple(edge)] = 0.0
    return out


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """``G[..., m] = d_m f`` with the derivative index placed right before the spatial axes.

    For a vector field ``u`` of shape ``(3, N, N, N)`` the result has shape
    ``(3, 3, N, N, N)`` with ``G[j, m] = d_m u^j``.
    """
    return np.stack([partial(f, a, grid) for a in range(3)], axis=f.ndim - 3)


def divergence(u: np.ndarray, grid: Grid) -> np.ndarray:
    out = partial(u[..., 0, :, :, :], 0, grid)
    out += partial(u[..., 1, :, :, :], 1, grid)
    out += partial(u[..., 2, :, :, :], 2, grid)
    return out


def forward_difference(f: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """``(f(x+h e) - f(x)) / h``; the last layer along ``axis`` is set to zero."""
    ax = f.ndim - 3 + axis
    out = np.zeros_like(f)
    hi = [slice(None)] * f.ndim
    lo = [slice(None)] * f.ndim
    hi[ax], lo[ax] = slice(1, None), slice(None, -1)
    np.subtract(f[tuple(hi)], f[tuple(lo)], out=out[tuple(lo)])
    out[tuple(lo)] *= 1.0 / grid.h
    return out


def potential_energy(u: np.ndarray, c1: float, c2: float, grid: Grid) -> float:
    """``-1/2 <u, A_h u>`` written as a sum of squares and centred products.

    Approximates ``1/2 int c2^2 |grad u|^2 + (c1^2 - c2^2)(div u)^2`` and, for
    fields vanishing near the boundary, equals the quadratic form of the
    discrete operator exactly (summation by parts).
    """
    sl = (Ellipsis,) + grid.interior
    acc = 0.0
    for j in range(3):
        for m in range(3):
            d = forward_difference(u[j], m, grid)[sl]
            acc += c2**2 * float(np.sum(d * d))
    diag_f = [forward_difference(u[i], i, grid)[sl] for i in range(3)]
    diag_c = [partial(u[i], i, grid)[sl] for i in range(3)]
    cross = 0.0
    for i in range(3):
        cross += float(np.sum(diag_f[i] * diag_f[i]))
        for j in range(3):
            if j != i:
                cross += float(np.sum(diag_c[i] * diag_c[j]))
    acc += (c1**2 - c2**2) * cross
    return 0.5 * acc * grid.h**3


def second_difference(f: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Compact ``(f(x+h e) - 2 f(x) + f(x-h e)) / h^2``; outermost layer set to zero."""
    ax = f.ndim - 3 + axis
    out = np.empty_like(f)
    hi = [slice(None)] * f.ndim
    lo = [slice(None)] * f.ndim
    mid = [slice(None)] * f.ndim
    hi[ax], lo[ax], mid[ax] = slice(2, None), slice(None, -2), slice(1, -1)
    hi, lo, mid = tuple(hi), tuple(lo), tuple(mid)
    np.add(f[hi], f[lo], out=out[mid])
    out[mid] -= 2.0 * f[mid]
    out[mid] *= 1.0 / grid.h**2
    edge = [slice(None)] * f.ndim
    for i in (0, -1):
        edge[ax] = i
        out[tuple(edge)] = 0.0
    return out


def laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Seven-point Laplacian (compact second differences)."""
    out = second_difference(f, 0, grid)
    out += second_difference(f, 1, grid)
    out += second_difference(f, 2, grid)
    return out


def grad_div(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``d_i d_j u^j``: compact second difference for i = j, nested centered for i != j."""
    ca = u.ndim - 4
    comp = [u[(slice(None),) * ca + (j,)] for j in range(3)]
    first = [partial(c, j, grid) for j, c in enumerate(comp)]
    out = []
    for i in range(3):
        acc = second_difference(comp[i], i, grid)
        for j in range(3):
            if j != i:
                acc += partial(first[j], i, grid)
        out.append(acc)
    return np.stack(out, axis=ca)


def check_speeds(c1: float, c2: float) -> None:
    if not (c1 > 0 and c2 > 0):
        raise ValueError(f"wave speeds must be positive, got c1={c1}, c2={c2}")
    if not c1**2 > 4.0 / 3.0 * c2**2:
        raise ValueError(f"need c1^2 > 4/3 c2^2, got c1={c1}, c2={c2}")


def elastic_operator(u: np.ndarray, c1: float, c2: float, grid: Grid) -> np.ndarray:
    """``A u = c2^2 Lap u + (c1^2 - c2^2) grad(div u)``."""
    check_speeds(c1, c2)
    out = laplacian(u, grid)
    out *= c2**2
    out += (c1**2 - c2**2) * grad_div(u, grid)
    return out


def integrate(f: np.ndarray, grid: Grid) -> float:
    """``h^3`` node quadrature over interior nodes (numpy pairwise sum: deterministic)."""
    return float(np.sum(grid.interior_view(f)) * grid.h**3)


def pointwise_norm(f: np.ndarray, vector: bool) -> np.ndarray:
    if not vector:
        return np.abs(f)
    return np.sqrt(np.sum(f * f, axis=0))


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    fi = grid.interior_view(f)
    return float(np.sqrt(np.sum(fi * fi) * grid.h**3))


def sup_norm(f: np.ndarray, grid: Grid) -> float:
    fi = grid.interior_view(f)
    if fi.ndim > 3:
        fi = np.sqrt(np.sum(fi.reshape((-1,) + fi.shape[-3:]) ** 2, axis=0))
    return float(np.max(np.abs(fi)))


def weighted_l2(f: np.ndarray, w: np.ndarray, grid: Grid) -> float:
    return l2_norm(f * w, grid)
