"""Nonlinearity coefficients, null-condition machinery and the perturbed density.

A coefficient tensor is a ``(3, 3, 3, 3, 3, 3)`` float array ``B[i, j, k, l, m, n]``
holding ``B^{ijk}_{lmn}``.  The index pairs ``(i, l)``, ``(j, m)``, ``(k, n)`` sit
on axes ``(0, 3)``, ``(1, 4)``, ``(2, 5)``; the required symmetry is invariance
under every permutation of the three pairs.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import sympy as sp

from .grid import Grid, gradient, integrate, partial

SCHEMA_VERSION = 1
TENSOR_SHAPE = (3,) * 6


class NullConstructionError(RuntimeError):
    pass


# -- pair permutations -------------------------------------------------------

def _pair_axes(perm: Sequence[int]) -> tuple[int, ...]:
    """Axis order for ``np.transpose`` realising a permutation of the three pairs."""
    return tuple(perm) + tuple(p + 3 for p in perm)


PAIR_PERMUTATIONS = tuple(_pair_axes(p) for p in itertools.permutations(range(3)))


@lru_cache(maxsize=None)
def _orbit_tables() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Canonical representative, orbit id and orbit size for every flat index."""
    idx = np.arange(729).reshape(TENSOR_SHAPE)
    images = np.stack([np.transpose(idx, ax).ravel() for ax in PAIR_PERMUTATIONS])
    canon = images.min(axis=0)
    reps, orbit_id = np.unique(canon, return_inverse=True)
    sizes = np.bincount(orbit_id)
    return canon, orbit_id, sizes


def orbit(index: Sequence[int]) -> set[tuple[int, ...]]:
    """All 0-based index tuples reached from ``index`` by permuting the pairs."""
    i, j, k, l, m, n = index
    pairs = [(i, l), (j, m), (k, n)]
    out = set()
    for p in itertools.permutations(pairs):
        out.add((p[0][0], p[1][0], p[2][0], p[0][1], p[1][1], p[2][1]))
    return out


def symmetrize(B: np.ndarray) -> np.ndarray:
    """Average over all pair permutations; the result is exactly symmetric.

    Each orbit receives one value (the orbit mean) so that symmetric slots are
    bitwise equal rather than equal up to summation-order rounding.
    """
    B = np.asarray(B, dtype=float).reshape(TENSOR_SHAPE)
    _, orbit_id, sizes = _orbit_tables()
    sums = np.bincount(orbit_id, weights=B.ravel())
    return (sums / sizes)[orbit_id].reshape(TENSOR_SHAPE)


def symmetry_deficit(B: np.ndarray) -> float:
    B = np.asarray(B, dtype=float)
    d1 = np.abs(B - np.transpose(B, (1, 0, 2, 4, 3, 5))).max()
    d2 = np.abs(B - np.transpose(B, (0, 2, 1, 3, 5, 4))).max()
    return float(max(d1, d2))


@lru_cache(maxsize=None)
def symmetric_basis() -> np.ndarray:
    """Orthonormal basis (729 x n_orbits) of the symmetric subspace."""
    _, orbit_id, sizes = _orbit_tables()
    S = np.zeros((729, sizes.size))
    S[np.arange(729), orbit_id] = 1.0 / np.sqrt(sizes[orbit_id])
    return S


# -- sphere sampling ---------------------------------------------------------

def fibonacci_sphere(count: int, rotation: np.ndarray | None = None) -> np.ndarray:
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    phi = np.pi * (1.0 + 5.0**0.5) * i
    rho = np.sqrt(1.0 - z * z)
    w = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    if rotation is not None:
        w = w @ rotation.T
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _orthogonal_unit(omega: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Unit vectors in the plane orthogonal to each ``omega`` at angle ``theta``."""
    ref = np.where(np.abs(omega[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    a = np.cross(omega, ref)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b = np.cross(omega, a)
    eta = np.cos(theta)[:, None] * a + np.sin(theta)[:, None] * b
    eta -= np.sum(eta * omega, axis=1, keepdims=True) * omega
    return eta / np.linalg.norm(eta, axis=1, keepdims=True)


@dataclass
class SpherePairSampler:
    """Unit directions and orthogonal direction pairs on S^2."""

    directions: np.ndarray
    eta: np.ndarray
    omega: np.ndarray

    @classmethod
    def make(cls, n_dirs: int = 200, n_pairs: int = 400, seed: int | None = None) -> "SpherePairSampler":
        rot = None if seed is None else _random_rotation(np.random.default_rng(seed))
        dirs = fibonacci_sphere(n_dirs, rot)
        om = fibonacci_sphere(n_pairs, rot)
        golden = (np.sqrt(5.0) - 1.0) / 2.0
        theta = 2.0 * np.pi * ((np.arange(n_pairs) * golden + (0.0 if seed is None else 0.37 * seed)) % 1.0)
        return cls(dirs, _orthogonal_unit(om, theta), om)


# -- null forms --------------------------------------------------------------

def _as_pair_tensor(B: np.ndarray) -> np.ndarray:
    """View ``B`` as a 9x9x9 tensor over pair indices ``(i, l)``."""
    return np.transpose(B, (0, 3, 1, 4, 2, 5)).reshape(9, 9, 9)


def _cubic_form(B: np.ndarray, p: np.ndarray) -> np.ndarray:
    T = _as_pair_tensor(B)
    return np.einsum("abc,sa,sb,sc->s", T, p, p, p)


def radial_values(B: np.ndarray, directions: np.ndarray) -> np.ndarray:
    p = np.einsum("si,sl->sil", directions, directions).reshape(-1, 9)
    return _cubic_form(B, p)


def transverse_values(B: np.ndarray, eta: np.ndarray, omega: np.ndarray) -> np.ndarray:
    p = np.einsum("si,sl->sil", eta, omega).reshape(-1, 9)
    return _cubic_form(B, p)


def radial_null_deficit(B: np.ndarray, sampler: SpherePairSampler) -> float:
    return float(np.abs(radial_values(B, sampler.directions)).max())


def transverse_null_deficit(B: np.ndarray, sampler: SpherePairSampler) -> float:
    return float(np.abs(transverse_values(B, sampler.eta, sampler.omega)).max())


def _constraint_rows(sampler: SpherePairSampler) -> np.ndarray:
    def rows(a, b):
        p = np.einsum("si,sl->sil", a, b)
        # row[s] . B.ravel() == sum B[i,j,k,l,m,n] a_i a_j a_k b_l b_m b_n
        r = np.einsum("si,sj,sk,sl,sm,sn->sijklmn", a, a, a, b, b, b)
        return r.reshape(len(a), 729)
    return np.vstack([rows(sampler.directions, sampler.directions), rows(sampler.eta, sampler.omega)])


@lru_cache(maxsize=None)
def isotropic_basis() -> np.ndarray:
    """Orthonormal basis of symmetric, rotation-invariant tensors (products of three deltas)."""
    d = np.eye(3)
    letters = "ijklmn"
    tensors = []
    for a, b, c in _perfect_matchings(tuple(range(6))):
        spec = f"{letters[a[0]]}{letters[a[1]]},{letters[b[0]]}{letters[b[1]]},{letters[c[0]]}{letters[c[1]]}->{letters}"
        tensors.append(symmetrize(np.einsum(spec, d, d, d)).ravel())
    M = np.array(tensors).T
    u, s, _ = np.linalg.svd(M, full_matrices=False)
    return u[:, s > 1e-10 * s[0]]


def _perfect_matchings(items):
    if not items:
        yield ()
        return
    first, rest = items[0], items[1:]
    for i, other in enumerate(rest):
        for m in _perfect_matchings(rest[:i] + rest[i + 1:]):
            yield ((first, other),) + m


def random_symmetric_tensor(seed: int, isotropic: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if isotropic:
        basis = isotropic_basis()
        return symmetrize((basis @ rng.standard_normal(basis.shape[1])).reshape(TENSOR_SHAPE))
    return symmetrize(rng.standard_normal(TENSOR_SHAPE))


def make_null_tensor(
    seed: int,
    isotropic: bool = False,
    n_dirs: int = 200,
    n_pairs: int = 400,
    tol: float = 1e-10,
) -> np.ndarray:
    """Random symmetric tensor projected onto the null-condition subspace.

    The constraints are both null forms evaluated on a fixed sampling; the
    projection is orthogonal within the symmetric (optionally isotropic)
    subspace.  The result is re-verified on an independent sampler ten times
    denser and rejected if either deficit exceeds ``tol``.
    """
    basis = isotropic_basis() if isotropic else symmetric_basis()
    B0 = random_symmetric_tensor(seed, isotropic)
    M = _constraint_rows(SpherePairSampler.make(n_dirs, n_pairs)) @ basis
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    rank = int(np.sum(s > 1e-11 * s[0]))
    null = vt[rank:]
    coeff = null.T @ (null @ (basis.T @ B0.ravel()))
    B = symmetrize((basis @ coeff).reshape(TENSOR_SHAPE))
    check = SpherePairSampler.make(10 * n_dirs, 10 * n_pairs, seed=seed + 1)
    scale = max(1.0, float(np.abs(B).max()))
    rd, td = radial_null_deficit(B, check), transverse_null_deficit(B, check)
    if rd > tol * scale or td > tol * scale:
        raise NullConstructionError(f"null deficits {rd:.3e}, {td:.3e} exceed {tol:g}; sampling too sparse")
    return B


def matched_pair(seed: int, isotropic: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """``(B_null, B_generic)`` with equal Frobenius norm, both from ``seed``."""
    generic = random_symmetric_tensor(seed, isotropic)
    null = make_null_tensor(seed, isotropic)
    nn = np.linalg.norm(null)
    if nn == 0:
        raise NullConstructionError("null projection vanished")
    return null * (np.linalg.norm(generic) / nn), generic


# -- serialization -----------------------------------------------------------

def tensor_to_json(B: np.ndarray) -> str:
    return json.dumps({
        "schema_version": SCHEMA_VERSION,
        "index_order": "ijklmn",
        "entries": [float(v) for v in np.asarray(B, dtype=float).ravel()],
    })


def tensor_from_json(text: str) -> np.ndarray:
    obj = json.loads(text)
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported tensor schema version {obj.get('schema_version')!r}")
    entries = obj["entries"]
    if len(entries) != 729:
        raise ValueError(f"expected 729 entries, got {len(entries)}")
    return np.array(entries, dtype=float).reshape(TENSOR_SHAPE)


# -- nonlinear forms ---------------------------------------------------------

def _slab_chunks(n: int, size: int = 8):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


def quadratic_flux(B: np.ndarray, Gu: np.ndarray, Gv: np.ndarray) -> np.ndarray:
    """``Q[i, l] = B^{ijk}_{lmn} Gu[j, m] Gv[k, n]`` pointwise, shape ``(3, 3, N, N, N)``."""
    sp_shape = Gu.shape[2:]
    out = np.empty((3, 3) + sp_shape)
    # (i,l,k,n) x (j,m)
    Bm = np.transpose(B, (0, 3, 2, 5, 1, 4)).reshape(81, 9)
    for sl in _slab_chunks(sp_shape[0]):
        gu = Gu[:, :, sl].reshape(9, -1)
        gv = Gv[:, :, sl].reshape(1, 9, -1)
        w = (Bm @ gu).reshape(9, 9, -1)
        out[:, :, sl] = np.sum(w * gv, axis=1).reshape((3, 3) + out[:, :, sl].shape[2:])
    return out


def apply_N(B: np.ndarray, u: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """``N^i(u, v) = B^{ijk}_{lmn} d_l(d_m u^j d_n v^k)`` in conservative form."""
    Gu = gradient(u, grid)
    Gv = Gu if v is u else gradient(v, grid)
    Q = quadratic_flux(B, Gu, Gv)
    out = partial(Q[:, 0], 0, grid)
    out += partial(Q[:, 1], 1, grid)
    out += partial(Q[:, 2], 2, grid)
    return out


def apply_N_expanded(B: np.ndarray, u: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """Product-rule form ``B (d_l d_m u^j d_n v^k + d_m u^j d_l d_n v^k)``."""
    Gu, Gv = gradient(u, grid), gradient(v, grid)
    Hu, Hv = gradient(Gu, grid), gradient(Gv, grid)  # H[j, m, l]
    return (np.einsum("ijklmn,jml...,kn...->i...", B, Hu, Gv, optimize=True)
            + np.einsum("ijklmn,jm...,knl...->i...", B, Gu, Hv, optimize=True))


def n_tilde_contract(B: np.ndarray, Gu: np.ndarray, Gv: np.ndarray, Gw: np.ndarray) -> np.ndarray:
    """``B^{ijk}_{lmn} Gu[i, l] Gv[j, m] Gw[k, n]`` pointwise from gradient arrays."""
    Q = quadratic_flux(B, Gv, Gw)
    return np.einsum("il...,il...->...", Gu, Q)


def apply_N_tilde(B: np.ndarray, u: np.ndarray, v: np.ndarray, w: np.ndarray, grid: Grid) -> np.ndarray:
    """``Ntilde(u, v, w) = B^{ijk}_{lmn} d_l u^i d_m v^j d_n w^k`` (scalar field)."""
    return n_tilde_contract(B, gradient(u, grid), gradient(v, grid), gradient(w, grid))


class CubicFormCache:
    """Precontracts ``B`` with a fixed third argument for repeated ``Ntilde(a, a, u)`` integrals."""

    def __init__(self, B: np.ndarray, Gu: np.ndarray, grid: Grid):
        self.grid = grid
        Gi = Gu[(Ellipsis,) + grid.interior]
        # M[(i,l),(j,m)] = sum_kn B[i,j,k,l,m,n] Gu[k,n]
        Bm = np.transpose(B, (0, 3, 1, 4, 2, 5)).reshape(81, 9)
        self.M = (Bm @ Gi.reshape(9, -1)).reshape(9, 9, -1)

    def integral(self, Ga: np.ndarray) -> float:
        g = Ga[(Ellipsis,) + self.grid.interior].reshape(9, -1)
        total = 0.0
        for a in range(9):
            total += float(np.dot(g[a], np.einsum("bp,bp->p", self.M[a], g)))
        return total * self.grid.h**3


# -- density -----------------------------------------------------------------

X, Y, Z = sp.symbols("x1 x2 x3", real=True)
_COORDS = (X, Y, Z)
_MAX_ORDER = 8
_F = sp.symbols(f"F0:{_MAX_ORDER + 2}")  # F_j stands for the j-th derivative of F(q), q = |x|^2

LAMBDA_LETTERS = ("d1", "d2", "d3", "O1", "O2", "O3", "R")  # R: r d_r - 1


def _total_d(expr, a: int):
    out = sp.diff(expr, _COORDS[a])
    for j in range(_MAX_ORDER + 1):
        c = sp.diff(expr, _F[j])
        if c != 0:
            out += c * 2 * _COORDS[a] * _F[j + 1]
    return sp.expand(out)


def _lambda_letter(letter: str, expr):
    if letter[0] == "d":
        return _total_d(expr, int(letter[1]) - 1)
    if letter[0] == "O":
        l = int(letter[1]) - 1
        a, b = (l + 1) % 3, (l + 2) % 3
        return sp.expand(_COORDS[a] * _total_d(expr, b) - _COORDS[b] * _total_d(expr, a))
    if letter == "R":
        return sp.expand(sum(_COORDS[a] * _total_d(expr, a) for a in range(3)) - expr)
    raise ValueError(f"unknown Lambda letter {letter!r}")


@dataclass
class DensityField:
    """``rho = 1 + rho_tilde`` with ``rho_tilde = delta * exp(1 - 1/(1 - (r/R)^2))`` for r < R."""

    delta: float
    radius: float
    grid: Grid
    _expr_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0 <= self.delta < 0.5:
            raise ValueError(f"density amplitude must lie in [0, 1/2), got {self.delta}")
        if self.radius <= 0:
            raise ValueError("density support radius must be positive")

    @property
    def rho_tilde(self) -> np.ndarray:
        return self.evaluate(())

    @property
    def rho(self) -> np.ndarray:
        return 1.0 + self.rho_tilde

    def word_expression(self, word: tuple[str, ...]):
        """Symbolic ``Lambda^word rho_tilde`` in terms of x and the radial derivatives F_j."""
        if word not in self._expr_cache:
            if not word:
                self._expr_cache[word] = _F[0]
            else:
                self._expr_cache[word] = _lambda_letter(word[0], self.word_expression(word[1:]))
        return self._expr_cache[word]

    def _radial_derivatives(self, q: np.ndarray, order: int) -> list[np.ndarray]:
        s = sp.symbols("q", positive=True)
        f = self.delta * sp.exp(1 - 1 / (1 - s / self.radius**2))
        out, expr = [], f
        inside = q < self.radius**2 * (1 - 1e-12)
        for _ in range(order + 1):
            fn = sp.lambdify(s, expr, "numpy")
            vals = np.zeros_like(q)
            with np.errstate(all="ignore"):
                vals[inside] = fn(q[inside])
            out.append(vals)
            expr = sp.diff(expr, s)
        return out

    def evaluate(self, word: tuple[str, ...] = (), points: np.ndarray | None = None) -> np.ndarray:
        """``Lambda^word rho_tilde`` at ``points`` (shape (3, ...)); grid nodes by default."""
        x = self.grid.x if points is None else np.asarray(points, dtype=float)
        expr = self.word_expression(tuple(word))
        used = sorted(int(str(s)[1:]) for s in expr.free_symbols if str(s).startswith("F"))
        q = np.sum(x * x, axis=0)
        Fv = self._radial_derivatives(q, max(used, default=0))
        fn = sp.lambdify(_COORDS + _F[: len(Fv)], expr, "numpy")
        val = fn(x[0], x[1], x[2], *Fv)
        return np.broadcast_to(np.asarray(val, dtype=float), q.shape).copy()


def lambda_words(k_max: int) -> list[tuple[str, ...]]:
    out = []
    for length in range(k_max + 1):
        out.extend(itertools.product(LAMBDA_LETTERS, repeat=length))
    return out


def density_assumption_check(rho: DensityField, k_max: int) -> float:
    """``max_{|alpha| <= k_max} || <r> Lambda^alpha rho_tilde ||_{L^2}``."""
    grid = rho.grid
    weight = np.sqrt(1.0 + grid.r**2)
    best = 0.0
    for w in lambda_words(k_max):
        v = rho.evaluate(w)
        best = max(best, float(np.sqrt(integrate((weight * v) ** 2, grid))))
    return best


def density_h_lambda_norm(rho: DensityField, k: int) -> float:
    """``sum_{|alpha| <= k-1} (||Lambda^alpha rho_tilde|| + ||grad Lambda^alpha rho_tilde||)``."""
    grid = rho.grid
    total = 0.0
    for w in lambda_words(k - 1):
        total += np.sqrt(integrate(rho.evaluate(w) ** 2, grid))
        grad_sq = sum(rho.evaluate((f"d{a}",) + w) ** 2 for a in (1, 2, 3))
        total += np.sqrt(integrate(grad_sq, grid))
    return float(total)
