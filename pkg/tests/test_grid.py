import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastowave.grid import (
    Grid,
    GridError,
    divergence,
    elastic_operator,
    gradient,
    integrate,
    l2_norm,
    laplacian,
    make_grid,
    partial,
    potential_energy,
    refresh_ghosts,
    sup_norm,
    weighted_l2,
)


def test_make_grid_spacing_and_nodes():
    g = make_grid(1.0, 3, 2)
    assert g.h == 1.0
    assert np.allclose(g.axis_coords[g.interior[0]], [-1.0, 0.0, 1.0])
    assert make_grid(8.0, 65).h == 0.25


@pytest.mark.parametrize("args", [(1.0, 4, 2), (0.0, 9, 2), (-1.0, 9, 2), (1.0, 9, 1)])
def test_make_grid_rejects_bad_arguments(args):
    with pytest.raises(GridError):
        make_grid(*args)


def test_origin_is_a_node():
    g = make_grid(2.0, 17)
    c = g.ghost + (g.n - 1) // 2
    assert np.all(g.x[:, c, c, c] == 0.0)
    assert g.r[c, c, c] == 0.0


def test_partial_exact_on_affine_and_constant():
    g = make_grid(1.0, 9)
    x = g.x
    assert np.all(g.interior_view(partial(np.full(g.shape, 3.0), 0, g)) == 0.0)
    d = g.interior_view(partial(2.0 * x[0] - x[1] + 0.5, 0, g))
    assert np.allclose(d, 2.0, atol=1e-13)


def test_partial_observed_order_on_sine():
    L = 2.0
    errs = []
    for n in (17, 33, 65):
        g = make_grid(L, n)
        f = np.sin(2 * np.pi * g.x[0] / L)
        ex = (2 * np.pi / L) * np.cos(2 * np.pi * g.x[0] / L)
        errs.append(np.abs(g.interior_view(partial(f, 0, g) - ex)).max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(orders - 2.0) <= 0.2), orders


def test_divergence_examples():
    g = make_grid(1.0, 9)
    x = g.x
    assert np.allclose(g.interior_view(divergence(x.copy(), g)), 3.0, atol=1e-13)
    rot = np.stack([-x[1], x[0], np.zeros_like(x[0])])
    assert np.abs(g.interior_view(divergence(rot, g))).max() < 1e-13


def test_divergence_radial_bump_second_order():
    # u = x f(r), f = exp(-r^2): div u = 3f + r f'
    errs = []
    for n in (17, 33, 65):
        g = make_grid(3.0, n)
        f = np.exp(-g.r**2)
        u = g.x * f
        ex = 3 * f - 2 * g.r**2 * f
        errs.append(l2_norm(divergence(u, g) - ex, g))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(orders - 2.0) <= 0.2), orders


def test_laplacian_exact_on_quadratics():
    g = make_grid(1.0, 9)
    x = g.x
    f = 3 * x[0] ** 2 - x[1] * x[2] + 2 * x[2] ** 2 + x[0]
    assert np.allclose(g.interior_view(laplacian(f, g)), 10.0, atol=1e-12)


@pytest.mark.parametrize("kind", ["shear", "pressure"])
def test_elastic_operator_plane_profiles(kind):
    c1, c2 = 2.0, 1.0
    errs = []
    for n in (17, 33, 65):
        g = make_grid(3.0, n)
        x1 = g.x[0]
        phi = np.exp(-(x1**2))
        phi2 = (4 * x1**2 - 2) * phi
        u = g.zeros()
        comp, c = (1, c2) if kind == "shear" else (0, c1)
        u[comp] = phi
        ex = g.zeros()
        ex[comp] = c**2 * phi2
        errs.append(sup_norm(elastic_operator(u, c1, c2, g) - ex, g))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(np.abs(orders - 2.0) <= 0.2), orders


def test_elastic_operator_rejects_bad_speeds():
    g = make_grid(1.0, 5)
    with pytest.raises(ValueError):
        elastic_operator(g.zeros(), 1.0, 1.0, g)
    assert np.all(elastic_operator(np.ones((3,) + g.shape), 2.0, 1.0, g)[(slice(None),) + g.interior] == 0.0)


def test_norms_examples():
    g = make_grid(1.0, 41)
    one = np.ones(g.shape)
    # node quadrature over (n)^3 nodes of volume h^3: (2 + h)^3 in total
    assert l2_norm(one, g) ** 2 == pytest.approx((2.0 + g.h) ** 3, rel=1e-12)
    z = g.zeros()
    assert l2_norm(z, g) == sup_norm(z, g) == weighted_l2(z, one, g) == 0.0


def test_gaussian_quadrature_matches_refined_reference():
    ref = make_grid(4.0, 161)
    val_ref = integrate(np.exp(-2 * ref.r**2), ref)
    g = make_grid(4.0, 65)
    assert integrate(np.exp(-2 * g.r**2), g) == pytest.approx(val_ref, rel=1e-3)
    assert val_ref == pytest.approx((np.pi / 2) ** 1.5, rel=1e-6)


def test_refresh_ghosts_zero_and_fill():
    g = make_grid(1.0, 5)
    f = np.random.default_rng(0).standard_normal((3,) + g.shape)
    fill = np.full_like(f, 7.0)
    refresh_ghosts(f, g, fill)
    assert f[0, 0, 3, 3] == 7.0 and f[1, 3, 3, -1] == 7.0
    refresh_ghosts(f, g)
    assert f[0, 1, 3, 3] == 0.0
    assert np.all(g.interior_view(f) != 7.0)


def test_potential_energy_matches_operator_quadratic_form():
    g = make_grid(3.0, 25)
    rng = np.random.default_rng(1)
    u = g.zeros()
    m = g.r < 2.0
    u[:, m] = rng.standard_normal((3, int(m.sum())))
    refresh_ghosts(u, g)
    Au = elastic_operator(u, 2.0, 1.0, g)
    form = -0.5 * integrate(np.sum(u * Au, axis=0), g)
    assert potential_energy(u, 2.0, 1.0, g) == pytest.approx(form, rel=1e-12)
    assert form > 0


def test_gradient_layout():
    g = make_grid(1.0, 9)
    x = g.x
    u = np.stack([x[1], 2 * x[2], 3 * x[0]])
    G = g.interior_view(gradient(u, g))
    assert np.allclose(G[0, 1], 1.0) and np.allclose(G[1, 2], 2.0) and np.allclose(G[2, 0], 3.0)
    assert np.allclose(G[0, 0], 0.0)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**16))
def test_partial_is_linear(a, b, seed):
    g = make_grid(1.0, 7)
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    lhs = partial(a * f + b * h, 1, g)
    rhs = a * partial(f, 1, g) + b * partial(h, 1, g)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)) / g.h)


def test_quadrature_is_deterministic():
    g = make_grid(2.0, 33)
    f = np.random.default_rng(3).standard_normal(g.shape)
    assert integrate(f, g) == integrate(f.copy(), g)
