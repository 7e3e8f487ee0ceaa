import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastowave import vectorfields as V
from elastowave.grid import Grid, make_grid, partial
from elastowave.material import make_null_tensor, random_symmetric_tensor


def test_word_counts():
    assert len(V.enumerate_words(1)) == 1
    assert len(V.enumerate_words(2)) == 9
    assert len(V.enumerate_words(3)) == 73
    with pytest.raises(ValueError):
        V.enumerate_words(4)
    with pytest.raises(ValueError):
        V.enumerate_words(0)


def test_word_tree_visits_every_word_once():
    g = make_grid(1.0, 5)
    traj = V.Trajectory.sample(V.quadratic_test_field, g, 0.3, 0.05, 4)
    words = [w for w, _ in V.iter_word_results(traj, 2, 0)]
    assert sorted(words) == sorted(V.enumerate_words(3))


def test_word_tree_matches_apply_word():
    g = make_grid(2.0, 9)
    traj = V.Trajectory.sample(V.smooth_test_field(radius=1.5), g, 0.5, 0.1, 4)
    got = dict(V.iter_word_results(traj, 2, 1))
    for w in [("O3", "dt"), ("S", "d1"), ("dt", "S"), ("O1", "O2")]:
        ref = V.apply_word(w, traj.trim(3)).trim(1).states
        assert np.array_equal(got[w].states, ref)


def test_rotation_examples():
    g = make_grid(1.0, 9)
    x = g.x
    # Omega_3 = x1 d2 - x2 d1 applied to x1 gives -x2
    assert np.allclose(g.interior_view(V.rotation(x[0].copy(), 2, g)), g.interior_view(-x[1]), atol=1e-13)
    # radial functions are annihilated
    f = g.r**2
    for l in range(3):
        assert np.abs(g.interior_view(V.rotation(f, l, g))).max() < 1e-12


def test_rotation_tilde_kills_rigid_rotation_field():
    # u = e_3 x x is rotation-equivariant: Omega~_3 u = 0
    g = make_grid(1.0, 9)
    x = g.x
    u = np.stack([-x[1], x[0], np.zeros_like(x[0])])
    assert np.abs(g.interior_view(V.rotation_tilde(u, 2, g))).max() < 1e-13


def test_u_matrices_are_antisymmetric_generators():
    for l in range(3):
        assert np.array_equal(V.U[l], -V.U[l].T)
    # same bracket as the orbital rotations: [Omega_1, Omega_2] = -Omega_3
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        assert np.array_equal(V.U[a] @ V.U[b] - V.U[b] @ V.U[a], -V.U[c])


def test_scaling_on_homogeneous_field():
    # S~ (t^2 x) = t*2t x + x*t^2 - t^2 x = 2 t^2 x
    g = make_grid(1.0, 9)
    f = lambda t, x1, x2, x3: np.stack([t * t * x1, t * t * x2, t * t * x3])
    traj = V.Trajectory.sample(f, g, 0.7, 0.01, 1)
    s = V.apply_generator("S", traj).center
    assert np.allclose(g.interior_view(s), g.interior_view(2 * 0.49 * g.x), atol=1e-12)


def test_apply_generator_at_needs_neighbours():
    g = make_grid(1.0, 5)
    traj = V.Trajectory.sample(V.quadratic_test_field, g, 0.0, 0.1, 1)
    with pytest.raises(V.WindowError):
        V.apply_generator_at("dt", traj, 0)
    d = V.apply_generator_at("dt", traj, 1)
    assert d.shape == traj.center.shape
    assert np.array_equal(V.apply_generator_at("d1", traj, 0), partial(traj.states[0], 0, g))


def test_apply_word_window_check():
    g = make_grid(1.0, 5)
    traj = V.Trajectory.sample(V.quadratic_test_field, g, 0.0, 0.1, 1)
    with pytest.raises(V.WindowError):
        V.apply_word(("dt", "S"), traj)
    with pytest.raises(ValueError):
        V.apply_generator("Q", traj)


def test_commutators_exact_on_quadratic_fields():
    for n in (9, 13, 17):
        traj = V.Trajectory.sample(V.quadratic_test_field, Grid(1.0, n), 0.5, 0.5 * 2.0 / (n - 1), 2)
        for name, row in V.commutator_residuals(traj, 2.0, 1.0, margin=3).items():
            assert row["residual"] <= 1e-12 * max(row["scale"], 1.0), name


def test_leibniz_exact_on_quadratic_fields():
    B = random_symmetric_tensor(3, isotropic=True)
    fu, fv = V.quadratic_pair_fields()
    for n in (9, 13, 17):
        g = Grid(1.0, n)
        dt = 0.5 * g.h
        tu = V.Trajectory.sample(fu, g, 0.5, dt, 2)
        tv = V.Trajectory.sample(fv, g, 0.5, dt, 2)
        rho = 0.1 + 0.02 * g.x[0] - 0.01 * g.x[2]
        for name, row in V.leibniz_residuals(B, tu, tv, rho, margin=3).items():
            assert row["residual"] <= 1e-12 * max(row["scale"], 1.0), name


def test_commutator_orders_on_smooth_field_coarse():
    v = V.verify_commutators(V.smooth_test_field(), levels=(17, 33, 65))
    for name, row in v.items():
        assert row["exact"] or row["orders"][-1] >= 1.8, (name, row)


def test_rotation_rule_for_N_fails_for_anisotropic_null_tensor():
    B = make_null_tensor(7)
    v = V.verify_leibniz_N(B, V.smooth_test_field(), V.smooth_test_field(variant=1),
                           levels=(17, 33), rotations=True)
    rel = [r["residuals"][-1] for k, r in v.items() if k.startswith("O")]
    assert max(rel) > 1e-2


def test_refinement_verdicts_logic():
    table = {"a": [{"residual": 4e-2, "scale": 1.0}, {"residual": 1e-2, "scale": 1.0}],
             "b": [{"residual": 1e-15, "scale": 3.0}, {"residual": 2e-15, "scale": 3.0}],
             "c": [{"residual": 1e-2, "scale": 1.0}, {"residual": 9e-3, "scale": 1.0}]}
    v = V.refinement_verdicts(table)
    assert v["a"]["pass"] and v["a"]["orders"] == [2.0]
    assert v["b"]["pass"] and v["b"]["exact"]
    assert not v["c"]["pass"]


def test_h_lambda_norm_zero_and_homogeneous():
    g = make_grid(2.0, 9)
    z = g.zeros()
    assert V.h_lambda_norm(z, z, 2, g) == 0.0
    f = np.random.default_rng(0).standard_normal((3,) + g.shape)
    a = V.h_lambda_norm(f, f, 2, g)
    assert V.h_lambda_norm(3 * f, 3 * f, 2, g) == pytest.approx(3 * a, rel=1e-12)
    with pytest.raises(ValueError):
        V.h_lambda_norm(f, f, 4, g)


def test_radial_letter_on_homogeneous_function():
    # (r d_r - 1) of a degree-2 homogeneous function is the function itself
    g = make_grid(1.0, 9)
    f = g.x[0] * g.x[1]
    out = V.apply_lambda("R", f, g, vector=False)
    assert np.allclose(g.interior_view(out)[1:-1, 1:-1, 1:-1], g.interior_view(f)[1:-1, 1:-1, 1:-1], atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.1, 10), letter=st.sampled_from(V.LETTERS))
def test_generators_are_linear(a, letter):
    g = make_grid(1.0, 5)
    traj = V.Trajectory.sample(V.smooth_test_field(radius=0.9), g, 0.2, 0.05, 1)
    scaled = traj.with_states(a * traj.states)
    lhs = V.apply_generator(letter, scaled).states
    rhs = a * V.apply_generator(letter, traj).states
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * a)


def test_roundoff_floor_separates_exact_from_truncation():
    g = Grid(2.2, 33)
    traj = V.Trajectory.sample(V.smooth_test_field(), g, 0.5, 0.5 * g.h, 2)
    rows = V.commutator_residuals(traj, 2.0, 1.0)
    for name in ("[dt,L]", "[d1,L]", "[d2,L]", "[d3,L]"):
        assert rows[name]["residual"] < 1e-2 * rows[name]["noise"]
    for name in ("[O1,L]", "[S,L]", "[S,dt2]"):
        assert rows[name]["residual"] > 1e4 * rows[name]["noise"]
