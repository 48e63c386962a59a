import math

import numpy as np
import pytest

from oracles import ode_affine_map, ode_flow, rk4_affine_map
from switchsynth.affine_flow import AffineMap, ModeDynamics, apply_point, compose, discretize
from switchsynth.converter import mode_dynamics
from switchsynth.switched_core import Mode


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_zero_dynamics_is_identity():
    m = discretize(ModeDynamics(np.zeros((3, 3)), np.zeros(3)), 0.1)
    np.testing.assert_array_equal(m.C, np.eye(3))
    np.testing.assert_array_equal(m.d, np.zeros(3))


def test_constant_rate_integration():
    m = discretize(ModeDynamics(np.zeros((2, 2)), [1.0, 2.0]), 0.5)
    np.testing.assert_allclose(m.C, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(m.d, [0.5, 1.0], rtol=1e-14)


def test_scalar_closed_form():
    # x(t) = e^-t x0 + (1 - e^-t); at t = ln 2 both halves are 1/2
    m = discretize(ModeDynamics([[-1.0]], [1.0]), math.log(2))
    np.testing.assert_allclose(m.C, [[0.5]], rtol=1e-14)
    np.testing.assert_allclose(m.d, [0.5], rtol=1e-14)


def test_five_level_mode_0000_against_ode(params5):
    dyn = mode_dynamics(params5, Mode.parse("0000"))
    m = discretize(dyn, params5.tau)
    C_ref, d_ref = ode_affine_map(dyn.A, dyn.b, params5.tau)
    assert _rel(np.column_stack([m.C, m.d]), np.column_stack([C_ref, d_ref])) <= 1e-9


def test_five_level_point_frozen(params5):
    # Mode 0000 decouples: v_j decays with RC = 24 s, i relaxes to -2 A with L/R = 4 ms.
    # Frozen from a 30-digit mpmath evaluation of the closed form.
    expected = [149.984375813773827, 99.989583875849218, 49.994791937924609, -2.535261428518990]
    dyn = mode_dynamics(params5, Mode.parse("0000"))
    x = apply_point(discretize(dyn, 0.0025), [150, 100, 50, -3])
    np.testing.assert_allclose(x, expected, rtol=1e-13, atol=1e-12)
    np.testing.assert_allclose(x, ode_flow(dyn.A, dyn.b, [150, 100, 50, -3], 0.0025), atol=1e-6)


def test_singular_matrix_is_fine():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    m = discretize(ModeDynamics(A, [0.0, 1.0]), 2.0)
    # double integrator with unit acceleration
    np.testing.assert_allclose(m.C, [[1, 2], [0, 1]], atol=1e-14)
    np.testing.assert_allclose(m.d, [2.0, 2.0], atol=1e-14)


def test_compose_identity_both_sides():
    rng = np.random.default_rng(0)
    m = AffineMap(rng.normal(size=(3, 3)), rng.normal(size=3))
    ident = AffineMap.identity(3)
    assert compose(ident, m) == m
    assert compose(m, ident) == m


def test_compose_pointwise():
    rng = np.random.default_rng(1)
    v = rng.normal(size=4)
    m = compose(AffineMap(2 * np.eye(4), np.zeros(4)), AffineMap(np.eye(4), v))
    for _ in range(10):
        x = rng.normal(size=4)
        np.testing.assert_allclose(apply_point(m, x), 2 * x + v, rtol=1e-15)


def test_apply_point_constant_map():
    m = AffineMap(np.zeros((2, 2)), [5.0, 5.0])
    np.testing.assert_array_equal(apply_point(m, [123.0, -4.0]), [5.0, 5.0])
    np.testing.assert_array_equal(apply_point(AffineMap.identity(3), [1, 2, 3]), [1, 2, 3])


def test_errors():
    with pytest.raises(ValueError):
        ModeDynamics([[np.nan]], [0.0])
    with pytest.raises(ValueError):
        ModeDynamics(np.eye(2), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        discretize(ModeDynamics([[1.0]], [0.0]), 0.0)
    with pytest.raises(FloatingPointError):
        discretize(ModeDynamics([[1e6]], [0.0]), 1.0)
    with pytest.raises(ValueError):
        compose(AffineMap.identity(2), AffineMap.identity(3))
    with pytest.raises(ValueError):
        apply_point(AffineMap.identity(2), [1.0, 2.0, 3.0])


@pytest.mark.parametrize("seed", range(20))
def test_compose_matches_sequential_application(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    f = AffineMap(rng.normal(size=(n, n)), rng.normal(size=n))
    g = AffineMap(rng.normal(size=(n, n)), rng.normal(size=n))
    x = rng.normal(size=n)
    lhs = apply_point(compose(f, g), x)
    rhs = apply_point(g, apply_point(f, x))
    assert _rel(lhs, rhs) <= 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_semigroup(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(1, 7))
    dyn = ModeDynamics(rng.normal(size=(n, n)), rng.normal(size=n))
    t1, t2 = rng.uniform(0.05, 0.5, size=2)
    whole = discretize(dyn, t1 + t2)
    parts = compose(discretize(dyn, t1), discretize(dyn, t2))
    assert _rel(np.column_stack([parts.C, parts.d]), np.column_stack([whole.C, whole.d])) <= 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_fixed_step_oracle(seed):
    rng = np.random.default_rng(200 + seed)
    n = int(rng.integers(1, 7))
    dyn = ModeDynamics(rng.normal(size=(n, n)), rng.normal(size=n))
    m = discretize(dyn, 0.3)
    C_ref, d_ref = rk4_affine_map(dyn.A, dyn.b, 0.3, steps=600)
    assert _rel(np.column_stack([m.C, m.d]), np.column_stack([C_ref, d_ref])) <= 1e-6
