"""Rotation and Euler-rate kinematics: analytic partials vs finite differences."""

import numpy as np

from quadguard.kinematics import (
    euler_from_matrix,
    euler_from_matrix_differential,
    euler_rate_inverse,
    euler_rate_inverse_jacobian,
    euler_rate_matrix,
    rotation_entries,
    rotation_matrix,
    rotation_matrix_partials,
    rotate_world_to_body,
    wrap_angle,
)

RNG = np.random.default_rng(7)


def random_euler(n=1, pitch_cap=1.2):
    """Euler samples with pitch kept away from the +-pi/2 singularity."""
    e = RNG.uniform(-np.pi, np.pi, size=(n, 3))
    e[:, 1] = RNG.uniform(-pitch_cap, pitch_cap, size=n)
    return e if n > 1 else e[0]


def test_wrap_angle_range_and_fixpoints():
    x = np.linspace(-12.0, 12.0, 2001)
    w = wrap_angle(x)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    assert np.allclose(np.sin(w), np.sin(x), atol=1e-12)
    assert np.allclose(np.cos(w), np.cos(x), atol=1e-12)
    # pi maps to itself (half-open on the negative side), 2 pi to zero
    assert wrap_angle(np.pi) == np.pi
    assert wrap_angle(-np.pi) == np.pi
    assert abs(wrap_angle(2 * np.pi)) < 1e-12
    assert abs(wrap_angle(3 * np.pi) - np.pi) < 1e-9


def test_rotation_matrix_is_special_orthogonal():
    for e in random_euler(20):
        m = rotation_matrix(e)
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(m) - 1.0) < 1e-12


def test_rotation_matrix_partials_match_finite_differences():
    h = 1e-6
    for e in random_euler(10):
        parts = rotation_matrix_partials(e)
        for axis in range(3):
            ep, em = e.copy(), e.copy()
            ep[axis] += h
            em[axis] -= h
            fd = (rotation_matrix(ep) - rotation_matrix(em)) / (2 * h)
            assert np.allclose(parts[axis], fd, atol=1e-7)


def test_euler_rate_matrices_are_inverses():
    for e in random_euler(20):
        g = euler_rate_matrix(e)
        gi = euler_rate_inverse(e)
        assert np.allclose(gi @ g, np.eye(3), atol=1e-10)


def test_euler_rate_inverse_jacobian_matches_finite_differences():
    h = 1e-6
    for e in random_euler(10):
        w = RNG.uniform(-1.0, 1.0, 3)
        jac = euler_rate_inverse_jacobian(e, w)
        for axis in range(3):
            ep, em = e.copy(), e.copy()
            ep[axis] += h
            em[axis] -= h
            fd = (euler_rate_inverse(ep) @ w - euler_rate_inverse(em) @ w) / (2 * h)
            assert np.allclose(jac[:, axis], fd, atol=1e-6)


def test_euler_matrix_roundtrip():
    for e in random_euler(30):
        back = euler_from_matrix(rotation_matrix(e))
        assert np.allclose(wrap_angle(back - e), 0.0, atol=1e-10)


def test_euler_from_matrix_differential_matches_finite_differences():
    h = 1e-6
    for e in random_euler(10):
        de = RNG.uniform(-1.0, 1.0, 3)
        m = rotation_matrix(e)
        parts = rotation_matrix_partials(e)
        dm = sum(parts[i] * de[i] for i in range(3))
        analytic = euler_from_matrix_differential(m, dm)
        fd = (euler_from_matrix(rotation_matrix(e + h * de))
              - euler_from_matrix(rotation_matrix(e - h * de))) / (2 * h)
        assert np.allclose(analytic, fd, atol=1e-6)


def test_rotation_entries_match_matrix_rows():
    e = random_euler(50)
    cols = rotation_entries(e[:, 0], e[:, 1], e[:, 2])
    for k in range(50):
        m = rotation_matrix(e[k])
        flat = np.array([c[k] for c in cols]).reshape(3, 3)
        assert np.allclose(flat, m, atol=1e-12)


def test_rotate_world_to_body_applies_transpose():
    e = random_euler(25)
    u = RNG.normal(size=(25, 3))
    cols = rotation_entries(e[:, 0], e[:, 1], e[:, 2])
    out = rotate_world_to_body(cols, u)
    for k in range(25):
        assert np.allclose(out[k], rotation_matrix(e[k]).T @ u[k], atol=1e-12)


def test_euler_rate_map_consistent_with_rotation_derivative():
    # omega_body from G(q) q_dot must equal the skew part of R^T dR/dt
    dt = 1e-5
    for e in random_euler(10):
        de = RNG.uniform(-1.0, 1.0, 3)
        omega = euler_rate_matrix(e) @ de
        rdot = (rotation_matrix(e + dt * de) - rotation_matrix(e - dt * de)) / (2 * dt)
        skew = rotation_matrix(e).T @ rdot
        recovered = np.array([skew[2, 1], skew[0, 2], skew[1, 0]])
        assert np.allclose(recovered, omega, atol=1e-7)
        assert np.allclose(skew + skew.T, 0.0, atol=1e-7)
