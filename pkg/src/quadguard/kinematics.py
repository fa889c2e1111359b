"""Euler-angle kinematics for the vehicle models.

Angles are ZYX (roll phi about x, pitch theta about y, yaw psi about z);
rotation matrices map body to world.  The Euler-rate matrix G maps Euler-angle
rates to body angular velocity and is singular at pitch = +/-pi/2, so
trajectories keep pitch well inside that; its condition number is tracked by
the filter diagnostics.
"""

from __future__ import annotations

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


def rotation_matrix(euler: np.ndarray) -> np.ndarray:
    """Body-to-world rotation Rz(psi) @ Ry(theta) @ Rx(phi)."""
    phi, theta, psi = euler
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.array([
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ])


def rotation_matrix_partials(euler: np.ndarray) -> np.ndarray:
    """(3, 3, 3) stack of dR/dphi, dR/dtheta, dR/dpsi (exact products)."""
    phi, theta, psi = euler
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    rx = np.array([[1, 0, 0], [0, cf, -sf], [0, sf, cf]])
    ry = np.array([[ct, 0, st], [0, 1, 0], [-st, 0, ct]])
    rz = np.array([[cp, -sp, 0], [sp, cp, 0], [0, 0, 1]])
    drx = np.array([[0, 0, 0], [0, -sf, -cf], [0, cf, -sf]])
    dry = np.array([[-st, 0, ct], [0, 0, 0], [-ct, 0, -st]])
    drz = np.array([[-sp, -cp, 0], [cp, -sp, 0], [0, 0, 0]])
    return np.stack([rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx])


def euler_rate_matrix(euler: np.ndarray) -> np.ndarray:
    """G with omega_body = G @ euler_rates."""
    phi, theta, _ = euler
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    return np.array([
        [1.0, 0.0, -st],
        [0.0, cf, sf * ct],
        [0.0, -sf, cf * ct],
    ])


def euler_rate_inverse(euler: np.ndarray) -> np.ndarray:
    """G^-1 with euler_rates = G^-1 @ omega_body."""
    phi, theta, _ = euler
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    tt = st / ct
    return np.array([
        [1.0, sf * tt, cf * tt],
        [0.0, cf, -sf],
        [0.0, sf / ct, cf / ct],
    ])


def euler_rate_inverse_jacobian(euler: np.ndarray, w: np.ndarray) -> np.ndarray:
    """d(G^-1 w)/d(euler), shape (3, 3); the psi column is zero."""
    phi, theta, _ = euler
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    tt = st / ct
    sec = 1.0 / ct
    w1, w2 = w[1], w[2]
    jac = np.zeros((3, 3))
    jac[0, 0] = cf * tt * w1 - sf * tt * w2
    jac[1, 0] = -sf * w1 - cf * w2
    jac[2, 0] = cf * sec * w1 - sf * sec * w2
    jac[0, 1] = (sf * w1 + cf * w2) * sec * sec
    jac[2, 1] = (sf * w1 + cf * w2) * sec * tt
    return jac


def euler_from_matrix(m: np.ndarray) -> np.ndarray:
    """ZYX extraction; valid away from pitch = +/-pi/2."""
    theta = -np.arcsin(np.clip(m[2, 0], -1.0, 1.0))
    phi = np.arctan2(m[2, 1], m[2, 2])
    psi = np.arctan2(m[1, 0], m[0, 0])
    return np.array([phi, theta, psi])


def euler_from_matrix_differential(m: np.ndarray, dm: np.ndarray) -> np.ndarray:
    """Directional derivative of euler_from_matrix along dm."""
    denom_t = np.sqrt(max(1.0 - m[2, 0] ** 2, 1e-12))
    dtheta = -dm[2, 0] / denom_t
    d_phi_den = m[2, 1] ** 2 + m[2, 2] ** 2
    dphi = (m[2, 2] * dm[2, 1] - m[2, 1] * dm[2, 2]) / max(d_phi_den, 1e-12)
    d_psi_den = m[0, 0] ** 2 + m[1, 0] ** 2
    dpsi = (m[0, 0] * dm[1, 0] - m[1, 0] * dm[0, 0]) / max(d_psi_den, 1e-12)
    return np.array([dphi, dtheta, dpsi])


def rotation_entries(phi: np.ndarray, theta: np.ndarray,
                     psi: np.ndarray) -> tuple:
    """Vectorized rotation-matrix entries for arrays of angles.

    Returns the nine entries r00..r22 as arrays, letting sensor synthesis
    rotate long vector sequences without a per-step matrix loop.
    """
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    r00 = cp * ct
    r01 = cp * st * sf - sp * cf
    r02 = cp * st * cf + sp * sf
    r10 = sp * ct
    r11 = sp * st * sf + cp * cf
    r12 = sp * st * cf - cp * sf
    r20 = -st
    r21 = ct * sf
    r22 = ct * cf
    return r00, r01, r02, r10, r11, r12, r20, r21, r22


def rotate_world_to_body(euler_cols: tuple, u: np.ndarray) -> np.ndarray:
    """Apply R^T per row: u (n,3) world -> body, given rotation_entries."""
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = euler_cols
    ux, uy, uz = u[:, 0], u[:, 1], u[:, 2]
    return np.column_stack([
        r00 * ux + r10 * uy + r20 * uz,
        r01 * ux + r11 * uy + r21 * uz,
        r02 * ux + r12 * uy + r22 * uz,
    ])
