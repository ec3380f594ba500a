"""Rotation algebra on SO(3): exponential/logarithm maps, Jacobians and
the integration factors used by the discrete state transition.

Rotations are plain 3x3 numpy arrays. Tangent vectors are length-3 arrays
in radians (axis * angle).
"""

from __future__ import annotations

import numpy as np

# Below this angle the closed forms degenerate to 0/0; Taylor branches apply.
SMALL_ANGLE = 1e-7


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix such that hat(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula; exp_so3(0) is the identity."""
    phi = np.asarray(phi, dtype=float)
    angle = float(np.linalg.norm(phi))
    k = hat(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    s = np.sin(angle) / angle
    c = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + s * k + c * (k @ k)


def exp_so3_batch(phis: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues over an (n, 3) array; returns (n, 3, 3)."""
    phis = np.asarray(phis, dtype=float)
    n = phis.shape[0]
    angles = np.linalg.norm(phis, axis=1)
    small = angles < SMALL_ANGLE
    s = np.empty(n)
    c = np.empty(n)
    big = ~small
    a = angles[big]
    s[big] = np.sin(a) / a
    c[big] = (1.0 - np.cos(a)) / (a * a)
    s[small] = 1.0
    c[small] = 0.5
    k = np.zeros((n, 3, 3))
    k[:, 0, 1] = -phis[:, 2]
    k[:, 0, 2] = phis[:, 1]
    k[:, 1, 0] = phis[:, 2]
    k[:, 1, 2] = -phis[:, 0]
    k[:, 2, 0] = -phis[:, 1]
    k[:, 2, 1] = phis[:, 0]
    kk = k @ k
    return np.eye(3)[None, :, :] + s[:, None, None] * k + c[:, None, None] * kk


def log_so3(r: np.ndarray) -> np.ndarray:
    """Inverse of exp_so3; returned angle lies in [0, pi].

    The branch near pi recovers the axis from the diagonal, which stays
    well-conditioned where the sine-based formula blows up.
    """
    trace = float(np.trace(r))
    cos_angle = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    angle = float(np.arccos(cos_angle))
    if angle < SMALL_ANGLE:
        return 0.5 * vee(r - r.T)
    if np.pi - angle < 1e-5:
        # axis from the dominant diagonal entry of R = I + 2*sin^2 terms
        d = np.diag(r)
        i = int(np.argmax(d))
        axis = np.empty(3)
        axis[i] = np.sqrt(max(0.0, (d[i] + 1.0) * 0.5))
        j, k = (i + 1) % 3, (i + 2) % 3
        axis[j] = (r[i, j] + r[j, i]) / (4.0 * axis[i])
        axis[k] = (r[i, k] + r[k, i]) / (4.0 * axis[i])
        # sign of the axis from the skew part (vanishes exactly at pi)
        w = vee(r - r.T)
        if np.dot(w, axis) < 0.0:
            axis = -axis
        return angle * axis / np.linalg.norm(axis)
    return angle / (2.0 * np.sin(angle)) * vee(r - r.T)


def left_jacobian(phi: np.ndarray) -> np.ndarray:
    """J_l(phi) = integral of exp(s*hat(phi)) over s in [0, 1]."""
    angle = float(np.linalg.norm(phi))
    k = hat(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    a2 = angle * angle
    c1 = (1.0 - np.cos(angle)) / a2
    c2 = (angle - np.sin(angle)) / (a2 * angle)
    return np.eye(3) + c1 * k + c2 * (k @ k)


def right_jacobian(phi: np.ndarray) -> np.ndarray:
    return left_jacobian(-np.asarray(phi, dtype=float))


def right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(phi))
    k = hat(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 12.0
    a2 = angle * angle
    c = 1.0 / a2 - (1.0 + np.cos(angle)) / (2.0 * angle * np.sin(angle))
    return np.eye(3) + 0.5 * k + c * (k @ k)


def pos_factor(phi: np.ndarray) -> np.ndarray:
    """B(phi) = integral of (1 - s) * exp(s*hat(phi)) over s in [0, 1].

    Second integration factor of the zero-order-hold transition: the
    position increment under a constant body rate is dt^2 * R * B * a.
    """
    angle = float(np.linalg.norm(phi))
    k = hat(phi)
    if angle < SMALL_ANGLE:
        return 0.5 * np.eye(3) + k / 6.0 + (k @ k) / 24.0
    a2 = angle * angle
    c1 = (angle - np.sin(angle)) / (a2 * angle)
    c2 = (0.5 * a2 - (1.0 - np.cos(angle))) / (a2 * a2)
    return 0.5 * np.eye(3) + c1 * k + c2 * (k @ k)


def djl_times(phi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d(J_l(phi) @ v)/d(phi), series to third order in phi.

    Valid for |phi| << 1 (one propagation step); truncation error is
    O(|phi|^4 * |v|), far below Jacobian test tolerances for IMU-rate steps.
    """
    kp = hat(phi)
    kv = hat(v)
    pv = hat(kp @ v)
    ppv = hat(kp @ (kp @ v))
    return (
        -0.5 * kv
        - (pv + kp @ kv) / 6.0
        - (ppv + kp @ pv + kp @ (kp @ kv)) / 24.0
    )


def db_times(phi: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d(pos_factor(phi) @ v)/d(phi), series to third order in phi."""
    kp = hat(phi)
    kv = hat(v)
    pv = hat(kp @ v)
    ppv = hat(kp @ (kp @ v))
    return (
        -kv / 6.0
        - (pv + kp @ kv) / 24.0
        - (ppv + kp @ pv + kp @ (kp @ kv)) / 120.0
    )


def interp_rotation(r0: np.ndarray, r1: np.ndarray, s: float) -> np.ndarray:
    """Geodesic interpolation from r0 (s=0) to r1 (s=1)."""
    return r0 @ exp_so3(s * log_so3(r0.T @ r1))


def quat_from_mat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) with w >= 0 (Shepperd's method)."""
    t = float(np.trace(r))
    if t > 0.0:
        w = np.sqrt(1.0 + t) * 0.5
        f = 0.25 / w
        q = np.array(
            [
                (r[2, 1] - r[1, 2]) * f,
                (r[0, 2] - r[2, 0]) * f,
                (r[1, 0] - r[0, 1]) * f,
                w,
            ]
        )
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        x = np.sqrt(max(0.0, 1.0 + r[i, i] - r[j, j] - r[k, k])) * 0.5
        f = 0.25 / x
        q = np.empty(4)
        q[i] = x
        q[j] = (r[j, i] + r[i, j]) * f
        q[k] = (r[k, i] + r[i, k]) * f
        q[3] = (r[k, j] - r[j, k]) * f
    if q[3] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def mat_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a quaternion (x, y, z, w); normalizes first."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_of(r: np.ndarray) -> float:
    return float(np.arctan2(r[1, 0], r[0, 0]))
