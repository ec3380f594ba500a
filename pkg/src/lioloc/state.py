"""Composite navigation state and its tangent-space operators.

The state couples the IMU pose/velocity in the world frame with body
rates, accelerations, sensor biases, the gravity vector and the
LiDAR-to-IMU extrinsics. Errors live in a fixed 30-dimensional tangent
space; the block layout below is a frozen contract shared with every
covariance matrix and Jacobian in the package.

Error vector layout (one 3-dim block each, in order):

    0:3    d_theta      attitude (so(3), right perturbation)
    3:6    d_pos        position
    6:9    d_vel        velocity
    9:12   d_omega      body angular velocity state
    12:15  d_acc        body linear acceleration state
    15:18  d_bias_gyro
    18:21  d_bias_acc
    21:24  d_gravity
    24:27  d_theta_il   extrinsic rotation (so(3))
    27:30  d_pos_il     extrinsic translation
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import so3

ERROR_DIM = 30
NOISE_DIM = 12  # [n_gyro, n_acc, n_bias_gyro, n_bias_acc]

BLK_ROT = slice(0, 3)
BLK_POS = slice(3, 6)
BLK_VEL = slice(6, 9)
BLK_OMEGA = slice(9, 12)
BLK_ACC = slice(12, 15)
BLK_BG = slice(15, 18)
BLK_BA = slice(18, 21)
BLK_GRAV = slice(21, 24)
BLK_ROT_IL = slice(24, 27)
BLK_POS_IL = slice(27, 30)

GRAVITY = 9.81


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3).copy()
    return a


@dataclass
class NavState:
    """Full manifold state; rotation members are 3x3 matrices."""

    rot_wi: np.ndarray = field(default_factory=lambda: np.eye(3))
    pos_wi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel_wi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity_w: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, -GRAVITY])
    )
    rot_il: np.ndarray = field(default_factory=lambda: np.eye(3))
    pos_il: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def copy(self) -> "NavState":
        return NavState(
            self.rot_wi.copy(),
            self.pos_wi.copy(),
            self.vel_wi.copy(),
            self.omega.copy(),
            self.acc.copy(),
            self.bias_gyro.copy(),
            self.bias_acc.copy(),
            self.gravity_w.copy(),
            self.rot_il.copy(),
            self.pos_il.copy(),
        )

    def lidar_pose(self) -> tuple[np.ndarray, np.ndarray]:
        """World pose of the LiDAR frame through the extrinsics."""
        r = self.rot_wi @ self.rot_il
        p = self.rot_wi @ self.pos_il + self.pos_wi
        return r, p

    @classmethod
    def level_equilibrium(cls) -> "NavState":
        """Stationary level state whose process derivative vanishes."""
        x = cls()
        x.acc = np.array([0.0, 0.0, GRAVITY])
        return x


def boxplus(x: NavState, delta: np.ndarray) -> NavState:
    """Retract a 30-dim tangent increment onto the state.

    Rotation blocks compose on the right (R * exp(d_theta)); vector
    blocks add componentwise.
    """
    d = np.asarray(delta, dtype=float).reshape(ERROR_DIM)
    y = x.copy()
    y.rot_wi = x.rot_wi @ so3.exp_so3(d[BLK_ROT])
    y.pos_wi = x.pos_wi + d[BLK_POS]
    y.vel_wi = x.vel_wi + d[BLK_VEL]
    y.omega = x.omega + d[BLK_OMEGA]
    y.acc = x.acc + d[BLK_ACC]
    y.bias_gyro = x.bias_gyro + d[BLK_BG]
    y.bias_acc = x.bias_acc + d[BLK_BA]
    y.gravity_w = x.gravity_w + d[BLK_GRAV]
    y.rot_il = x.rot_il @ so3.exp_so3(d[BLK_ROT_IL])
    y.pos_il = x.pos_il + d[BLK_POS_IL]
    return y


def boxminus(y: NavState, x: NavState) -> np.ndarray:
    """Local difference: boxplus(x, boxminus(y, x)) == y."""
    d = np.empty(ERROR_DIM)
    d[BLK_ROT] = so3.log_so3(x.rot_wi.T @ y.rot_wi)
    d[BLK_POS] = y.pos_wi - x.pos_wi
    d[BLK_VEL] = y.vel_wi - x.vel_wi
    d[BLK_OMEGA] = y.omega - x.omega
    d[BLK_ACC] = y.acc - x.acc
    d[BLK_BG] = y.bias_gyro - x.bias_gyro
    d[BLK_BA] = y.bias_acc - x.bias_acc
    d[BLK_GRAV] = y.gravity_w - x.gravity_w
    d[BLK_ROT_IL] = so3.log_so3(x.rot_il.T @ y.rot_il)
    d[BLK_POS_IL] = y.pos_il - x.pos_il
    return d


def make_state(
    rot_wi=None,
    pos_wi=None,
    vel_wi=None,
    omega=None,
    acc=None,
    bias_gyro=None,
    bias_acc=None,
    gravity_w=None,
    rot_il=None,
    pos_il=None,
) -> NavState:
    """Convenience constructor accepting any array-likes; None keeps defaults."""
    x = NavState()
    if rot_wi is not None:
        x.rot_wi = np.asarray(rot_wi, dtype=float).reshape(3, 3).copy()
    if pos_wi is not None:
        x.pos_wi = _vec3(pos_wi)
    if vel_wi is not None:
        x.vel_wi = _vec3(vel_wi)
    if omega is not None:
        x.omega = _vec3(omega)
    if acc is not None:
        x.acc = _vec3(acc)
    if bias_gyro is not None:
        x.bias_gyro = _vec3(bias_gyro)
    if bias_acc is not None:
        x.bias_acc = _vec3(bias_acc)
    if gravity_w is not None:
        x.gravity_w = _vec3(gravity_w)
    if rot_il is not None:
        x.rot_il = np.asarray(rot_il, dtype=float).reshape(3, 3).copy()
    if pos_il is not None:
        x.pos_il = _vec3(pos_il)
    return x
