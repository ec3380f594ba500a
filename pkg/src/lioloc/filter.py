"""Iterated error-state Kalman filter over the composite navigation state.

The estimator advances through three mechanisms:

* IMU-driven propagation: each sample advances the state to its stamp
  through the zero-order-hold transition, then corrects the body rate and
  acceleration states with a 6-dim measurement update.
* Constant-velocity fallback: a 100 Hz timer propagates the same
  transition (rates held, inflated process noise) whenever the IMU stream
  goes silent, so a pose is available for every tick.
* Iterated LiDAR update: point-to-plane constraints against both maps are
  re-linearized for a few Gauss-Newton style iterations using the
  state-dimension Kalman gain.

A short history of stamped states supports per-point pose interpolation
for scan motion compensation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import lidar, so3
from .state import (
    BLK_ACC,
    BLK_BA,
    BLK_BG,
    BLK_GRAV,
    BLK_OMEGA,
    BLK_POS,
    BLK_POS_IL,
    BLK_ROT,
    BLK_ROT_IL,
    BLK_VEL,
    ERROR_DIM,
    NOISE_DIM,
    NavState,
    boxminus,
    boxplus,
)

log = logging.getLogger(__name__)

_REG = 1e-12  # prior-covariance ridge used before inversion in the gain


class StaleSampleError(ValueError):
    """Raised when a sample is older than the current filter time."""


class HistoryRangeError(ValueError):
    """Raised when a query time falls outside the state history."""


class Mode(Enum):
    IMU_DRIVEN = "imu"
    CV_FALLBACK = "cv"


@dataclass
class FilterConfig:
    """Noise densities, update tuning and timing for the estimator.

    The n_* densities drive the random walks of the rate/acceleration and
    bias states (continuous-time, applied as sigma^2 * dt per step). The
    imu_meas_* values are the measurement-update noise of the IMU samples.
    """

    std_n_gyro: float = 0.1
    std_n_acc: float = 1.0
    std_nb_gyro: float = 1e-4
    std_nb_acc: float = 1e-3
    lidar_point_noise_std: float = 0.05
    imu_meas_gyro_std: float = 0.005
    imu_meas_acc_std: float = 0.05
    max_iterations: int = 4
    convergence_eps: float = 1e-4
    cv_timer_period: float = 0.01
    imu_timeout: float = 0.02
    history_horizon: float = 0.5
    cv_noise_factor: float = 10.0
    global_weight: float = 1.0
    local_weight: float = 1.0
    estimate_extrinsics: bool = False
    init_rot_std: float = 0.02
    init_pos_std: float = 0.1
    init_vel_std: float = 0.1
    init_omega_std: float = 0.5
    init_acc_std: float = 1.0
    init_bg_std: float = 1e-3
    init_ba_std: float = 1e-2
    init_grav_std: float = 0.05
    init_ext_rot_std: float = 1e-6
    init_ext_pos_std: float = 1e-6

    def validate(self) -> None:
        positive = [
            "std_n_gyro",
            "std_n_acc",
            "std_nb_gyro",
            "std_nb_acc",
            "lidar_point_noise_std",
            "imu_meas_gyro_std",
            "imu_meas_acc_std",
            "convergence_eps",
            "cv_timer_period",
            "imu_timeout",
            "history_horizon",
            "cv_noise_factor",
            "global_weight",
            "local_weight",
            "init_rot_std",
            "init_pos_std",
            "init_vel_std",
            "init_omega_std",
            "init_acc_std",
            "init_bg_std",
            "init_ba_std",
            "init_grav_std",
            "init_ext_rot_std",
            "init_ext_pos_std",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"FilterConfig.{name} must be > 0")
        if self.max_iterations < 1:
            raise ValueError("FilterConfig.max_iterations must be >= 1")

    def initial_covariance(self) -> np.ndarray:
        d = np.empty(ERROR_DIM)
        d[BLK_ROT] = self.init_rot_std
        d[BLK_POS] = self.init_pos_std
        d[BLK_VEL] = self.init_vel_std
        d[BLK_OMEGA] = self.init_omega_std
        d[BLK_ACC] = self.init_acc_std
        d[BLK_BG] = self.init_bg_std
        d[BLK_BA] = self.init_ba_std
        d[BLK_GRAV] = self.init_grav_std
        d[BLK_ROT_IL] = self.init_ext_rot_std
        d[BLK_POS_IL] = self.init_ext_pos_std
        return np.diag(d * d)

    def noise_density(self, cv_mode: bool) -> np.ndarray:
        q = np.empty(NOISE_DIM)
        q[0:3] = self.std_n_gyro
        q[3:6] = self.std_n_acc
        q[6:9] = self.std_nb_gyro
        q[9:12] = self.std_nb_acc
        if cv_mode:
            q[0:6] *= self.cv_noise_factor
        return q * q


@dataclass
class ImuSample:
    t: float
    gyro: np.ndarray
    acc: np.ndarray


@dataclass
class StampedState:
    t: float
    state: NavState
    cov: np.ndarray


@dataclass
class UpdateInfo:
    """Outcome of one iterated LiDAR update."""

    iterations: int = 0
    converged: bool = False
    degraded: bool = False
    diverged: bool = False
    n_global: int = 0
    n_local: int = 0
    delta_norm: float = float("inf")


def process_derivative(x: NavState, dt: float = 0.0) -> np.ndarray:
    """Noise-free process derivative in error-vector ordering.

    The position row carries the half-step term 0.5*(R(a-b_a)+g)*dt so
    that dt * f gives a second-order position increment; with dt=0 it is
    the plain continuous-time derivative.
    """
    f = np.zeros(ERROR_DIM)
    accel_w = x.rot_wi @ (x.acc - x.bias_acc) + x.gravity_w
    f[BLK_ROT] = x.omega - x.bias_gyro
    f[BLK_POS] = x.vel_wi + 0.5 * accel_w * dt
    f[BLK_VEL] = accel_w
    return f


def transition(
    x: NavState, noise: np.ndarray | None, dt: float, cv: bool = False
) -> NavState:
    """Discrete state transition over one step of length dt.

    In the IMU-driven form, attitude, velocity and position are
    integrated exactly under the zero-order-hold assumption (body rate
    and acceleration constant over the step); for small dt*omega this
    reduces to x boxplus dt*f(x). The constant-velocity form (cv=True)
    holds the velocity vector itself: the acceleration state is stale
    once the IMU is gone, so only the pose advances, by the held linear
    and angular velocities. The 12-dim noise vector, when given, drives
    the rate/acceleration and bias random walks.
    """
    om = x.omega - x.bias_gyro
    phi = dt * om
    y = x.copy()
    y.rot_wi = x.rot_wi @ so3.exp_so3(phi)
    if cv:
        y.pos_wi = x.pos_wi + dt * x.vel_wi
    else:
        am = x.acc - x.bias_acc
        jl = so3.left_jacobian(phi)
        bf = so3.pos_factor(phi)
        y.vel_wi = x.vel_wi + x.rot_wi @ (dt * (jl @ am)) + dt * x.gravity_w
        y.pos_wi = (
            x.pos_wi
            + dt * x.vel_wi
            + x.rot_wi @ (dt * dt * (bf @ am))
            + 0.5 * dt * dt * x.gravity_w
        )
    if noise is not None:
        w = np.asarray(noise, dtype=float).reshape(NOISE_DIM)
        y.omega = y.omega + dt * w[0:3]
        y.acc = y.acc + dt * w[3:6]
        y.bias_gyro = y.bias_gyro + dt * w[6:9]
        y.bias_acc = y.bias_acc + dt * w[9:12]
        if cv:
            y.rot_wi = y.rot_wi @ so3.exp_so3(dt * w[0:3])
            y.vel_wi = y.vel_wi + dt * w[3:6]
    return y


def transition_jacobians(
    x: NavState, dt: float, cv: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Error-state and noise Jacobians (F_x, F_w) of the discrete transition.

    The CV form routes the rate/acceleration noise channels into the
    attitude and velocity blocks as well, standing in for the unmodeled
    motion the missing IMU would have reported.
    """
    om = x.omega - x.bias_gyro
    phi = dt * om
    rot = x.rot_wi
    gamma = so3.exp_so3(phi)
    jr = so3.right_jacobian(phi)
    eye3 = np.eye(3)

    fx = np.eye(ERROR_DIM)
    fx[BLK_ROT, BLK_ROT] = gamma.T
    fx[BLK_ROT, BLK_OMEGA] = dt * jr
    fx[BLK_ROT, BLK_BG] = -dt * jr
    fx[BLK_POS, BLK_VEL] = dt * eye3

    fw = np.zeros((ERROR_DIM, NOISE_DIM))
    fw[BLK_OMEGA, 0:3] = dt * eye3
    fw[BLK_ACC, 3:6] = dt * eye3
    fw[BLK_BG, 6:9] = dt * eye3
    fw[BLK_BA, 9:12] = dt * eye3

    if cv:
        fw[BLK_ROT, 0:3] = dt * eye3
        fw[BLK_VEL, 3:6] = dt * eye3
        return fx, fw

    am = x.acc - x.bias_acc
    mv = dt * so3.left_jacobian(phi)
    mp = dt * dt * so3.pos_factor(phi)
    dv = dt * dt * so3.djl_times(phi, am)
    dp = dt * dt * dt * so3.db_times(phi, am)

    fx[BLK_POS, BLK_ROT] = -rot @ so3.hat(mp @ am)
    fx[BLK_POS, BLK_OMEGA] = rot @ dp
    fx[BLK_POS, BLK_ACC] = rot @ mp
    fx[BLK_POS, BLK_BG] = -rot @ dp
    fx[BLK_POS, BLK_BA] = -rot @ mp
    fx[BLK_POS, BLK_GRAV] = 0.5 * dt * dt * eye3

    fx[BLK_VEL, BLK_ROT] = -rot @ so3.hat(mv @ am)
    fx[BLK_VEL, BLK_OMEGA] = rot @ dv
    fx[BLK_VEL, BLK_ACC] = rot @ mv
    fx[BLK_VEL, BLK_BG] = -rot @ dv
    fx[BLK_VEL, BLK_BA] = -rot @ mv
    fx[BLK_VEL, BLK_GRAV] = dt * eye3
    return fx, fw


def compute_gain(h: np.ndarray, r_inv_diag: np.ndarray, p: np.ndarray) -> np.ndarray:
    """State-dimension Kalman gain K = (H'R^-1H + P^-1)^-1 H'R^-1.

    Never forms the m x m innovation matrix, so the cost scales with the
    state dimension regardless of how many constraint rows are stacked.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    m = h.shape[0]
    if m == 0:
        return np.zeros((ERROR_DIM, 0))
    r_inv = np.asarray(r_inv_diag, dtype=float).reshape(m)
    a = h.T * r_inv
    p_reg = p + _REG * np.eye(ERROR_DIM)
    try:
        p_inv = np.linalg.inv(p_reg)
    except np.linalg.LinAlgError:
        log.warning("prior covariance singular; escalating regularization")
        p_reg = p + 1e-6 * np.eye(ERROR_DIM)
        p_inv = np.linalg.inv(p_reg)
    s = a @ h + p_inv
    s = 0.5 * (s + s.T)
    return np.linalg.solve(s, a)


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def _retraction_jac_inv(dxp: np.ndarray) -> np.ndarray:
    """Inverse of d((x_j boxplus d) boxminus x_hat)/dd at d=0.

    Identity except on the two rotation blocks, where it is the SO(3)
    right Jacobian evaluated at the current rotation error.
    """
    j = np.eye(ERROR_DIM)
    j[BLK_ROT, BLK_ROT] = so3.right_jacobian(dxp[BLK_ROT])
    j[BLK_ROT_IL, BLK_ROT_IL] = so3.right_jacobian(dxp[BLK_ROT_IL])
    return j


CorrespondenceProvider = Callable[[NavState], Sequence["lidar.Correspondence"]]


class Estimator:
    """Single-owner filter state machine; mutations are not thread-safe."""

    def __init__(self, cfg: FilterConfig, t0: float, state0: NavState, cov0=None):
        cfg.validate()
        self.cfg = cfg
        cov = cfg.initial_covariance() if cov0 is None else np.array(cov0, dtype=float)
        self.current = StampedState(t0, state0.copy(), cov)
        self.history: list[StampedState] = [StampedState(t0, state0.copy(), cov.copy())]
        self.mode = Mode.CV_FALLBACK
        self.last_imu_t = -np.inf
        self.mode_transitions = 0
        self.stale_rejects = 0

    # -- propagation ------------------------------------------------------

    def _set_mode(self, mode: Mode) -> None:
        if mode is not self.mode:
            self.mode = mode
            self.mode_transitions += 1

    def _propagate(self, dt: float, cv_mode: bool) -> None:
        x = self.current.state
        fx, fw = transition_jacobians(x, dt, cv=cv_mode)
        q = self.cfg.noise_density(cv_mode) / dt if dt > 0 else np.zeros(NOISE_DIM)
        p = fx @ self.current.cov @ fx.T + (fw * q) @ fw.T
        self.current = StampedState(
            self.current.t + dt, transition(x, None, dt, cv=cv_mode), _symmetrize(p)
        )
        self._record()

    def _record(self) -> None:
        self.history.append(
            StampedState(self.current.t, self.current.state, self.current.cov)
        )
        horizon = self.current.t - self.cfg.history_horizon
        while len(self.history) > 2 and self.history[1].t <= horizon:
            self.history.pop(0)

    def _replace_tail(self) -> None:
        if self.history and self.history[-1].t == self.current.t:
            self.history[-1] = StampedState(
                self.current.t, self.current.state, self.current.cov
            )
        else:
            self._record()

    def propagate_imu(self, u: ImuSample) -> None:
        """Advance to the sample stamp; rejects stale or non-finite input."""
        gyro = np.asarray(u.gyro, dtype=float)
        acc = np.asarray(u.acc, dtype=float)
        if not (np.all(np.isfinite(gyro)) and np.all(np.isfinite(acc)) and np.isfinite(u.t)):
            raise ValueError("non-finite IMU sample")
        dt = u.t - self.current.t
        if dt < 0:
            self.stale_rejects += 1
            raise StaleSampleError(
                f"IMU sample at t={u.t:.6f} older than state t={self.current.t:.6f}"
            )
        if dt > 0:
            self._propagate(dt, cv_mode=False)
        self.last_imu_t = u.t
        self._set_mode(Mode.IMU_DRIVEN)

    def propagate_cv(self, dt: float) -> None:
        """Constant-velocity prediction: rates held, process noise inflated."""
        if dt <= 0:
            raise ValueError("propagate_cv requires dt > 0")
        self._propagate(dt, cv_mode=True)
        self._set_mode(Mode.CV_FALLBACK)

    def advance_to(self, t: float) -> None:
        """Propagate to t in the current mode without switching it."""
        dt = t - self.current.t
        if dt <= 0:
            return
        self._propagate(dt, cv_mode=self.mode is Mode.CV_FALLBACK)

    def cv_tick(self, now: float) -> int:
        """Timer hook; returns the number of CV propagation steps executed.

        A no-op while IMU data is fresh. Once the stream is older than
        imu_timeout the state is brought up to `now` in steps of at most
        cv_timer_period, so an output pose exists for every tick.
        """
        if now - self.last_imu_t <= self.cfg.imu_timeout:
            return 0
        steps = 0
        while self.current.t < now - 1e-12:
            step = min(self.cfg.cv_timer_period, now - self.current.t)
            self.propagate_cv(step)
            steps += 1
        if steps:
            self._set_mode(Mode.CV_FALLBACK)
        return steps

    # -- measurement updates ----------------------------------------------

    def imu_update(self, u: ImuSample) -> None:
        """6-dim measurement update from one IMU sample.

        Stacks the rate residual (gyro - b_w - omega) and the acceleration
        residual (acc - b_a - a) and corrects the full state through the
        state-dimension gain.
        """
        gyro = np.asarray(u.gyro, dtype=float)
        acc = np.asarray(u.acc, dtype=float)
        if not (np.all(np.isfinite(gyro)) and np.all(np.isfinite(acc))):
            raise ValueError("non-finite IMU sample")
        x = self.current.state
        r = np.concatenate(
            [gyro - x.bias_gyro - x.omega, acc - x.bias_acc - x.acc]
        )
        h = np.zeros((6, ERROR_DIM))
        h[0:3, BLK_OMEGA] = -np.eye(3)
        h[0:3, BLK_BG] = -np.eye(3)
        h[3:6, BLK_ACC] = -np.eye(3)
        h[3:6, BLK_BA] = -np.eye(3)
        r_inv = np.empty(6)
        r_inv[0:3] = 1.0 / self.cfg.imu_meas_gyro_std**2
        r_inv[3:6] = 1.0 / self.cfg.imu_meas_acc_std**2
        k = compute_gain(h, r_inv, self.current.cov)
        delta = -(k @ r)
        p = _symmetrize((np.eye(ERROR_DIM) - k @ h) @ self.current.cov)
        self.current = StampedState(self.current.t, boxplus(x, delta), p)
        self._replace_tail()

    def lidar_update(self, provider: CorrespondenceProvider) -> UpdateInfo:
        """Iterated point-to-plane update against both maps.

        Re-associates at each iterate, solves with the state-dimension
        gain plus the retraction term that accounts for the moved
        linearization point, and applies the posterior covariance once at
        convergence. Keeps the prior on empty association or divergence.
        """
        cfg = self.cfg
        info = UpdateInfo()
        x_hat = self.current.state
        p_prior = self.current.cov
        x_j = x_hat
        k = h = p_j = None
        prev_norm = np.inf
        grow = 0
        eye = np.eye(ERROR_DIM)
        for it in range(cfg.max_iterations):
            cs = provider(x_j)
            if len(cs) == 0:
                if it == 0:
                    info.degraded = True
                    log.warning("lidar update skipped: no correspondences")
                    return info
                break
            h, r, r_inv = lidar.build_system(
                x_j,
                cs,
                global_weight=cfg.global_weight,
                local_weight=cfg.local_weight,
                estimate_extrinsics=cfg.estimate_extrinsics,
            )
            info.n_global = sum(1 for c in cs if c.source == lidar.GLOBAL)
            info.n_local = len(cs) - info.n_global
            dxp = boxminus(x_j, x_hat)
            j_inv = _retraction_jac_inv(dxp)
            p_j = _symmetrize(j_inv @ p_prior @ j_inv.T)
            k = compute_gain(h, r_inv, p_j)
            delta = -(k @ r) - (eye - k @ h) @ (j_inv @ dxp)
            x_j = boxplus(x_j, delta)
            info.iterations = it + 1
            info.delta_norm = float(np.linalg.norm(delta))
            if info.delta_norm > prev_norm:
                grow += 1
                if grow >= 3:
                    info.diverged = True
                    log.warning("lidar update diverged; keeping prior")
                    return info
            else:
                grow = 0
            prev_norm = info.delta_norm
            if info.delta_norm < cfg.convergence_eps:
                info.converged = True
                break
        if k is None:
            info.degraded = True
            return info
        p_post = _symmetrize((eye - k @ h) @ p_j)
        self.current = StampedState(self.current.t, x_j, p_post)
        self._replace_tail()
        return info

    # -- history queries ----------------------------------------------------

    def state_at(self, t: float) -> NavState:
        """Interpolated state at time t: geodesic rotations, linear vectors.

        Exact at stored stamps; extrapolates at most one cv_timer_period
        past the newest entry and never before the oldest.
        """
        hist = self.history
        t0, t1 = hist[0].t, hist[-1].t
        if t < t0 - 1e-12 or t > t1 + self.cfg.cv_timer_period + 1e-12:
            raise HistoryRangeError(
                f"t={t:.6f} outside state history [{t0:.6f}, {t1:.6f}]"
            )
        times = [s.t for s in hist]
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = max(0, min(i, len(hist) - 2)) if len(hist) > 1 else 0
        if len(hist) == 1:
            return hist[0].state.copy()
        a, b = hist[i], hist[i + 1]
        if b.t == a.t:
            return b.state.copy()
        s = (t - a.t) / (b.t - a.t)
        xa, xb = a.state, b.state
        out = xa.copy()
        out.rot_wi = so3.interp_rotation(xa.rot_wi, xb.rot_wi, s)
        out.rot_il = so3.interp_rotation(xa.rot_il, xb.rot_il, s)
        for name in (
            "pos_wi",
            "vel_wi",
            "omega",
            "acc",
            "bias_gyro",
            "bias_acc",
            "gravity_w",
            "pos_il",
        ):
            va = getattr(xa, name)
            vb = getattr(xb, name)
            setattr(out, name, (1.0 - s) * va + s * vb)
        return out

    def poses_at(self, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched world IMU poses at the given times.

        Returns (rotations (n,3,3), positions (n,3), ok mask). Times
        outside the permitted history window are flagged False and get the
        nearest bracket state instead.
        """
        ts = np.asarray(ts, dtype=float)
        hist = self.history
        times = np.array([s.t for s in hist])
        n = ts.shape[0]
        ok = (ts >= times[0] - 1e-12) & (
            ts <= times[-1] + self.cfg.cv_timer_period + 1e-12
        )
        if len(hist) == 1:
            rots = np.broadcast_to(hist[0].state.rot_wi, (n, 3, 3)).copy()
            poss = np.broadcast_to(hist[0].state.pos_wi, (n, 3)).copy()
            return rots, poss, ok & np.isclose(ts, times[0])
        idx = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, len(hist) - 2)
        rots = np.empty((n, 3, 3))
        poss = np.empty((n, 3))
        for i in np.unique(idx):
            sel = idx == i
            a, b = hist[i], hist[i + 1]
            span = b.t - a.t
            s = (ts[sel] - a.t) / span if span > 0 else np.zeros(int(sel.sum()))
            phi = so3.log_so3(a.state.rot_wi.T @ b.state.rot_wi)
            rots[sel] = a.state.rot_wi @ so3.exp_so3_batch(s[:, None] * phi)
            poss[sel] = (1.0 - s)[:, None] * a.state.pos_wi + s[:, None] * b.state.pos_wi
        return rots, poss, ok
