"""Synthetic world, trajectory and sensor generation.

Produces ground truth plus 10 Hz LiDAR / 100 Hz IMU streams with
injectable dropouts over planar rectangle worlds, rich enough to exercise
motion compensation, dual-map association and the CV fallback at desk
scale. Everything is deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import so3
from .lidar import Scan
from .state import GRAVITY, NavState, make_state

BOX_ROOM = "box_room"
PORT_LIKE = "port_like"
SMOOTH_SPLINE = "smooth_spline"
PIECEWISE_ARC = "piecewise_arc"


@dataclass
class Rect:
    """Bounded rectangle: origin plus two independent edge vectors."""

    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray


@dataclass
class World:
    rects: list[Rect]
    kind: str
    seed: int
    params: dict = field(default_factory=dict)
    _arrays: tuple | None = None

    def expected_rect_count(self) -> int:
        """Closed-form rectangle count from the generator parameters."""
        if self.kind == BOX_ROOM:
            return 6
        p = self.params
        return 1 + 5 * p["n_containers"] + 4 * p["n_pillars"]

    def arrays(self):
        """Stacked rectangle arrays for vectorized ray casting."""
        if self._arrays is None:
            o = np.stack([r.origin for r in self.rects])
            e1 = np.stack([r.e1 for r in self.rects])
            e2 = np.stack([r.e2 for r in self.rects])
            n = np.cross(e1, e2)
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            inv1 = 1.0 / np.einsum("ij,ij->i", e1, e1)
            inv2 = 1.0 / np.einsum("ij,ij->i", e2, e2)
            self._arrays = (o, e1, e2, n, inv1, inv2)
        return self._arrays


def _box_rects(lo: np.ndarray, hi: np.ndarray, top: bool = True) -> list[Rect]:
    """Axis-aligned box as 4 side rectangles plus an optional top."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = hi - lo
    ex = np.array([d[0], 0.0, 0.0])
    ey = np.array([0.0, d[1], 0.0])
    ez = np.array([0.0, 0.0, d[2]])
    rects = [
        Rect(lo.copy(), ex, ez),  # y = lo
        Rect(np.array([lo[0], hi[1], lo[2]]), ex, ez),  # y = hi
        Rect(lo.copy(), ey, ez),  # x = lo
        Rect(np.array([hi[0], lo[1], lo[2]]), ey, ez),  # x = hi
    ]
    if top:
        rects.append(Rect(np.array([lo[0], lo[1], hi[2]]), ex, ey))
    return rects


def gen_world(kind: str, seed: int = 0, **params) -> World:
    """Deterministic world generator.

    BOX_ROOM: six rectangles forming a closed room. PORT_LIKE: a large
    ground plane with rows of container-scale boxes and thin pillars laid
    out from the seed.
    """
    if kind == BOX_ROOM:
        w = params.get("width", 24.0)
        h = params.get("depth", 16.0)
        z = params.get("height", 6.0)
        lo = np.array([-w / 2, -h / 2, 0.0])
        hi = np.array([w / 2, h / 2, z])
        rects = _box_rects(lo, hi, top=True)
        rects.append(Rect(lo.copy(), np.array([w, 0, 0.0]), np.array([0, h, 0.0])))
        return World(rects, kind, seed, {"width": w, "depth": h, "height": z})
    if kind == PORT_LIKE:
        width = params.get("width", 200.0)
        depth = params.get("depth", 140.0)
        rows = params.get("rows", 4)
        per_row = params.get("per_row", 6)
        n_pillars = params.get("n_pillars", 6)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
        rects = [
            Rect(
                np.array([-width / 2, -depth / 2, 0.0]),
                np.array([width, 0.0, 0.0]),
                np.array([0.0, depth, 0.0]),
            )
        ]
        row_ys = np.linspace(-depth / 2 + 25.0, depth / 2 - 25.0, rows)
        for y in row_ys:
            xs = np.linspace(-width / 2 + 25.0, width / 2 - 25.0, per_row)
            for x in xs:
                jx, jy = rng.uniform(-3.0, 3.0, size=2)
                stack = rng.integers(1, 4)
                cx, cy = x + jx, y + jy
                lo = np.array([cx - 6.1, cy - 1.25, 0.0])
                hi = np.array([cx + 6.1, cy + 1.25, 2.6 * stack])
                rects.extend(_box_rects(lo, hi, top=True))
        for _ in range(n_pillars):
            px = rng.uniform(-width / 2 + 15.0, width / 2 - 15.0)
            py = rng.uniform(-depth / 2 + 15.0, depth / 2 - 15.0)
            lo = np.array([px - 0.5, py - 0.5, 0.0])
            hi = np.array([px + 0.5, py + 0.5, 12.0])
            rects.extend(_box_rects(lo, hi, top=False))
        return World(
            rects,
            kind,
            seed,
            {
                "width": width,
                "depth": depth,
                "n_containers": rows * per_row,
                "n_pillars": n_pillars,
            },
        )
    raise ValueError(f"unknown world kind: {kind}")


def sample_world_points(world: World, pitch: float) -> np.ndarray:
    """Grid-sample every rectangle at roughly the given pitch (prior map)."""
    pts = []
    for r in world.rects:
        l1 = np.linalg.norm(r.e1)
        l2 = np.linalg.norm(r.e2)
        n1 = max(2, int(round(l1 / pitch)) + 1)
        n2 = max(2, int(round(l2 / pitch)) + 1)
        s1 = np.linspace(0.0, 1.0, n1)
        s2 = np.linspace(0.0, 1.0, n2)
        g1, g2 = np.meshgrid(s1, s2, indexing="ij")
        pts.append(
            r.origin[None, :]
            + g1.reshape(-1, 1) * r.e1[None, :]
            + g2.reshape(-1, 1) * r.e2[None, :]
        )
    return np.concatenate(pts)


# -- trajectories ---------------------------------------------------------------


@dataclass
class TrajectorySpec:
    """Waypoint path traversed at constant speed (optional ramp-in).

    Waypoints are (position, yaw) pairs. The arc profile chains straight
    lines and circular arcs, starting from the first waypoint's yaw; the
    spline profile follows the tangent of a cubic spline through the
    positions. A closed path (last waypoint == first) wraps around to fill
    the duration.
    """

    waypoints: list[tuple[np.ndarray, float]]
    speed: float
    duration: float
    profile: str = SMOOTH_SPLINE
    ramp_time: float = 0.0

    def validate(self) -> None:
        if self.speed <= 0:
            raise ValueError("speed must be > 0")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if len(self.waypoints) < 2:
            raise ValueError("at least two waypoints required")
        if self.profile not in (SMOOTH_SPLINE, PIECEWISE_ARC):
            raise ValueError(f"unknown profile: {self.profile}")


@dataclass
class GroundTruth:
    """Sampled truth: poses, velocities and body rates on a uniform grid.

    When produced by gen_truth, an exact analytic evaluator backs
    pose_at(); truth loaded from files falls back to interpolation.
    """

    t: np.ndarray
    pos: np.ndarray  # (n, 3)
    rot: np.ndarray  # (n, 3, 3)
    vel: np.ndarray  # (n, 3)
    omega: np.ndarray  # (n, 3) body frame
    acc_w: np.ndarray  # (n, 3) world-frame dv/dt
    _exact: object = None

    def pose_at(self, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(rotations (n,3,3), positions (n,3)) at arbitrary times."""
        ts = np.asarray(ts, dtype=float)
        if self._exact is not None:
            pos, rot, _, _, _ = self._exact(ts)
            return rot, pos
        idx = np.clip(
            np.searchsorted(self.t, ts, side="right") - 1, 0, len(self.t) - 2
        )
        t0 = self.t[idx]
        span = self.t[idx + 1] - t0
        s = np.where(span > 0, (ts - t0) / np.where(span > 0, span, 1.0), 0.0)
        pos = (1 - s)[:, None] * self.pos[idx] + s[:, None] * self.pos[idx + 1]
        rot = np.empty((len(ts), 3, 3))
        for i in range(len(ts)):
            rot[i] = so3.interp_rotation(
                self.rot[idx[i]], self.rot[idx[i] + 1], float(s[i])
            )
        return rot, pos


def _speed_law(speed: float, ramp: float):
    """Returns closed-form (v(t), s(t), vdot(t)) callables."""

    def v(t):
        t = np.asarray(t, dtype=float)
        if ramp <= 0:
            return np.full_like(t, speed)
        tt = np.minimum(t, ramp)
        return speed * 0.5 * (1.0 - np.cos(np.pi * tt / ramp))

    def s(t):
        t = np.asarray(t, dtype=float)
        if ramp <= 0:
            return speed * t
        tt = np.minimum(t, ramp)
        s_ramp = speed * 0.5 * (tt - ramp / np.pi * np.sin(np.pi * tt / ramp))
        return s_ramp + speed * np.maximum(t - ramp, 0.0)

    def vdot(t):
        t = np.asarray(t, dtype=float)
        if ramp <= 0:
            return np.zeros_like(t)
        out = np.zeros_like(t)
        m = t < ramp
        out[m] = speed * 0.5 * np.pi / ramp * np.sin(np.pi * t[m] / ramp)
        return out

    return v, s, vdot


class _ArcPath:
    """Chained line/arc segments in the plane at constant altitude."""

    def __init__(self, waypoints):
        z0 = float(waypoints[0][0][2])
        p = np.asarray(waypoints[0][0][:2], dtype=float)
        psi = float(waypoints[0][1])
        self.z = z0
        self.segments = []  # (s0, kind, p0, psi0, radius, length)
        s0 = 0.0
        for wp, _ in waypoints[1:]:
            wp = np.asarray(wp, dtype=float)
            if abs(float(wp[2]) - z0) > 1e-9:
                raise ValueError("arc profile requires waypoints at equal height")
            d = wp[:2] - p
            chord = float(np.linalg.norm(d))
            if chord < 1e-9:
                raise ValueError("coincident waypoints")
            t_hat = np.array([np.cos(psi), np.sin(psi)])
            n_hat = np.array([-np.sin(psi), np.cos(psi)])
            a = float(d @ t_hat)
            c = float(d @ n_hat)
            if abs(c) < 1e-12:
                if a <= 0:
                    raise ValueError("waypoint behind current heading")
                self.segments.append((s0, "line", p.copy(), psi, 0.0, a))
                s0 += a
            else:
                radius = chord * chord / (2.0 * c)
                dpsi = 2.0 * np.arctan2(c, a)
                length = radius * dpsi
                if length <= 0:
                    raise ValueError("degenerate arc segment")
                self.segments.append((s0, "arc", p.copy(), psi, radius, length))
                s0 += length
                psi += dpsi
            p = wp[:2].copy()
        self.length = s0
        start = np.asarray(waypoints[0][0][:2], dtype=float)
        self.closed = float(np.linalg.norm(p - start)) < 1e-6

    def eval(self, s: np.ndarray):
        """(position (n,3), yaw (n,), curvature (n,)) at arc length s."""
        s = np.asarray(s, dtype=float)
        if self.closed:
            s = np.mod(s, self.length)
        elif np.any(s > self.length + 1e-9):
            raise ValueError("requested arc length beyond open path end")
        starts = np.array([seg[0] for seg in self.segments])
        idx = np.clip(
            np.searchsorted(starts, s, side="right") - 1, 0, len(self.segments) - 1
        )
        pos = np.empty((len(s), 3))
        yaw = np.empty(len(s))
        kappa = np.empty(len(s))
        pos[:, 2] = self.z
        for i in np.unique(idx):
            sel = idx == i
            s0, kind, p0, psi0, radius, _ = self.segments[i]
            sigma = s[sel] - s0
            if kind == "line":
                pos[sel, 0] = p0[0] + sigma * np.cos(psi0)
                pos[sel, 1] = p0[1] + sigma * np.sin(psi0)
                yaw[sel] = psi0
                kappa[sel] = 0.0
            else:
                phi = sigma / radius
                center = p0 + radius * np.array([-np.sin(psi0), np.cos(psi0)])
                rel = p0 - center
                cos_p, sin_p = np.cos(phi), np.sin(phi)
                pos[sel, 0] = center[0] + cos_p * rel[0] - sin_p * rel[1]
                pos[sel, 1] = center[1] + sin_p * rel[0] + cos_p * rel[1]
                yaw[sel] = psi0 + phi
                kappa[sel] = 1.0 / radius
        return pos, yaw, kappa


class _SplinePath:
    """Cubic spline through waypoints, chord-length parametrized."""

    def __init__(self, waypoints):
        pts = np.stack([np.asarray(p, dtype=float) for p, _ in waypoints])
        closed = np.linalg.norm(pts[0] - pts[-1]) < 1e-9
        chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(chords < 1e-9):
            raise ValueError("coincident waypoints")
        u = np.concatenate([[0.0], np.cumsum(chords)])
        bc = "periodic" if closed else "natural"
        self.spline = CubicSpline(u, pts, bc_type=bc, axis=0)
        self.u_max = u[-1]
        self.closed = closed
        # dense arc-length table for the u(s) inversion
        nu = max(2000, 40 * len(pts))
        ug = np.linspace(0.0, self.u_max, nu)
        g = np.linalg.norm(self.spline(ug, 1), axis=1)
        ds = np.diff(ug) * 0.5 * (g[1:] + g[:-1])
        self.s_grid = np.concatenate([[0.0], np.cumsum(ds)])
        self.u_grid = ug
        self.length = float(self.s_grid[-1])

    def u_of_s(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.closed:
            s = np.mod(s, self.length)
        elif np.any(s > self.length + 1e-6):
            raise ValueError("requested arc length beyond open path end")
        u = np.interp(s, self.s_grid, self.u_grid)
        # two Newton refinements against the dense table
        for _ in range(2):
            su = np.interp(u, self.u_grid, self.s_grid)
            g = np.linalg.norm(np.atleast_2d(self.spline(u, 1)), axis=1)
            u = np.clip(u - (su - s) / np.maximum(g, 1e-9), 0.0, self.u_max)
        return u


def gen_truth(spec: TrajectorySpec, rate: float = 200.0) -> GroundTruth:
    """Analytic ground truth sampled at `rate` (>= 200 Hz by default).

    Attitude is yaw-only (tangent heading); velocities, world
    accelerations and body rates are analytic derivatives of the path.
    """
    spec.validate()
    v_fn, s_fn, vdot_fn = _speed_law(spec.speed, spec.ramp_time)
    if spec.profile == PIECEWISE_ARC:
        path = _ArcPath(spec.waypoints)

        def evaluate(ts):
            ts = np.atleast_1d(np.asarray(ts, dtype=float))
            s = s_fn(ts)
            pos, yaw, kappa = path.eval(s)
            v = v_fn(ts)
            vdot = vdot_fn(ts)
            t_hat = np.stack([np.cos(yaw), np.sin(yaw), np.zeros_like(yaw)], 1)
            n_hat = np.stack([-np.sin(yaw), np.cos(yaw), np.zeros_like(yaw)], 1)
            vel = v[:, None] * t_hat
            acc = vdot[:, None] * t_hat + (v * v * kappa)[:, None] * n_hat
            omega = np.stack(
                [np.zeros_like(yaw), np.zeros_like(yaw), v * kappa], 1
            )
            rot = _yaw_rots(yaw)
            return pos, rot, vel, omega, acc

        total_len = path.length if path.closed else path.length + 1e-9
    else:
        path = _SplinePath(spec.waypoints)

        def evaluate(ts):
            ts = np.atleast_1d(np.asarray(ts, dtype=float))
            s = s_fn(ts)
            u = path.u_of_s(s)
            q1 = np.atleast_2d(path.spline(u, 1))
            q2 = np.atleast_2d(path.spline(u, 2))
            g = np.linalg.norm(q1, axis=1)
            v = v_fn(ts)
            vdot = vdot_fn(ts)
            udot = v / g
            gdot = np.einsum("ij,ij->i", q1, q2) * udot / g
            uddot = vdot / g - v * gdot / (g * g)
            pos = np.atleast_2d(path.spline(u))
            vel = q1 * udot[:, None]
            acc = q2 * (udot * udot)[:, None] + q1 * uddot[:, None]
            hxy = q1[:, 0] ** 2 + q1[:, 1] ** 2
            yaw = np.arctan2(q1[:, 1], q1[:, 0])
            yaw_rate = (
                (q1[:, 0] * q2[:, 1] - q1[:, 1] * q2[:, 0]) / hxy * udot
            )
            omega = np.stack(
                [np.zeros_like(yaw), np.zeros_like(yaw), yaw_rate], 1
            )
            rot = _yaw_rots(yaw)
            return pos, rot, vel, omega, acc

        total_len = path.length if path.closed else path.length + 1e-9
    needed = float(s_fn(np.array([spec.duration]))[0])
    if not path.closed and needed > total_len:
        raise ValueError(
            f"open path length {path.length:.2f} m too short for "
            f"{needed:.2f} m of travel"
        )
    n = int(np.floor(spec.duration * rate + 1e-9)) + 1
    ts = np.arange(n) / rate
    pos, rot, vel, omega, acc = evaluate(ts)
    return GroundTruth(ts, pos, rot, vel, omega, acc, _exact=evaluate)


def _yaw_rots(yaw: np.ndarray) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.zeros((len(yaw), 3, 3))
    rot[:, 0, 0] = c
    rot[:, 0, 1] = -s
    rot[:, 1, 0] = s
    rot[:, 1, 1] = c
    rot[:, 2, 2] = 1.0
    return rot


# -- sensors -------------------------------------------------------------------


@dataclass
class SensorSpec:
    """Sensor rig: rates, noise, biases, extrinsics and dropouts."""

    lidar_rate: float = 10.0
    imu_rate: float = 100.0
    lidar_channels: int = 16
    lidar_azimuth_steps: int = 180
    vertical_fov_deg: float = 30.0
    max_range: float = 120.0
    lidar_noise_std: float = 0.0
    gyro_noise_std: float = 0.0
    acc_noise_std: float = 0.0
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    acc_bias: tuple = (0.0, 0.0, 0.0)
    dropout_windows: list = field(default_factory=list)
    ext_pos: tuple = (0.2, 0.0, 0.1)  # LiDAR position in the IMU frame
    ext_yaw_deg: float = 2.0  # LiDAR yaw in the IMU frame
    gt_rate: float = 200.0

    def validate(self, duration: float | None = None) -> None:
        if self.lidar_rate <= 0 or self.imu_rate <= 0 or self.gt_rate <= 0:
            raise ValueError("sensor rates must be > 0")
        if self.lidar_channels < 1 or self.lidar_azimuth_steps < 1:
            raise ValueError("lidar geometry must be positive")
        for t0, t1 in self.dropout_windows:
            if t1 <= t0:
                raise ValueError("dropout window end must exceed start")
            if duration is not None and (t0 < 0 or t1 > duration):
                raise ValueError("dropout window outside duration")

    def rot_il(self) -> np.ndarray:
        return so3.rot_z(np.deg2rad(self.ext_yaw_deg))

    def pos_il(self) -> np.ndarray:
        return np.asarray(self.ext_pos, dtype=float)


def initial_nav_state(gt: GroundTruth, spec: SensorSpec) -> NavState:
    """Exact filter state at the first truth sample (biases as configured)."""
    r0 = gt.rot[0]
    return make_state(
        rot_wi=r0,
        pos_wi=gt.pos[0],
        vel_wi=gt.vel[0],
        omega=gt.omega[0],
        acc=r0.T @ (gt.acc_w[0] - np.array([0.0, 0.0, -GRAVITY])),
        bias_gyro=spec.gyro_bias,
        bias_acc=spec.acc_bias,
        gravity_w=(0.0, 0.0, -GRAVITY),
        rot_il=spec.rot_il(),
        pos_il=spec.pos_il(),
    )


def sim_imu(
    gt: GroundTruth, spec: SensorSpec, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """IMU stream (t, gyro, acc) from ground truth.

    gyro = body rate + bias + noise; acc = R'(vdot - g) + bias + noise.
    Samples inside dropout windows are omitted after noise generation, so
    the retained values do not depend on the dropout schedule.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    t0, t1 = float(gt.t[0]), float(gt.t[-1])
    n = int(np.floor((t1 - t0) * spec.imu_rate + 1e-9)) + 1
    ts = t0 + np.arange(n) / spec.imu_rate
    if gt._exact is not None:
        _, rot, _, omega, acc_w = gt._exact(ts)
    else:
        rot, _ = gt.pose_at(ts)
        omega = np.stack([np.interp(ts, gt.t, gt.omega[:, i]) for i in range(3)], 1)
        acc_w = np.stack([np.interp(ts, gt.t, gt.acc_w[:, i]) for i in range(3)], 1)
    g_vec = np.array([0.0, 0.0, -GRAVITY])
    acc_body = np.einsum("nji,j->ni", rot, -g_vec) + np.einsum(
        "nji,nj->ni", rot, acc_w
    )
    gyro = omega + np.asarray(spec.gyro_bias) + spec.gyro_noise_std * rng.standard_normal(
        (n, 3)
    )
    acc = acc_body + np.asarray(spec.acc_bias) + spec.acc_noise_std * rng.standard_normal(
        (n, 3)
    )
    keep = np.ones(n, dtype=bool)
    for w0, w1 in spec.dropout_windows:
        keep &= ~((ts >= t0 + w0) & (ts < t0 + w1))
    return ts[keep], gyro[keep], acc[keep]


def ray_cast(world: World, origins: np.ndarray, dirs: np.ndarray,
             max_range: float, min_range: float = 0.1) -> np.ndarray:
    """Nearest-hit ranges for per-ray origins/directions; inf on miss."""
    o, e1, e2, n, inv1, inv2 = world.arrays()
    m = len(origins)
    best = np.full(m, np.inf)
    for i in range(len(o)):
        denom = dirs @ n[i]
        ok = np.abs(denom) > 1e-12
        t = np.where(ok, ((o[i] - origins) @ n[i]) / np.where(ok, denom, 1.0), np.inf)
        ok &= (t >= min_range) & (t <= max_range) & (t < best)
        if not np.any(ok):
            continue
        hit = origins[ok] + t[ok, None] * dirs[ok]
        w = hit - o[i]
        s1 = (w @ e1[i]) * inv1[i]
        s2 = (w @ e2[i]) * inv2[i]
        inside = (s1 >= -1e-9) & (s1 <= 1 + 1e-9) & (s2 >= -1e-9) & (s2 <= 1 + 1e-9)
        sel = np.flatnonzero(ok)[inside]
        best[sel] = t[sel]
    return best


def sim_lidar(
    world: World, gt: GroundTruth, spec: SensorSpec, seed: int = 0
) -> list[Scan]:
    """Spinning multi-channel scans ray-cast against the world.

    Each frame sweeps 360 degrees ending at its stamp; azimuth columns are
    captured at their own instants, so a moving sensor produces motion
    distortion for the compensation stage to undo. Misses are dropped.
    Point order within a scan is ascending in the backward offset dt.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    period = 1.0 / spec.lidar_rate
    t0, t1 = float(gt.t[0]), float(gt.t[-1])
    n_frames = int(np.floor((t1 - t0) / period + 1e-9))
    n_az = spec.lidar_azimuth_steps
    n_ch = spec.lidar_channels
    elev = (
        np.deg2rad(np.linspace(-0.5, 0.5, n_ch) * spec.vertical_fov_deg)
        if n_ch > 1
        else np.array([0.0])
    )
    az = 2.0 * np.pi * (np.arange(n_az) + 0.5) / n_az
    # LiDAR-frame directions, column-major: all channels of azimuth 0 first
    ce, se = np.cos(elev), np.sin(elev)
    dirs_l = np.empty((n_az, n_ch, 3))
    dirs_l[:, :, 0] = np.cos(az)[:, None] * ce[None, :]
    dirs_l[:, :, 1] = np.sin(az)[:, None] * ce[None, :]
    dirs_l[:, :, 2] = se[None, :]
    r_il = spec.rot_il()
    p_il = spec.pos_il()
    col_off = period * (1.0 - (np.arange(n_az) + 0.5) / n_az)  # backward offsets
    scans = []
    for i in range(1, n_frames + 1):
        t_end = t0 + i / spec.lidar_rate
        t_cap = t_end - col_off
        rot_wi, pos_wi = gt.pose_at(t_cap)
        rot_wl = rot_wi @ r_il
        pos_wl = np.einsum("nij,j->ni", rot_wi, p_il) + pos_wi
        dirs_w = np.einsum("nij,ncj->nci", rot_wl, dirs_l).reshape(-1, 3)
        origins = np.repeat(pos_wl, n_ch, axis=0)
        ranges = ray_cast(world, origins, dirs_w, spec.max_range)
        if spec.lidar_noise_std > 0:
            noise = spec.lidar_noise_std * rng.standard_normal(len(ranges))
        else:
            noise = np.zeros(len(ranges))
        hit = np.isfinite(ranges)
        r_noisy = ranges[hit] + noise[hit]
        pts_l = dirs_l.reshape(-1, 3)[hit] * r_noisy[:, None]
        dt = np.repeat(col_off, n_ch)[hit]
        order = np.argsort(dt, kind="stable")
        scans.append(Scan(t_end, pts_l[order], dt[order]))
    return scans
