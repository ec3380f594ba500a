"""End-to-end runs: dataset generation, offline map building and the
localization replay loop that wires the estimator, maps and scan pipeline
together.
"""

from __future__ import annotations

import heapq
import logging
import time
from pathlib import Path

import numpy as np

from . import dataio, lidar, mapping, sim, so3
from .config import ConfigError, RunConfig
from .dataio import DataFormatError
from .filter import Estimator, ImuSample, StaleSampleError
from .state import NavState, make_state

log = logging.getLogger(__name__)

MAP_FILE = {"pm1": "prior_map.pm1", "pmb1": "prior_map.pmb1"}
IMU_FILE = "imu.csv"
SCAN_FILE = "scans.sc1"
GT_FILE = "groundtruth.tum"
MANIFEST_FILE = "manifest.json"


def rounded_rect_waypoints(half_x: float, half_y: float, corner_r: float,
                           z: float) -> list:
    """Closed rounded-rectangle loop for the arc profile, starting on the
    bottom edge heading +x."""
    a, b, r = half_x, half_y, corner_r
    return [
        [-a + r, -b, z, 0.0],
        [a - r, -b, z, 0.0],
        [a, -b + r, z, 0.0],
        [a, b - r, z, 0.0],
        [a - r, b, z, 0.0],
        [-a + r, b, z, 0.0],
        [-a, b - r, z, 0.0],
        [-a, -b + r, z, 0.0],
        [-a + r, -b, z, 0.0],
    ]


def default_waypoints(world_kind: str) -> list:
    if world_kind == "box_room":
        return rounded_rect_waypoints(8.0, 5.0, 2.5, 1.6)
    return rounded_rect_waypoints(30.0, 30.0, 8.0, 1.7)


def _trajectory_spec(cfg: RunConfig) -> sim.TrajectorySpec:
    sg = cfg.simgen
    rows = sg.waypoints if sg.waypoints else default_waypoints(sg.world_kind)
    waypoints = [(np.array(r[:3], dtype=float), float(r[3])) for r in rows]
    return sim.TrajectorySpec(
        waypoints=waypoints,
        speed=sg.speed,
        duration=sg.duration,
        profile=sg.profile,
        ramp_time=sg.ramp_time,
    )


def _sensor_spec(cfg: RunConfig) -> sim.SensorSpec:
    sg = cfg.simgen
    spec = sim.SensorSpec(
        lidar_rate=sg.lidar_rate,
        imu_rate=sg.imu_rate,
        lidar_channels=sg.lidar_channels,
        lidar_azimuth_steps=sg.lidar_azimuth_steps,
        vertical_fov_deg=sg.vertical_fov_deg,
        max_range=sg.max_range,
        lidar_noise_std=sg.lidar_noise_std,
        gyro_noise_std=sg.gyro_noise_std,
        acc_noise_std=sg.acc_noise_std,
        gyro_bias=tuple(sg.gyro_bias),
        acc_bias=tuple(sg.acc_bias),
        dropout_windows=[tuple(w) for w in sg.dropout_windows],
        ext_pos=tuple(sg.ext_pos),
        ext_yaw_deg=sg.ext_yaw_deg,
        gt_rate=sg.gt_rate,
    )
    spec.validate(sg.duration)
    return spec


def run_simgen(cfg: RunConfig, out_dir) -> dict:
    """Generate a complete dataset; returns the manifest."""
    cfg.validate()
    sg = cfg.simgen
    out = Path(out_dir)
    spec = _trajectory_spec(cfg)
    sensors = _sensor_spec(cfg)

    world = sim.gen_world(sg.world_kind, sg.seed, **sg.world_params)
    gt = sim.gen_truth(spec, rate=sg.gt_rate)
    imu_t, imu_gyro, imu_acc = sim.sim_imu(gt, sensors, sg.seed)
    scans = sim.sim_lidar(world, gt, sensors, sg.seed)
    map_points = sim.sample_world_points(world, sg.map_pitch)

    out.mkdir(parents=True, exist_ok=True)
    map_name = MAP_FILE[sg.map_format]
    if sg.map_format == "pm1":
        dataio.save_map_pm1(out / map_name, map_points)
    else:
        dataio.save_map_pmb1(out / map_name, map_points)
    dataio.save_imu_csv(out / IMU_FILE, imu_t, imu_gyro, imu_acc)
    dataio.save_scans_sc1(out / SCAN_FILE, scans)
    dataio.save_tum(
        out / GT_FILE,
        ((gt.t[i], gt.pos[i], gt.rot[i]) for i in range(len(gt.t))),
    )

    x0 = sim.initial_nav_state(gt, sensors)
    manifest = {
        "seed": sg.seed,
        "config_hash": cfg.hash(),
        "world_kind": sg.world_kind,
        "world_rects": len(world.rects),
        "t0": float(gt.t[0]),
        "duration": sg.duration,
        "lidar_rate": sg.lidar_rate,
        "imu_rate": sg.imu_rate,
        "gt_rate": sg.gt_rate,
        "n_imu": int(len(imu_t)),
        "n_scans": len(scans),
        "n_map_points": int(len(map_points)),
        "files": {
            "map": map_name,
            "imu": IMU_FILE,
            "scans": SCAN_FILE,
            "groundtruth": GT_FILE,
        },
        "init": {
            "pos": x0.pos_wi.tolist(),
            "quat_xyzw": so3.quat_from_mat(x0.rot_wi).tolist(),
            "vel": x0.vel_wi.tolist(),
            "omega": x0.omega.tolist(),
            "acc": x0.acc.tolist(),
            "bias_gyro": x0.bias_gyro.tolist(),
            "bias_acc": x0.bias_acc.tolist(),
            "gravity": x0.gravity_w.tolist(),
            "ext_pos": x0.pos_il.tolist(),
            "ext_quat_xyzw": so3.quat_from_mat(x0.rot_il).tolist(),
        },
    }
    dataio.save_manifest(out / MANIFEST_FILE, manifest)
    return manifest


def _init_state_from_manifest(manifest: dict, cfg: RunConfig) -> NavState:
    init = manifest["init"]
    x0 = make_state(
        rot_wi=so3.mat_from_quat(np.array(init["quat_xyzw"])),
        pos_wi=init["pos"],
        vel_wi=init["vel"],
        omega=init["omega"],
        acc=init["acc"],
        bias_gyro=init["bias_gyro"],
        bias_acc=init["bias_acc"],
        gravity_w=init["gravity"],
        rot_il=so3.mat_from_quat(np.array(init["ext_quat_xyzw"])),
        pos_il=init["ext_pos"],
    )
    off = np.asarray(cfg.run.init_pos_offset, dtype=float)
    yaw = np.deg2rad(cfg.run.init_yaw_offset_deg)
    if np.any(off != 0.0):
        x0.pos_wi = x0.pos_wi + off
    if yaw != 0.0:
        x0.rot_wi = x0.rot_wi @ so3.rot_z(yaw)
    return x0


class _TrajectoryWriter:
    """Collects (t, pos, rot) rows; drops duplicate stamps."""

    def __init__(self):
        self.rows = []
        self._last_t = -np.inf

    def add(self, t: float, pos: np.ndarray, rot: np.ndarray) -> None:
        if t <= self._last_t:
            return
        self.rows.append((t, pos.copy(), rot.copy()))
        self._last_t = t

    def max_gap(self) -> float:
        if len(self.rows) < 2:
            return 0.0
        ts = np.array([r[0] for r in self.rows])
        return float(np.diff(ts).max())


def _dataset_paths(dataset_dir) -> tuple[Path, dict]:
    root = Path(dataset_dir)
    manifest_path = root / MANIFEST_FILE
    if not manifest_path.exists():
        raise DataFormatError(f"missing manifest: {manifest_path}")
    manifest = dataio.load_manifest(manifest_path)
    return root, manifest


def run_localize(cfg: RunConfig, dataset_dir, out_traj) -> dict:
    """Replay a dataset through the estimator; writes a TUM trajectory.

    Events (IMU samples, scans, CV timer ticks) are processed in global
    timestamp order. Stale samples are rejected and counted, never fatal.
    """
    cfg.validate()
    t_start = time.perf_counter()
    root, manifest = _dataset_paths(dataset_dir)
    files = manifest["files"]
    map_path = root / files["map"]
    if not map_path.exists():
        raise DataFormatError(f"missing prior map: {map_path}")
    prior = mapping.load_prior(map_path, cfg.run.prior_stride)
    imu_t, imu_gyro, imu_acc = dataio.load_imu_csv(root / files["imu"])

    local = mapping.LocalMap(
        radius=cfg.map.local_radius,
        voxel=cfg.map.local_voxel,
        hysteresis=cfg.map.prune_hysteresis,
    )
    x0 = _init_state_from_manifest(manifest, cfg)
    t0 = float(manifest["t0"])
    est = Estimator(cfg.filter, t0, x0)

    period = cfg.filter.cv_timer_period
    duration = float(manifest["duration"])
    n_ticks = int(np.floor(duration / period + 1e-9))

    # event times are quantized to ns so streams stamped with equal nominal
    # times collate deterministically regardless of float arithmetic path
    def imu_events():
        for i in range(len(imu_t)):
            t = float(imu_t[i])
            yield (round(t, 9), 0, ImuSample(t, imu_gyro[i], imu_acc[i]))

    def scan_events():
        for scan in dataio.load_scans_sc1(root / files["scans"]):
            yield (round(scan.t_end, 9), 1, scan)

    def tick_events():
        for k in range(1, n_ticks + 1):
            yield (round(t0 + k * period, 9), 2, None)

    writer = _TrajectoryWriter()
    stats = {
        "n_imu": 0,
        "n_scans": 0,
        "n_ticks": 0,
        "stale_rejected": 0,
        "dropped_points": 0,
        "degraded_updates": 0,
        "diverged_updates": 0,
        "iterations_total": 0,
        "correspondences_global": 0,
        "correspondences_local": 0,
        "cv_steps": 0,
    }
    scan_noise = cfg.filter.lidar_point_noise_std
    ins_stride = cfg.run.local_insert_stride

    events = heapq.merge(imu_events(), scan_events(), tick_events(),
                         key=lambda e: (e[0], e[1]))
    for t, kind, payload in events:
        if kind == 0:
            stats["n_imu"] += 1
            try:
                est.propagate_imu(payload)
                est.imu_update(payload)
            except StaleSampleError:
                stats["stale_rejected"] += 1
        elif kind == 1:
            stats["n_scans"] += 1
            est.advance_to(payload.t_end)
            und, dropped = lidar.undistort(payload, est)
            stats["dropped_points"] += dropped

            def provider(x, scan=und):
                return lidar.associate(
                    scan, x, prior.index, local.index, cfg.assoc,
                    noise_std=scan_noise,
                )

            info = est.lidar_update(provider)
            stats["iterations_total"] += info.iterations
            stats["correspondences_global"] += info.n_global
            stats["correspondences_local"] += info.n_local
            if info.degraded:
                stats["degraded_updates"] += 1
            if info.diverged:
                stats["diverged_updates"] += 1
            x = est.current.state
            r_wl, p_wl = x.lidar_pose()
            pts_w = und.xyz[::ins_stride] @ r_wl.T + p_wl
            local.insert(pts_w)
            local.prune(x.pos_wi)
            writer.add(t, x.pos_wi, x.rot_wi)
        else:
            stats["n_ticks"] += 1
            stats["cv_steps"] += est.cv_tick(t)
            x = est.current.state
            writer.add(t, x.pos_wi, x.rot_wi)

    dataio.save_tum(out_traj, writer.rows)
    stats["mode_transitions"] = est.mode_transitions
    stats["stale_rejected"] += est.stale_rejects - stats["stale_rejected"]
    stats["max_output_gap"] = writer.max_gap()
    stats["n_poses"] = len(writer.rows)
    stats["local_map_points"] = local.index.size
    stats["runtime_s"] = time.perf_counter() - t_start
    g_norm = float(np.linalg.norm(est.current.state.gravity_w))
    stats["gravity_norm"] = g_norm
    return stats


def run_mapbuild(cfg: RunConfig, dataset_dir, out_map) -> dict:
    """Assemble a prior map from ground-truth-posed scans.

    Each point is lifted to the world with the interpolated truth pose at
    its own capture time, interval-downsampled, passed through the
    movable-object removal filter and voxel-compacted.
    """
    cfg.validate()
    root, manifest = _dataset_paths(dataset_dir)
    files = manifest["files"]
    gt_t, gt_pos, gt_rot = dataio.load_tum(root / files["groundtruth"])
    gt = sim.GroundTruth(
        gt_t, gt_pos, gt_rot,
        np.zeros_like(gt_pos), np.zeros_like(gt_pos), np.zeros_like(gt_pos),
    )
    init = manifest["init"]
    r_il = so3.mat_from_quat(np.array(init["ext_quat_xyzw"]))
    p_il = np.array(init["ext_pos"])
    stride = cfg.map.build_stride
    chunks = []
    n_points = 0
    for scan in dataio.load_scans_sc1(root / files["scans"]):
        pts = scan.xyz[::stride]
        dts = scan.dt[::stride]
        n_points += len(scan)
        t_cap = np.clip(scan.t_end - dts, gt_t[0], gt_t[-1])
        rot_wi, pos_wi = gt.pose_at(t_cap)
        body = pts @ r_il.T + p_il
        chunks.append(np.einsum("nij,nj->ni", rot_wi, body) + pos_wi)
    if not chunks:
        raise DataFormatError("dataset contains no scans")
    cloud = np.concatenate(chunks)
    before_removal = len(cloud)
    if cfg.map.dynamic_removal:
        cloud = mapping.remove_movable_objects(cloud, cfg.map)
    cloud = mapping.voxel_downsample(cloud, cfg.map.build_voxel)
    out_map = Path(out_map)
    if out_map.suffix == ".pm1":
        dataio.save_map_pm1(out_map, cloud)
    else:
        dataio.save_map_pmb1(out_map, cloud)
    return {
        "scan_points": n_points,
        "aggregated": before_removal,
        "after_removal": len(cloud),
        "map_points": len(cloud),
        "out": str(out_map),
    }
