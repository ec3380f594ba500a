"""Trajectory comparison: absolute pose error plus the lateral and
longitudinal decomposition in the ground-truth heading frame.

Errors are frame-absolute by default since the system localizes in a
shared prior-map frame; an opt-in rigid alignment exists for
odometry-style comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import so3


@dataclass
class Trajectory:
    t: np.ndarray
    pos: np.ndarray  # (n, 3)
    rot: np.ndarray  # (n, 3, 3)

    def __post_init__(self):
        if len(self.t) == 0:
            raise ValueError("empty trajectory")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class ErrorReport:
    max_abs_pose_err: float
    mean_abs_pose_err: float
    max_lateral: float
    mean_lateral: float
    max_longitudinal: float
    mean_longitudinal: float
    max_vertical: float
    mean_vertical: float
    max_rot_deg: float
    mean_rot_deg: float
    matched_count: int
    unmatched_count: int

    def as_dict(self) -> dict:
        return {
            "matched_count": self.matched_count,
            "unmatched_count": self.unmatched_count,
            "max_abs_pose_err_m": self.max_abs_pose_err,
            "mean_abs_pose_err_m": self.mean_abs_pose_err,
            "max_lateral_err_m": self.max_lateral,
            "mean_lateral_err_m": self.mean_lateral,
            "max_longitudinal_err_m": self.max_longitudinal,
            "mean_longitudinal_err_m": self.mean_longitudinal,
            "max_vertical_err_m": self.max_vertical,
            "mean_vertical_err_m": self.mean_vertical,
            "max_rotation_err_deg": self.max_rot_deg,
            "mean_rotation_err_deg": self.mean_rot_deg,
        }

    def text(self) -> str:
        lines = [f"{k}: {v}" for k, v in self.as_dict().items()]
        return "\n".join(lines) + "\n"


def associate_by_time(
    est: Trajectory, gt: Trajectory, max_dt: float = 0.02
) -> tuple[np.ndarray, np.ndarray, int]:
    """Match every estimate to the nearest-in-time ground-truth pose.

    Returns (est indices, gt indices, unmatched estimate count); raises
    on zero matches.
    """
    if len(est) == 0 or len(gt) == 0:
        raise ValueError("empty trajectory")
    pos = np.searchsorted(gt.t, est.t)
    left = np.clip(pos - 1, 0, len(gt) - 1)
    right = np.clip(pos, 0, len(gt) - 1)
    d_left = np.abs(est.t - gt.t[left])
    d_right = np.abs(gt.t[right] - est.t)
    nearest = np.where(d_left <= d_right, left, right)
    dt = np.minimum(d_left, d_right)
    ok = dt <= max_dt
    if not np.any(ok):
        raise ValueError(f"no trajectory matches within max_dt={max_dt}")
    return np.flatnonzero(ok), nearest[ok], int(np.count_nonzero(~ok))


def _per_pair_errors(est: Trajectory, gt: Trajectory, ei, gi):
    delta = est.pos[ei] - gt.pos[gi]
    abs_err = np.linalg.norm(delta, axis=1)
    yaw = np.arctan2(gt.rot[gi][:, 1, 0], gt.rot[gi][:, 0, 0])
    c, s = np.cos(yaw), np.sin(yaw)
    longitudinal = c * delta[:, 0] + s * delta[:, 1]
    lateral = -s * delta[:, 0] + c * delta[:, 1]
    vertical = delta[:, 2]
    rot_err = np.empty(len(ei))
    for j in range(len(ei)):
        rot_err[j] = np.linalg.norm(
            so3.log_so3(gt.rot[gi[j]].T @ est.rot[ei[j]])
        )
    return abs_err, lateral, longitudinal, vertical, rot_err


def compute_report(
    est: Trajectory,
    gt: Trajectory,
    max_dt: float = 0.02,
    t_min: float | None = None,
    align: bool = False,
) -> tuple[ErrorReport, np.ndarray]:
    """Error report plus the per-pair table.

    The table rows are (t, abs, lateral, longitudinal, vertical, rot_rad).
    With t_min set, pairs before that estimate time are excluded (useful
    for skipping a convergence transient). With align=True a rigid SE(3)
    alignment (Umeyama, no scale) is applied to the estimate first.
    """
    if align:
        est = align_rigid(est, gt, max_dt)
    ei, gi, unmatched = associate_by_time(est, gt, max_dt)
    if t_min is not None:
        keep = est.t[ei] >= t_min
        if not np.any(keep):
            raise ValueError("no matches at or after t_min")
        ei, gi = ei[keep], gi[keep]
    abs_err, lateral, longitudinal, vertical, rot_err = _per_pair_errors(
        est, gt, ei, gi
    )
    report = ErrorReport(
        max_abs_pose_err=float(abs_err.max()),
        mean_abs_pose_err=float(abs_err.mean()),
        max_lateral=float(np.abs(lateral).max()),
        mean_lateral=float(np.abs(lateral).mean()),
        max_longitudinal=float(np.abs(longitudinal).max()),
        mean_longitudinal=float(np.abs(longitudinal).mean()),
        max_vertical=float(np.abs(vertical).max()),
        mean_vertical=float(np.abs(vertical).mean()),
        max_rot_deg=float(np.rad2deg(rot_err.max())),
        mean_rot_deg=float(np.rad2deg(rot_err.mean())),
        matched_count=len(ei),
        unmatched_count=unmatched,
    )
    table = np.column_stack(
        [est.t[ei], abs_err, lateral, longitudinal, vertical, rot_err]
    )
    return report, table


def align_rigid(est: Trajectory, gt: Trajectory, max_dt: float = 0.02) -> Trajectory:
    """Umeyama rigid alignment (rotation + translation, no scale)."""
    ei, gi, _ = associate_by_time(est, gt, max_dt)
    a = est.pos[ei]
    b = gt.pos[gi]
    mu_a = a.mean(axis=0)
    mu_b = b.mean(axis=0)
    h = (a - mu_a).T @ (b - mu_b)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    s = np.diag([1.0, 1.0, d])
    r = vt.T @ s @ u.T
    t = mu_b - r @ mu_a
    pos = est.pos @ r.T + t
    rot = np.einsum("ij,njk->nik", r, est.rot)
    return Trajectory(est.t.copy(), pos, rot)
