"""LiDAR measurement pipeline: scan motion compensation, neighbor-based
plane fitting, dual-map association and the point-to-plane residual with
its error-state Jacobian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import so3
from .state import (
    BLK_POS,
    BLK_POS_IL,
    BLK_ROT,
    BLK_ROT_IL,
    ERROR_DIM,
    NavState,
)

if TYPE_CHECKING:  # pragma: no cover
    from .filter import Estimator
    from .ikdtree import IkdTree

GLOBAL = "global"
LOCAL = "local"


@dataclass
class Scan:
    """One LiDAR sweep in the sensor frame.

    `dt` holds per-point backward offsets from the sweep end: a point with
    offset d was captured at t_end - d. Offsets are non-negative and no
    larger than the sweep period.
    """

    t_end: float
    xyz: np.ndarray  # (n, 3) meters, LiDAR frame
    dt: np.ndarray  # (n,) seconds, backward offset from t_end

    def __len__(self) -> int:
        return len(self.xyz)


@dataclass
class AssocConfig:
    """Association and plane-fit tuning."""

    downsample_stride: int = 4
    plane_min_points: int = 5
    plane_fit_threshold: float = 0.1
    plane_fit_threshold_local: float | None = None  # None: same as global
    plane_min_spread: float = 0.05  # reject near-collinear neighborhoods
    assoc_gate: float = 0.5
    neighbor_radius: float = 1.0
    max_range: float = 120.0
    use_local_map: bool = True
    use_global_map: bool = True

    def validate(self) -> None:
        if self.downsample_stride < 1:
            raise ValueError("downsample_stride must be >= 1")
        if self.plane_min_points < 3:
            raise ValueError("plane_min_points must be >= 3")
        if not self.plane_fit_threshold > 0 or not self.assoc_gate > 0:
            raise ValueError("plane thresholds must be > 0")
        if not self.neighbor_radius > 0:
            raise ValueError("neighbor_radius must be > 0")


@dataclass
class PlaneFit:
    normal: np.ndarray
    anchor: np.ndarray
    rms: float
    valid: bool


@dataclass
class Correspondence:
    """One point-to-plane constraint tagged with its source map."""

    point_l: np.ndarray  # LiDAR-frame point
    plane: PlaneFit
    source: str  # GLOBAL or LOCAL
    noise_std: float


def undistort(scan: Scan, est: "Estimator") -> tuple[Scan, int]:
    """Re-express every point in the LiDAR frame at the sweep end.

    Each point is lifted to the world with the interpolated pose at its
    capture time and projected back with the pose at t_end, both through
    the LiDAR-IMU extrinsics. Points whose capture time falls outside the
    state history are dropped; the drop count is returned.
    """
    if len(scan) == 0:
        return Scan(scan.t_end, scan.xyz.copy(), scan.dt.copy()), 0
    t_cap = scan.t_end - scan.dt
    rots, poss, ok = est.poses_at(t_cap)
    x_end = est.state_at(scan.t_end)
    r_il, p_il = x_end.rot_il, x_end.pos_il
    r_end, p_end = x_end.lidar_pose()
    pts = scan.xyz[ok]
    rots = rots[ok]
    poss = poss[ok]
    # world = R_wi (R_il p + p_il) + p_wi, per-point pose
    body = pts @ r_il.T + p_il
    world = np.einsum("nij,nj->ni", rots, body) + poss
    fixed = (world - p_end) @ r_end
    dropped = int(np.count_nonzero(~ok))
    return Scan(scan.t_end, fixed, scan.dt[ok].copy()), dropped


def fit_plane(
    neighbors: np.ndarray,
    min_points: int = 5,
    fit_threshold: float = 0.1,
    view_origin: np.ndarray | None = None,
    min_spread: float = 0.05,
) -> PlaneFit:
    """Least-squares plane through a neighborhood.

    The normal is the smallest-eigenvalue direction of the centered
    scatter, oriented toward view_origin when given (falling back to a
    lexicographic sign rule). Invalid when too few points, a degenerate
    neighborhood (near-collinear: mid/max scatter eigenvalue ratio below
    min_spread), or any point farther than fit_threshold from the plane.
    """
    pts = np.asarray(neighbors, dtype=float).reshape(-1, 3)
    bad = PlaneFit(np.array([0.0, 0.0, 1.0]), np.zeros(3), np.inf, False)
    if len(pts) < min_points:
        return bad
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scatter = centered.T @ centered
    evals, evecs = np.linalg.eigh(scatter)
    if evals[1] <= max(evals[2], 1e-30) * min_spread:
        return bad  # ill-conditioned: points close to a single line
    normal = evecs[:, 0]
    normal = _orient(normal, centroid, view_origin)
    dists = centered @ normal
    max_dist = float(np.abs(dists).max())
    rms = float(np.sqrt(np.mean(dists * dists)))
    valid = max_dist <= fit_threshold
    return PlaneFit(normal, centroid, rms, valid)


def _orient(normal, anchor, view_origin):
    if view_origin is not None:
        s = float(np.dot(normal, np.asarray(view_origin) - anchor))
        if abs(s) > 1e-12:
            return normal if s > 0 else -normal
    for comp in normal:
        if abs(comp) > 1e-12:
            return normal if comp > 0 else -normal
    return normal


def _fit_planes_batch(neigh: np.ndarray, counts: np.ndarray, fit_threshold: float,
                      view_origins: np.ndarray,
                      min_spread: float = 0.05) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized plane fits over padded neighbor blocks.

    neigh is (m, k, 3) with rows beyond counts[i] ignored; returns
    (normals (m,3), anchors (m,3), valid (m,)).
    """
    m, k, _ = neigh.shape
    mask = np.arange(k)[None, :] < counts[:, None]
    w = mask.astype(float)
    nvalid = np.maximum(counts, 1)
    centroid = (neigh * w[:, :, None]).sum(axis=1) / nvalid[:, None]
    centered = (neigh - centroid[:, None, :]) * w[:, :, None]
    scatter = np.einsum("mki,mkj->mij", centered, centered)
    evals, evecs = np.linalg.eigh(scatter)
    normals = evecs[:, :, 0]
    # orient toward the viewpoint; fall back to +x/+y/+z lexicographic sign
    toward = np.einsum("mi,mi->m", normals, view_origins - centroid)
    flip = toward < -1e-12
    undecided = np.abs(toward) <= 1e-12
    if np.any(undecided):
        lead = np.where(
            np.abs(normals[:, 0]) > 1e-12,
            normals[:, 0],
            np.where(np.abs(normals[:, 1]) > 1e-12, normals[:, 1], normals[:, 2]),
        )
        flip = flip | (undecided & (lead < 0))
    normals[flip] *= -1.0
    dists = np.einsum("mkj,mj->mk", centered, normals)
    max_dist = np.abs(dists).max(axis=1)
    degenerate = evals[:, 1] <= np.maximum(evals[:, 2], 1e-30) * min_spread
    valid = (~degenerate) & (max_dist <= fit_threshold)
    return normals, centroid, valid


def associate(
    scan_l: Scan,
    pose: NavState,
    gmap: "IkdTree | None",
    lmap: "IkdTree | None",
    cfg: AssocConfig,
    noise_std: float = 0.05,
) -> list[Correspondence]:
    """Dual-map correspondence search for an (undistorted) scan.

    Every stride-th point is transformed to the world at `pose`, queried
    against each map independently, and paired with the plane fitted from
    its neighbors when the fit is valid and the point-to-plane distance
    passes the gate. Output lists all global-map constraints first, then
    local, each in scan order.
    """
    idx = np.arange(0, len(scan_l), cfg.downsample_stride)
    pts_l = scan_l.xyz[idx]
    r_wl, p_wl = pose.lidar_pose()
    pts_w = pts_l @ r_wl.T + p_wl
    out: list[Correspondence] = []
    maps = []
    if cfg.use_global_map and gmap is not None:
        maps.append((GLOBAL, gmap))
    if cfg.use_local_map and lmap is not None:
        maps.append((LOCAL, lmap))
    k = cfg.plane_min_points
    for tag, tree in maps:
        if tree.size < k:
            continue
        threshold = cfg.plane_fit_threshold
        if tag == LOCAL and cfg.plane_fit_threshold_local is not None:
            threshold = cfg.plane_fit_threshold_local
        neigh, counts = tree.knn_batch(pts_w, k, max_dist=cfg.neighbor_radius)
        enough = counts >= k
        if not np.any(enough):
            continue
        normals, anchors, valid = _fit_planes_batch(
            neigh, counts, threshold,
            np.broadcast_to(p_wl, (len(pts_w), 3)),
            min_spread=cfg.plane_min_spread,
        )
        resid = np.einsum("mi,mi->m", normals, pts_w - anchors)
        keep = enough & valid & (np.abs(resid) < cfg.assoc_gate)
        for i in np.flatnonzero(keep):
            plane = PlaneFit(normals[i].copy(), anchors[i].copy(), 0.0, True)
            out.append(Correspondence(pts_l[i].copy(), plane, tag, noise_std))
    return out


def residual_p2plane(x: NavState, c: Correspondence) -> float:
    """Signed point-to-plane distance of the transformed LiDAR point."""
    r_wl, p_wl = x.lidar_pose()
    world = r_wl @ c.point_l + p_wl
    return float(np.dot(c.plane.normal, world - c.plane.anchor))


def residual_jacobian(x: NavState, c: Correspondence) -> np.ndarray:
    """Row of d(residual)/d(error state) in the frozen block ordering."""
    h, _, _ = build_system(x, [c], estimate_extrinsics=True)
    return h[0]


def build_system(
    x: NavState,
    cs: Sequence[Correspondence],
    global_weight: float = 1.0,
    local_weight: float = 1.0,
    estimate_extrinsics: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked (H, r, R_inv_diag) over all correspondences.

    Rows follow the input order. R_inv entries are weight / noise_std^2
    with the per-source weight from the arguments. Extrinsic columns are
    zeroed unless extrinsic estimation is enabled.
    """
    m = len(cs)
    pts = np.stack([c.point_l for c in cs]) if m else np.empty((0, 3))
    normals = np.stack([c.plane.normal for c in cs]) if m else np.empty((0, 3))
    anchors = np.stack([c.plane.anchor for c in cs]) if m else np.empty((0, 3))
    stds = np.array([c.noise_std for c in cs])
    weights = np.array(
        [global_weight if c.source == GLOBAL else local_weight for c in cs]
    )

    rot, p_il, r_il = x.rot_wi, x.pos_il, x.rot_il
    body = pts @ r_il.T + p_il  # IMU-frame points
    world = body @ rot.T + x.pos_wi
    r = np.einsum("mi,mi->m", normals, world - anchors)

    h = np.zeros((m, ERROR_DIM))
    u_body = normals @ rot  # normals pulled into the IMU frame
    h[:, BLK_POS] = normals
    h[:, BLK_ROT] = np.cross(body, u_body)  # -u'R hat(y) == (y x R'u)'
    if estimate_extrinsics:
        u_lidar = u_body @ r_il
        h[:, BLK_ROT_IL] = np.cross(pts, u_lidar)
        h[:, BLK_POS_IL] = u_body
    r_inv = weights / (stds * stds)
    return h, r, r_inv
