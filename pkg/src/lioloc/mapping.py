"""Prior and local map management on top of the incremental k-d tree."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import DataFormatError, load_map_points
from .ikdtree import IkdTree


@dataclass
class MapConfig:
    prior_interval_stride: int = 1
    local_radius: float = 150.0
    local_voxel: float = 0.5
    prune_hysteresis: float | None = None  # default radius / 2
    # offline map assembly (mapbuild)
    build_stride: int = 2
    build_voxel: float = 0.2
    dynamic_removal: bool = True
    # movable-object profile for the dynamic-removal pass
    removal_cell: float = 1.0
    removal_min_height: float = 0.3
    removal_max_height: float = 4.0
    removal_max_footprint: float = 60.0  # m^2
    removal_ground_band: float = 0.25

    def validate(self) -> None:
        if self.prior_interval_stride < 1 or self.build_stride < 1:
            raise ValueError("map strides must be >= 1")
        if not self.local_radius > 0 or not self.local_voxel > 0:
            raise ValueError("local map geometry must be positive")
        if not self.build_voxel > 0:
            raise ValueError("build_voxel must be > 0")


def interval_downsample(points: np.ndarray, stride: int) -> np.ndarray:
    """Keep every stride-th point (the simple denoising downsampler)."""
    if stride <= 1:
        return np.asarray(points)
    return np.asarray(points)[::stride]


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """One point per voxel cell; keeps the first point seen per cell."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    cells = np.floor(pts / voxel).astype(np.int64)
    # pack to a single key; 21 bits per axis covers +-1e6 cells
    key = (
        (cells[:, 0] + 2**20) * (2**42)
        + (cells[:, 1] + 2**20) * (2**21)
        + (cells[:, 2] + 2**20)
    )
    _, first = np.unique(key, return_index=True)
    return pts[np.sort(first)]


@dataclass
class PriorMap:
    """Immutable static world-frame map with its spatial index."""

    points: np.ndarray
    bounds: tuple[np.ndarray, np.ndarray]
    index: IkdTree

    @classmethod
    def from_points(cls, points: np.ndarray, stride: int = 1) -> "PriorMap":
        pts = interval_downsample(np.asarray(points, dtype=float), stride)
        if len(pts) == 0:
            raise DataFormatError("prior map has no points after downsampling")
        pts = np.array(pts)
        pts.setflags(write=False)
        bounds = (pts.min(axis=0), pts.max(axis=0))
        return cls(pts, bounds, IkdTree(pts))

    def checksum(self) -> int:
        return hash(self.points.tobytes())


def load_prior(path, stride: int = 1) -> PriorMap:
    """Load and index a PM1/PMB1 prior map file."""
    return PriorMap.from_points(load_map_points(path), stride)


@dataclass
class LocalMap:
    """Sliding dynamic map accumulated from corrected scans."""

    radius: float = 150.0
    voxel: float = 0.5
    hysteresis: float | None = None
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    index: IkdTree = field(default_factory=IkdTree)
    _primed: bool = False

    def __post_init__(self):
        if self.hysteresis is None:
            self.hysteresis = self.radius / 2.0

    def insert(self, points_world: np.ndarray) -> int:
        """Voxel-filtered insertion of world-frame points."""
        pts = voxel_downsample(points_world, self.voxel)
        if not self._primed and len(pts):
            self.center = np.asarray(points_world).mean(axis=0)
            self._primed = True
        return self.index.insert(pts)

    def prune(self, center: np.ndarray) -> int:
        """Box-delete everything outside the cube of side 2*radius.

        Runs only after the pose has moved more than the hysteresis
        distance since the last prune; returns the number of points
        removed.
        """
        center = np.asarray(center, dtype=float).reshape(3)
        if self._primed and np.linalg.norm(center - self.center) < self.hysteresis:
            return 0
        self.center = center.copy()
        self._primed = True
        big = 1e9
        r = self.radius
        removed = 0
        for axis in range(3):
            for side in (-1, 1):
                lo = np.full(3, -big)
                hi = np.full(3, big)
                if side < 0:
                    hi[axis] = center[axis] - r
                else:
                    lo[axis] = center[axis] + r
                removed += self.index.delete_box(lo, hi)
        return removed


def remove_movable_objects(points: np.ndarray, cfg: MapConfig) -> np.ndarray:
    """Offline dynamic-removal pass for prior-map construction.

    Grid-clusters above-ground points in the horizontal plane and drops
    connected components whose footprint and vertical extent match the
    movable-object profile (container-truck scale by default). Ground
    points are always kept.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    cell = cfg.removal_cell
    ij = np.floor(pts[:, :2] / cell).astype(np.int64)
    key = (ij[:, 0] + 2**31) * (2**32) + (ij[:, 1] + 2**31)
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    starts = np.flatnonzero(np.r_[True, sorted_key[1:] != sorted_key[:-1]])
    bounds = np.r_[starts, len(sorted_key)]

    # per-cell ground level: lowest z in the 3x3 neighborhood
    cell_ids = {}
    zmin = {}
    for s, e in zip(bounds[:-1], bounds[1:]):
        rows = order[s:e]
        cid = (int(ij[rows[0], 0]), int(ij[rows[0], 1]))
        cell_ids[cid] = rows
        zmin[cid] = float(pts[rows, 2].min())

    def ground_of(cid):
        gi, gj = cid
        vals = [
            zmin[(gi + di, gj + dj)]
            for di in (-1, 0, 1)
            for dj in (-1, 0, 1)
            if (gi + di, gj + dj) in zmin
        ]
        return min(vals)

    above = {}
    for cid, rows in cell_ids.items():
        g = ground_of(cid)
        elevated = rows[pts[rows, 2] > g + cfg.removal_ground_band]
        if elevated.size:
            above[cid] = (elevated, g)

    # connected components (4-neighborhood) over cells with elevated points
    seen = set()
    drop = np.zeros(len(pts), dtype=bool)
    for seed in above:
        if seed in seen:
            continue
        comp = [seed]
        seen.add(seed)
        queue = [seed]
        while queue:
            ci, cj = queue.pop()
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = (ci + di, cj + dj)
                if nb in above and nb not in seen:
                    seen.add(nb)
                    comp.append(nb)
                    queue.append(nb)
        rows = np.concatenate([above[c][0] for c in comp])
        grounds = min(above[c][1] for c in comp)
        height = float(pts[rows, 2].max()) - grounds
        footprint = len(comp) * cell * cell
        if (
            cfg.removal_min_height <= height <= cfg.removal_max_height
            and footprint <= cfg.removal_max_footprint
        ):
            drop[rows] = True
    return pts[~drop]
