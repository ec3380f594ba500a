"""Dual-map LiDAR-inertial localization.

Tightly couples IMU propagation, IMU measurement updates and iterated
point-to-plane LiDAR updates against a static prior map plus an online
local map, with a constant-velocity fallback when the IMU stream drops.
"""

from .filter import Estimator, FilterConfig, ImuSample, compute_gain
from .ikdtree import IkdTree
from .lidar import AssocConfig, Correspondence, PlaneFit, Scan
from .mapping import LocalMap, MapConfig, PriorMap, load_prior
from .state import NavState, boxminus, boxplus

__all__ = [
    "AssocConfig",
    "Correspondence",
    "Estimator",
    "FilterConfig",
    "IkdTree",
    "ImuSample",
    "LocalMap",
    "MapConfig",
    "NavState",
    "PlaneFit",
    "PriorMap",
    "Scan",
    "boxminus",
    "boxplus",
    "compute_gain",
    "load_prior",
]

__version__ = "0.1.0"
