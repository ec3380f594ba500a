"""Incremental k-d tree over 3D points.

Supports point insertion with near-duplicate collapsing, lazy box
deletion through tombstones, exact k-nearest-neighbor queries and
on-demand rebalancing. Leaves hold small point buckets so the hot query
path can use vectorized distance evaluation; every node carries scalar
bounds so traversal pruning stays cheap.

Rebuild policy: a subtree is rebuilt when one child holds more than
`alpha_balance` of its live points, or when more than `alpha_deleted` of
its stored slots are tombstones. Rebuilds are synchronous and happen on
the mutating call, which keeps query results deterministic.
"""

from __future__ import annotations

import heapq

import numpy as np

BUCKET_SIZE = 32
DEDUP_RADIUS = 1e-7

_BOUND_SLOTS = ("lox", "loy", "loz", "hix", "hiy", "hiz")


class _Leaf:
    __slots__ = ("pts", "alive", "n", "n_dead") + _BOUND_SLOTS

    def __init__(self, pts: np.ndarray):
        cap = max(BUCKET_SIZE, len(pts))
        self.pts = np.empty((cap, 3))
        self.n = len(pts)
        self.pts[: self.n] = pts
        self.alive = np.zeros(cap, dtype=bool)
        self.alive[: self.n] = True
        self.n_dead = 0
        if self.n:
            lo = pts.min(axis=0)
            hi = pts.max(axis=0)
            self.lox, self.loy, self.loz = float(lo[0]), float(lo[1]), float(lo[2])
            self.hix, self.hiy, self.hiz = float(hi[0]), float(hi[1]), float(hi[2])
        else:
            self.lox = self.loy = self.loz = np.inf
            self.hix = self.hiy = self.hiz = -np.inf

    @property
    def live(self) -> int:
        return self.n - self.n_dead

    @property
    def total(self) -> int:
        return self.n

    def live_points(self) -> np.ndarray:
        if self.n_dead == 0:
            return self.pts[: self.n].copy()
        return self.pts[: self.n][self.alive[: self.n]]

    def append(self, p: np.ndarray) -> None:
        if self.n == len(self.pts):
            grown = np.empty((2 * self.n, 3))
            grown[: self.n] = self.pts
            self.pts = grown
            alive = np.zeros(2 * self.n, dtype=bool)
            alive[: self.n] = self.alive[: self.n]
            self.alive = alive
        self.pts[self.n] = p
        self.alive[self.n] = True
        self.n += 1
        _expand(self, float(p[0]), float(p[1]), float(p[2]))


class _Node:
    __slots__ = ("axis", "split", "left", "right", "live", "total") + _BOUND_SLOTS

    def __init__(self, axis, split, left, right, live, total, lo, hi):
        self.axis = axis
        self.split = split
        self.left = left
        self.right = right
        self.live = live
        self.total = total
        self.lox, self.loy, self.loz = float(lo[0]), float(lo[1]), float(lo[2])
        self.hix, self.hiy, self.hiz = float(hi[0]), float(hi[1]), float(hi[2])


def _expand(node, x: float, y: float, z: float) -> None:
    if x < node.lox:
        node.lox = x
    if x > node.hix:
        node.hix = x
    if y < node.loy:
        node.loy = y
    if y > node.hiy:
        node.hiy = y
    if z < node.loz:
        node.loz = z
    if z > node.hiz:
        node.hiz = z


def _build(pts: np.ndarray):
    """Balanced subtree from a live point array (no tombstones)."""
    if len(pts) <= BUCKET_SIZE:
        return _Leaf(pts)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    axis = int(np.argmax(hi - lo))
    mid = len(pts) // 2
    order = np.argpartition(pts[:, axis], mid)
    left_pts = pts[order[:mid]]
    right_pts = pts[order[mid:]]
    split = float(left_pts[:, axis].max())
    left = _build(left_pts)
    right = _build(right_pts)
    return _Node(axis, split, left, right, len(pts), len(pts), lo, hi)


class IkdTree:
    """Incremental 3D point index with exact knn queries."""

    def __init__(
        self,
        points: np.ndarray | None = None,
        alpha_balance: float = 0.6,
        alpha_deleted: float = 0.5,
    ):
        self.alpha_balance = alpha_balance
        self.alpha_deleted = alpha_deleted
        self._snap = None
        if points is None or len(points) == 0:
            self.root = _Leaf(np.empty((0, 3)))
        else:
            pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 3), axis=0)
            self.root = _build(pts)

    @property
    def size(self) -> int:
        return self.root.live

    def snapshot(self):
        """Flat traversal snapshot for batched queries; rebuilt after any
        mutation, so it is cheap for read-mostly maps."""
        if self._snap is None:
            from .fastknn import FlatTree

            self._snap = FlatTree(self.root)
        return self._snap

    def knn_batch(
        self, queries: np.ndarray, k: int, max_dist: float = np.inf
    ) -> tuple[np.ndarray, np.ndarray]:
        """Batched exact knn through the snapshot: (neighbors, counts)."""
        return self.snapshot().knn_batch(queries, k, max_dist)

    def points(self) -> np.ndarray:
        """All live points (copy), in storage order."""
        return self._collect_live(self.root)

    # -- insertion ----------------------------------------------------------

    def insert(self, points: np.ndarray) -> int:
        """Insert points one by one; returns how many were actually added.

        A point within DEDUP_RADIUS of an existing live point is dropped.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) and not np.all(np.isfinite(pts)):
            raise ValueError("non-finite point")
        added = 0
        for p in pts:
            if self.size and self.knn(p, 1, max_dist=DEDUP_RADIUS):
                continue
            self._insert_one(p)
            added += 1
        if added:
            self._snap = None
        return added

    def _insert_one(self, p: np.ndarray) -> None:
        x, y, z = float(p[0]), float(p[1]), float(p[2])
        node = self.root
        path: list[_Node] = []
        while isinstance(node, _Node):
            _expand(node, x, y, z)
            node.live += 1
            node.total += 1
            path.append(node)
            node = node.left if p[node.axis] <= node.split else node.right
        node.append(p)
        if node.n > BUCKET_SIZE:
            rebuilt = _build(node.live_points())
            self._replace(path, node, rebuilt)
        self._rebalance_path(path)

    def _replace(self, path: list[_Node], old, new) -> None:
        if not path:
            self.root = new
        else:
            parent = path[-1]
            if parent.left is old:
                parent.left = new
            else:
                parent.right = new

    def _rebalance_path(self, path: list[_Node]) -> None:
        # rebuild the highest violating subtree; lower violations surface
        # on later mutations, which keeps the amortized cost bounded
        for depth, node in enumerate(path):
            if self._violates(node):
                rebuilt = _build(self._collect_live(node))
                self._replace(path[:depth], node, rebuilt)
                return

    def _violates(self, node: _Node) -> bool:
        if node.live >= 2 * BUCKET_SIZE:
            heavier = max(node.left.live, node.right.live)
            if heavier > self.alpha_balance * node.live:
                return True
        dead = node.total - node.live
        return node.total >= BUCKET_SIZE and dead > self.alpha_deleted * node.total

    @staticmethod
    def _collect_live(node) -> np.ndarray:
        out = []
        stack = [node]
        while stack:
            cur = stack.pop()
            if isinstance(cur, _Leaf):
                if cur.live:
                    out.append(cur.live_points())
            else:
                stack.append(cur.right)
                stack.append(cur.left)
        return np.concatenate(out) if out else np.empty((0, 3))

    # -- deletion -----------------------------------------------------------

    def delete_box(self, lo, hi) -> int:
        """Tombstone every live point inside the closed box [lo, hi]."""
        lo = np.asarray(lo, dtype=float).reshape(3)
        hi = np.asarray(hi, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError("box minimum exceeds maximum")
        removed, rebuilt = self._delete_box(self.root, lo, hi)
        if rebuilt is not None:
            self.root = rebuilt
        if removed:
            self._snap = None
        return removed

    def _delete_box(self, node, lo, hi):
        if (
            hi[0] < node.lox
            or hi[1] < node.loy
            or hi[2] < node.loz
            or lo[0] > node.hix
            or lo[1] > node.hiy
            or lo[2] > node.hiz
        ):
            return 0, None
        if isinstance(node, _Leaf):
            if node.n == 0:
                return 0, None
            p = node.pts[: node.n]
            inside = np.all((p >= lo) & (p <= hi), axis=1) & node.alive[: node.n]
            removed = int(np.count_nonzero(inside))
            if removed:
                node.alive[: node.n][inside] = False
                node.n_dead += removed
            return removed, None
        removed = 0
        for side in ("left", "right"):
            child = getattr(node, side)
            r, rebuilt = self._delete_box(child, lo, hi)
            removed += r
            if rebuilt is not None:
                setattr(node, side, rebuilt)
        node.live -= removed
        if self._violates(node):
            return removed, _build(self._collect_live(node))
        return removed, None

    # -- queries ----------------------------------------------------------------

    def knn(self, q, k: int, max_dist: float = np.inf) -> list[tuple[np.ndarray, float]]:
        """Exact k nearest live points within max_dist, ascending by distance.

        Ties break lexicographically on (x, y, z). May return fewer than k.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=float).reshape(3)
        qv = (float(q[0]), float(q[1]), float(q[2]))
        qx, qy, qz = qv
        best: list[tuple] = []  # max-heap via negated keys
        thr = max_dist * max_dist
        push = heapq.heappush
        replace = heapq.heapreplace
        stack = [self.root]
        pop = stack.pop
        append = stack.append
        while stack:
            node = pop()
            # squared distance from q to the node bounding box
            d = 0.0
            if qx < node.lox:
                t = node.lox - qx
                d = t * t
            elif qx > node.hix:
                t = qx - node.hix
                d = t * t
            if qy < node.loy:
                t = node.loy - qy
                d += t * t
            elif qy > node.hiy:
                t = qy - node.hiy
                d += t * t
            if qz < node.loz:
                t = node.loz - qz
                d += t * t
            elif qz > node.hiz:
                t = qz - node.hiz
                d += t * t
            if d > thr:
                continue
            if isinstance(node, _Node):
                if qv[node.axis] <= node.split:
                    append(node.right)
                    append(node.left)
                else:
                    append(node.left)
                    append(node.right)
                continue
            n = node.n
            if n == 0:
                continue
            diff = node.pts[:n] - q
            d2 = np.einsum("ij,ij->i", diff, diff)
            if node.n_dead:
                cand = np.flatnonzero((d2 <= thr) & node.alive[:n])
            else:
                cand = np.flatnonzero(d2 <= thr)
            if cand.size == 0:
                continue
            p = node.pts
            for i in cand:
                entry = (-d2[i], -p[i, 0], -p[i, 1], -p[i, 2])
                if len(best) < k:
                    push(best, entry)
                    if len(best) == k:
                        thr = -best[0][0]
                elif entry > best[0]:
                    replace(best, entry)
                    thr = -best[0][0]
        out = sorted((-e[0], -e[1], -e[2], -e[3]) for e in best)
        return [
            (np.array([x, y, z]), float(np.sqrt(max(d2, 0.0))))
            for d2, x, y, z in out
        ]

    def knn_array(self, q, k: int, max_dist: float = np.inf) -> np.ndarray:
        """knn results as an (n, 3) array (n <= k), nearest first."""
        res = self.knn(q, k, max_dist)
        if not res:
            return np.empty((0, 3))
        return np.stack([pt for pt, _ in res])
