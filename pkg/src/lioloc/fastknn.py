"""Flat-array k-d tree snapshot with a compiled batch knn kernel.

Association queries thousands of points per frame against maps that are
read-only for the duration of the frame, so the object tree is flattened
once per mutation epoch and queried through a numba kernel. Results are
bit-identical to IkdTree.knn (same distances, same lexicographic
tie-breaking); a pure-Python fallback keeps the package usable without
numba.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (args and callable(args[0])) else args[0]


class FlatTree:
    """Immutable traversal snapshot of an IkdTree.

    Arrays per node: axis/split/children, scalar bounds, and for leaves a
    [start, end) range into the packed live-point array.
    """

    __slots__ = ("axis", "split", "left", "right", "lo", "hi", "start", "end", "pts")

    def __init__(self, root):
        nodes = []
        stack = [root]
        while stack:
            nodes.append(stack.pop())
            node = nodes[-1]
            if hasattr(node, "axis"):
                stack.append(node.right)
                stack.append(node.left)
        n = len(nodes)
        index = {id(node): i for i, node in enumerate(nodes)}
        self.axis = np.full(n, -1, dtype=np.int8)
        self.split = np.zeros(n)
        self.left = np.full(n, -1, dtype=np.int64)
        self.right = np.full(n, -1, dtype=np.int64)
        self.lo = np.empty((n, 3))
        self.hi = np.empty((n, 3))
        self.start = np.zeros(n, dtype=np.int64)
        self.end = np.zeros(n, dtype=np.int64)
        chunks = []
        offset = 0
        for i, node in enumerate(nodes):
            self.lo[i] = (node.lox, node.loy, node.loz)
            self.hi[i] = (node.hix, node.hiy, node.hiz)
            if hasattr(node, "axis"):
                self.axis[i] = node.axis
                self.split[i] = node.split
                self.left[i] = index[id(node.left)]
                self.right[i] = index[id(node.right)]
            else:
                pts = node.live_points()
                chunks.append(pts)
                self.start[i] = offset
                offset += len(pts)
                self.end[i] = offset
        self.pts = (
            np.ascontiguousarray(np.concatenate(chunks))
            if chunks
            else np.empty((0, 3))
        )

    def knn_batch(
        self, queries: np.ndarray, k: int, max_dist: float = np.inf
    ) -> tuple[np.ndarray, np.ndarray]:
        """k nearest points per query row: (neighbors (m,k,3), counts (m,))."""
        queries = np.ascontiguousarray(queries, dtype=float).reshape(-1, 3)
        m = len(queries)
        out = np.zeros((m, k, 3))
        cnt = np.zeros(m, dtype=np.int64)
        if m == 0 or len(self.pts) == 0:
            return out, cnt
        kernel = _knn_kernel if HAVE_NUMBA else _knn_kernel_py
        kernel(
            self.axis,
            self.split,
            self.left,
            self.right,
            self.lo,
            self.hi,
            self.start,
            self.end,
            self.pts,
            queries,
            k,
            float(max_dist) ** 2 if np.isfinite(max_dist) else np.inf,
            out,
            cnt,
        )
        return out, cnt


def _knn_kernel_py(axis, split, left, right, lo, hi, start, end, pts,
                   queries, k, thr0, out, cnt):
    """Reference implementation of the traversal; numba compiles the same
    body below."""
    stack = np.empty(128, dtype=np.int64)
    bd = np.empty(k)
    bp = np.empty((k, 3))
    for qi in range(queries.shape[0]):
        qx, qy, qz = queries[qi, 0], queries[qi, 1], queries[qi, 2]
        nbest = 0
        thr = thr0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            d = 0.0
            if qx < lo[node, 0]:
                t = lo[node, 0] - qx
                d += t * t
            elif qx > hi[node, 0]:
                t = qx - hi[node, 0]
                d += t * t
            if qy < lo[node, 1]:
                t = lo[node, 1] - qy
                d += t * t
            elif qy > hi[node, 1]:
                t = qy - hi[node, 1]
                d += t * t
            if qz < lo[node, 2]:
                t = lo[node, 2] - qz
                d += t * t
            elif qz > hi[node, 2]:
                t = qz - hi[node, 2]
                d += t * t
            if d > thr:
                continue
            ax = axis[node]
            if ax >= 0:
                q_ax = qx if ax == 0 else (qy if ax == 1 else qz)
                if q_ax <= split[node]:
                    stack[top] = right[node]
                    stack[top + 1] = left[node]
                else:
                    stack[top] = left[node]
                    stack[top + 1] = right[node]
                top += 2
                continue
            for i in range(start[node], end[node]):
                px = pts[i, 0]
                py = pts[i, 1]
                pz = pts[i, 2]
                dx = px - qx
                dy = py - qy
                dz = pz - qz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 > thr:
                    continue
                # worse-than-worst check with lexicographic tie-break
                if nbest == k:
                    w = nbest - 1
                    if d2 > bd[w]:
                        continue
                    if d2 == bd[w]:
                        if px > bp[w, 0]:
                            continue
                        if px == bp[w, 0]:
                            if py > bp[w, 1]:
                                continue
                            if py == bp[w, 1] and pz >= bp[w, 2]:
                                continue
                    nbest -= 1
                # sorted insertion by (d2, x, y, z)
                j = nbest
                while j > 0:
                    w = j - 1
                    worse = False
                    if bd[w] > d2:
                        worse = True
                    elif bd[w] == d2:
                        if bp[w, 0] > px:
                            worse = True
                        elif bp[w, 0] == px:
                            if bp[w, 1] > py:
                                worse = True
                            elif bp[w, 1] == py and bp[w, 2] > pz:
                                worse = True
                    if not worse:
                        break
                    bd[j] = bd[w]
                    bp[j, 0] = bp[w, 0]
                    bp[j, 1] = bp[w, 1]
                    bp[j, 2] = bp[w, 2]
                    j -= 1
                bd[j] = d2
                bp[j, 0] = px
                bp[j, 1] = py
                bp[j, 2] = pz
                nbest += 1
                if nbest == k:
                    thr = bd[k - 1]
        cnt[qi] = nbest
        for j in range(nbest):
            out[qi, j, 0] = bp[j, 0]
            out[qi, j, 1] = bp[j, 1]
            out[qi, j, 2] = bp[j, 2]


if HAVE_NUMBA:
    _knn_kernel = njit(cache=True)(_knn_kernel_py)
