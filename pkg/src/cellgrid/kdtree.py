"""kd-tree neighbor-search baseline.

Reference point for the uniform grid: same queries, same float64 distance
predicate, same uid-ordered rows - only the index structure differs.  The
tree stores one point per node and splits each range at the median of its
widest axis, which bounds depth by ceil(log2(n)) + 1 even for degenerate
(duplicate or collinear) inputs.  Coordinates are snapshotted as float64
columns at build time, so a tree does not track later pool mutations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .pool import AgentPool


@dataclass
class KdTree:
    xs: np.ndarray
    ys: np.ndarray
    zs: np.ndarray
    axis: np.ndarray
    value: np.ndarray
    point: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def size(self):
        return int(self.xs.shape[0])

    def depth(self):
        """Longest root-to-node path; 0 for a single-node tree."""
        if self.size == 0:
            return -1
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            for child in (int(self.left[node]), int(self.right[node])):
                if child != kernels.SENTINEL:
                    stack.append((child, d + 1))
        return best

    def check_invariants(self):
        """Verify split ordering and the balanced-depth bound (test hook)."""
        n = self.size
        if n == 0:
            return
        seen = np.zeros(n, dtype=bool)
        stack = [(0, [])]  # node, list of (axis, value, side) bounds on the path
        cols = (self.xs, self.ys, self.zs)
        while stack:
            node, bounds = stack.pop()
            p = int(self.point[node])
            if seen[p]:
                raise AssertionError("point %d stored twice" % p)
            seen[p] = True
            for ax, v, side in bounds:
                c = float(cols[ax][p])
                if side == 0 and c > v:
                    raise AssertionError("left-subtree point above split value")
                if side == 1 and c < v:
                    raise AssertionError("right-subtree point below split value")
            ax = int(self.axis[node])
            v = float(self.value[node])
            if not math.isclose(v, float(cols[ax][p]), rel_tol=0.0, abs_tol=0.0):
                raise AssertionError("split value is not the node point's coordinate")
            if int(self.left[node]) != kernels.SENTINEL:
                stack.append((int(self.left[node]), bounds + [(ax, v, 0)]))
            if int(self.right[node]) != kernels.SENTINEL:
                stack.append((int(self.right[node]), bounds + [(ax, v, 1)]))
        if not seen.all():
            raise AssertionError("tree does not cover all points")
        if self.depth() > math.ceil(math.log2(n)) + 1:
            raise AssertionError("median split produced an unbalanced tree")


def build_kdtree(pool: AgentPool):
    xs = pool.position_x.astype(np.float64)
    ys = pool.position_y.astype(np.float64)
    zs = pool.position_z.astype(np.float64)
    axis, value, point, left, right = kernels.kd_build(xs, ys, zs)
    return KdTree(xs=xs, ys=ys, zs=zs, axis=axis, value=value,
                  point=point, left=left, right=right)


def neighbor_counts(tree, pool, radius):
    """Number of other agents within `radius` of each agent."""
    return kernels.kd_neighbor_counts(tree.xs, tree.ys, tree.zs,
                                      tree.axis, tree.value, tree.point,
                                      tree.left, tree.right, float(radius))


def neighbor_csr(tree, pool, radius):
    """(indptr, indices) neighbor table; each row ascends by neighbor uid."""
    counts = neighbor_counts(tree, pool, radius)
    indptr = np.zeros(pool.count + 1, np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(int(indptr[-1]), np.int64)
    kernels.kd_neighbor_fill(tree.xs, tree.ys, tree.zs, pool.uid,
                             tree.axis, tree.value, tree.point,
                             tree.left, tree.right, float(radius),
                             indptr, indices)
    return indptr, indices


def neighbor_indices(tree, pool, query_index, radius):
    """Storage indices of agents within `radius` of the query agent,
    ascending by uid (single-query traversal, no CSR detour)."""
    if not 0 <= query_index < pool.count:
        raise IndexError("query index %d out of range for %d agents"
                         % (query_index, pool.count))
    radius = float(radius)
    radius2 = radius * radius
    qx = float(tree.xs[query_index])
    qy = float(tree.ys[query_index])
    qz = float(tree.zs[query_index])
    hits = []
    stack = [0] if tree.size else []
    while stack:
        node = stack.pop()
        p = int(tree.point[node])
        dx = tree.xs[p] - qx
        dy = tree.ys[p] - qy
        dz = tree.zs[p] - qz
        if dx * dx + dy * dy + dz * dz <= radius2 and p != query_index:
            hits.append(p)
        ax = int(tree.axis[node])
        coord = (qx, qy, qz)[ax]
        v = tree.value[node]
        child = int(tree.left[node])
        if child != kernels.SENTINEL and coord - v <= radius:
            stack.append(child)
        child = int(tree.right[node])
        if child != kernels.SENTINEL and v - coord <= radius:
            stack.append(child)
    hits = np.asarray(hits, np.int64)
    return hits[np.argsort(pool.uid[hits])] if hits.shape[0] else hits


def kdtree_radius_query(tree, pool, query_index, radius, visitor):
    """Invoke visitor(j) once per agent j within `radius` of the query
    agent, in ascending uid order (same contract as the grid backend)."""
    for j in neighbor_indices(tree, pool, query_index, radius):
        visitor(int(j))
