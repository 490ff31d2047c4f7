"""Uniform-grid spatial partitioning and neighbor queries.

The domain is covered by cubic boxes of side `box_length`, surrounded by a
one-box halo so every agent's 27-box stencil stays inside the allocated
index range.  Box membership is `floor((p - origin) / box_length)` per
axis, half-open: an agent exactly on a face belongs to the higher box.
Per-box storage is three flat arrays (member count, head = the agent added
last, successor chains), rebuilt from scratch each step - no incremental
updates.

Queries use the closed ball (distance <= radius counts) and require
radius <= box_length, otherwise the 27-box stencil would miss neighbors;
violations raise `StencilTooSmallError` rather than silently truncating.

`brute_force_neighbors` / `brute_force_counts` / `brute_force_csr` are the
all-pairs oracle the test suite compares both the grid and the kd-tree
against.  All backends evaluate the identical float64 predicate
`dx*dx + dy*dy + dz*dz <= radius*radius`, so agreement is exact, not
approximate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .pool import AgentPool

DEFAULT_BOX_CAP = 1 << 24


class GridOverflowError(RuntimeError):
    """Grid would allocate more boxes than the configured cap."""


class StencilTooSmallError(ValueError):
    """Search radius exceeds box_length, so a 27-box stencil is incomplete."""


@dataclass
class UniformGrid:
    """Linked-cell index over one pool snapshot (positions at build time).

    box_count[b] is the number of agents in box b; box_head[b] is the agent
    added to b last (SENTINEL when empty); successors[i] chains from agent i
    to the agent added to the same box before it.
    """

    box_length: float
    origin: np.ndarray
    dims: np.ndarray
    box_count: np.ndarray
    box_head: np.ndarray
    successors: np.ndarray
    box_index: np.ndarray

    @property
    def num_boxes(self):
        return int(self.box_count.shape[0])

    @property
    def occupied_box_count(self):
        return int(np.count_nonzero(self.box_count))

    @property
    def max_occupancy(self):
        return int(self.box_count.max()) if self.num_boxes else 0

    def occupancy_histogram(self):
        """histogram[k] = number of boxes holding exactly k agents."""
        return np.bincount(self.box_count)

    def box_coords(self):
        """Per-agent integer box coordinates (ix, iy, iz)."""
        dimy = int(self.dims[1])
        dimz = int(self.dims[2])
        iz = self.box_index % dimz
        rest = self.box_index // dimz
        return rest // dimy, rest % dimy, iz

    def stencil_candidate_cap(self):
        """Upper bound on 27-box stencil members for any agent."""
        return 27 * self.max_occupancy


def build_grid(pool: AgentPool, interaction_radius=None, parallel=False,
               box_cap=DEFAULT_BOX_CAP):
    """Index a pool with box_length = max(interaction_radius, max diameter).

    The diameter floor guarantees the 27-box stencil covers every possible
    sphere-sphere contact; a larger interaction_radius widens boxes for
    correspondingly larger queries.  The parallel path only distributes the
    box-id computation; membership and chain order are identical to the
    serial path bit for bit.
    """
    if pool.count == 0:
        raise ValueError("cannot build a grid over an empty pool")
    box_length = pool.max_diameter()
    if interaction_radius is not None:
        if not float(interaction_radius) > 0:
            raise ValueError("interaction_radius must be positive, got %r"
                             % (interaction_radius,))
        box_length = max(float(interaction_radius), box_length)
    bbox = pool.bounding_box()
    origin = bbox.lo - box_length
    span = bbox.hi - bbox.lo
    dims = (np.floor(span / box_length).astype(np.int64) + 3)
    num_boxes = int(dims[0] * dims[1] * dims[2])
    if num_boxes > box_cap:
        raise GridOverflowError(
            "grid of %d x %d x %d = %d boxes exceeds cap %d; "
            "population too sparse for box_length %g"
            % (dims[0], dims[1], dims[2], num_boxes, box_cap, box_length))
    if parallel:
        flat = kernels.box_ids_parallel(
            pool.position_x, pool.position_y, pool.position_z,
            float(origin[0]), float(origin[1]), float(origin[2]),
            box_length, int(dims[0]), int(dims[1]), int(dims[2]))
    else:
        flat = _box_ids_numpy(pool, origin, box_length, dims)
    head, successor, count = kernels.link_chains(flat, num_boxes)
    return UniformGrid(box_length=box_length, origin=origin, dims=dims,
                       box_count=count, box_head=head, successors=successor,
                       box_index=flat)


def _box_ids_numpy(pool, origin, box_length, dims):
    flat = None
    for axis, col in enumerate((pool.position_x, pool.position_y, pool.position_z)):
        ids = np.floor((col.astype(np.float64) - origin[axis]) / box_length).astype(np.int64)
        np.clip(ids, 0, int(dims[axis]) - 1, out=ids)
        flat = ids if flat is None else flat * int(dims[axis]) + ids
    return flat


def _check_radius(grid, radius):
    radius = float(radius)
    if not radius > 0:
        raise ValueError("radius must be positive, got %r" % radius)
    if radius > grid.box_length:
        raise StencilTooSmallError(
            "radius %g exceeds box_length %g" % (radius, grid.box_length))
    return radius


def neighbor_counts(grid, pool, radius):
    """Number of other agents within `radius` of each agent."""
    radius = _check_radius(grid, radius)
    return kernels.grid_neighbor_counts(
        pool.position_x, pool.position_y, pool.position_z, grid.box_index,
        int(grid.dims[0]), int(grid.dims[1]), int(grid.dims[2]),
        grid.box_head, grid.successors, radius)


def neighbor_csr(grid, pool, radius):
    """(indptr, indices) neighbor table; each row ascends by neighbor uid."""
    radius = _check_radius(grid, radius)
    counts = neighbor_counts(grid, pool, radius)
    indptr = np.zeros(pool.count + 1, np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(int(indptr[-1]), np.int64)
    kernels.grid_neighbor_fill(
        pool.position_x, pool.position_y, pool.position_z, pool.uid,
        grid.box_index, int(grid.dims[0]), int(grid.dims[1]), int(grid.dims[2]),
        grid.box_head, grid.successors, radius, indptr, indices)
    return indptr, indices


def stencil_candidates(grid, query_index):
    """Storage indices of all agents sharing the query agent's 27-box
    stencil (no distance predicate), in chain order."""
    out = []
    dimx, dimy, dimz = (int(d) for d in grid.dims)
    flat = int(grid.box_index[query_index])
    iz = flat % dimz
    rest = flat // dimz
    iy = rest % dimy
    ix = rest // dimy
    for ax in range(max(ix - 1, 0), min(ix + 1, dimx - 1) + 1):
        for ay in range(max(iy - 1, 0), min(iy + 1, dimy - 1) + 1):
            for az in range(max(iz - 1, 0), min(iz + 1, dimz - 1) + 1):
                j = int(grid.box_head[(ax * dimy + ay) * dimz + az])
                while j != kernels.SENTINEL:
                    if j != query_index:
                        out.append(j)
                    j = int(grid.successors[j])
    return np.asarray(out, np.int64)


def neighbor_indices(grid, pool, query_index, radius):
    """Storage indices of agents within `radius` of the query agent,
    ascending by uid."""
    radius = _check_radius(grid, radius)
    cand = stencil_candidates(grid, query_index)
    if cand.shape[0] == 0:
        return cand
    dx = pool.position_x[cand].astype(np.float64) - np.float64(pool.position_x[query_index])
    dy = pool.position_y[cand].astype(np.float64) - np.float64(pool.position_y[query_index])
    dz = pool.position_z[cand].astype(np.float64) - np.float64(pool.position_z[query_index])
    hit = cand[dx * dx + dy * dy + dz * dz <= radius * radius]
    return hit[np.argsort(pool.uid[hit])]


def for_each_neighbor(grid, pool, query_index, radius, visitor):
    """Invoke visitor(j) once per agent j within `radius` of the query
    agent, in ascending uid order."""
    for j in neighbor_indices(grid, pool, query_index, radius):
        visitor(int(j))


def neighbor_table_hash(pool, indptr, indices):
    """Digest of a CSR neighbor table in uid space.

    Rows are visited in ascending owner uid and entries translated from
    storage indices to uids, so two tables describing the same neighborhoods
    hash equal even if the pools are stored in different orders.
    """
    h = hashlib.sha256()
    h.update(b"cellgrid-neighbors-v1")
    order = np.argsort(pool.uid, kind="stable")
    for i in order:
        row = indices[indptr[i]:indptr[i + 1]]
        h.update(pool.uid[i].tobytes())
        h.update(np.int64(row.shape[0]).tobytes())
        h.update(pool.uid[row].tobytes())
    return h.hexdigest()


def brute_force_neighbors(pool, query_index, radius):
    """Exact neighbor list for one agent by all-pairs distance, uid-ascending."""
    if not 0 <= query_index < pool.count:
        raise IndexError("query index %d out of range for %d agents"
                         % (query_index, pool.count))
    px = pool.position_x.astype(np.float64)
    py = pool.position_y.astype(np.float64)
    pz = pool.position_z.astype(np.float64)
    dx = px - px[query_index]
    dy = py - py[query_index]
    dz = pz - pz[query_index]
    hit = np.flatnonzero(dx * dx + dy * dy + dz * dz <= float(radius) * float(radius))
    hit = hit[hit != query_index]
    return hit[np.argsort(pool.uid[hit])]


def brute_force_counts(pool, radius, rows=None, chunk=1024):
    """All-pairs oracle for neighbor counts (float64, no spatial index).

    `rows` restricts the query to a subset of agents (used for density
    subsampling); counts still run against the full pool.
    """
    px = pool.position_x.astype(np.float64)
    py = pool.position_y.astype(np.float64)
    pz = pool.position_z.astype(np.float64)
    radius2 = float(radius) * float(radius)
    if rows is None:
        rows = np.arange(pool.count, dtype=np.int64)
    else:
        rows = np.asarray(rows, np.int64)
    out = np.empty(rows.shape[0], np.int64)
    for start in range(0, rows.shape[0], chunk):
        sel = rows[start:start + chunk]
        dx = px[sel][:, None] - px[None, :]
        dy = py[sel][:, None] - py[None, :]
        dz = pz[sel][:, None] - pz[None, :]
        mask = dx * dx + dy * dy + dz * dz <= radius2
        mask[np.arange(sel.shape[0]), sel] = False
        out[start:start + chunk] = mask.sum(axis=1)
    return out


def brute_force_csr(pool, radius, chunk=1024):
    """All-pairs oracle for the full neighbor table, rows uid-ascending."""
    px = pool.position_x.astype(np.float64)
    py = pool.position_y.astype(np.float64)
    pz = pool.position_z.astype(np.float64)
    radius2 = float(radius) * float(radius)
    n = pool.count
    counts = np.empty(n, np.int64)
    blocks = []
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        dx = px[start:stop][:, None] - px[None, :]
        dy = py[start:stop][:, None] - py[None, :]
        dz = pz[start:stop][:, None] - pz[None, :]
        mask = dx * dx + dy * dy + dz * dz <= radius2
        mask[np.arange(stop - start), np.arange(start, stop)] = False
        counts[start:stop] = mask.sum(axis=1)
        for r in range(stop - start):
            js = np.flatnonzero(mask[r])
            blocks.append(js[np.argsort(pool.uid[js])])
    indptr = np.zeros(n + 1, np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = (np.concatenate(blocks) if blocks else np.empty(0, np.int64))
    return indptr, indices.astype(np.int64)
