"""Compiled numerical core shared by every execution strategy.

Determinism contract
--------------------
All strategies (serial, agent-parallel, voxel-tiled) must produce
bit-identical displacements.  Three rules make that hold:

1. Snapshot reads, disjoint writes.  Kernels read pre-step positions and
   write only the displacement slot of the agent they own, so scheduling
   order cannot leak into results.
2. uid-ordered accumulation.  Floating-point addition is not associative,
   so each agent's colliding neighbors are sorted by uid before their force
   contributions are summed.  Every strategy funnels through the same
   `_sum_forces_sorted` helper, which fixes both the order and the exact
   sequence of arithmetic operations.
3. One dtype end to end.  Pair arithmetic runs in the pool dtype.  Scalar
   parameters arrive through a params vector already cast to that dtype
   (slots below) because a stray float64 literal would silently promote a
   float32 pipeline.  The only float64 excursion is the hashed fallback
   direction for coincident centers, downcast through a one-element scratch
   buffer so accumulator types never widen.

Neighbor *queries* (uniform search radius, used by the verification oracle
and the kd-tree comparison) deliberately evaluate their distance predicate
in float64 regardless of pool precision, so the grid path, the kd path and
the numpy brute-force oracle agree exactly.

`fastmath` stays off everywhere: reassociation would break rule 2.
"""

from __future__ import annotations

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
from numba import config as _numba_config
from numba import njit, prange, set_num_threads

# Empty box head / end-of-chain marker in the linked-cell lists.
SENTINEL = -1

# Slots of the scalar-parameter vector handed to force kernels.
PAR_KAPPA = 0
PAR_GAMMA = 1
PAR_TIMESTEP = 2
PAR_MAX_DISP = 3
PAR_ADHERENCE_SCALE = 4
PAR_ZERO = 5
PAR_ONE = 6
PARAM_COUNT = 7

# Agents processed in one allocation block by the agent-parallel kernel.
_BLOCK = 256

_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_SM64_INC = np.uint64(0x9E3779B97F4A7C15)
_SM64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_M2 = np.uint64(0x94D049BB133111EB)
_TWO_NEG64 = np.float64(2.0 ** -64)
_TWO_PI = np.float64(2.0 * np.pi)


def thread_limit():
    """Maximum worker threads numba was configured with at process start."""
    return int(_numba_config.NUMBA_NUM_THREADS)


def clamp_threads(requested):
    """Set the active numba thread count, clamped to [1, thread_limit()]."""
    t = max(1, min(int(requested), thread_limit()))
    set_num_threads(t)
    return t


# ---------------------------------------------------------------------------
# Hashed fallback direction for coincident centers
# ---------------------------------------------------------------------------

@njit(cache=True)
def _splitmix64(x):
    x = x + _SM64_INC
    x = (x ^ (x >> _U30)) * _SM64_M1
    x = (x ^ (x >> _U27)) * _SM64_M2
    return x ^ (x >> _U31)


@njit(cache=True)
def _degenerate_dir(uid_lo, uid_hi):
    """Unit vector (float64) for an unordered uid pair with zero separation."""
    a = _splitmix64(uid_lo)
    b = _splitmix64(a ^ uid_hi)
    c = _splitmix64(b)
    z = 2.0 * (b * _TWO_NEG64) - 1.0
    phi = _TWO_PI * (c * _TWO_NEG64)
    s = np.sqrt(max(0.0, 1.0 - z * z))
    return s * np.cos(phi), s * np.sin(phi), z


# ---------------------------------------------------------------------------
# Grid construction
# ---------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def box_ids_parallel(px, py, pz, ox, oy, oz, box_length, dimx, dimy, dimz):
    """Flat box id per agent; matches the numpy builder bit for bit."""
    n = px.shape[0]
    out = np.empty(n, np.int64)
    for i in prange(n):
        ix = np.int64(np.floor((np.float64(px[i]) - ox) / box_length))
        iy = np.int64(np.floor((np.float64(py[i]) - oy) / box_length))
        iz = np.int64(np.floor((np.float64(pz[i]) - oz) / box_length))
        if ix < 0:
            ix = 0
        elif ix >= dimx:
            ix = dimx - 1
        if iy < 0:
            iy = 0
        elif iy >= dimy:
            iy = dimy - 1
        if iz < 0:
            iz = 0
        elif iz >= dimz:
            iz = dimz - 1
        out[i] = (ix * dimy + iy) * dimz + iz
    return out


@njit(cache=True)
def link_chains(box_index, box_count):
    """Counting pass of grid assembly: per-box count, head = last agent
    added to the box, successor chain threading the rest."""
    n = box_index.shape[0]
    head = np.full(box_count, SENTINEL, np.int64)
    successor = np.full(n, SENTINEL, np.int64)
    count = np.zeros(box_count, np.int64)
    for i in range(n):
        b = box_index[i]
        successor[i] = head[b]
        head[b] = i
        count[b] += 1
    return head, successor, count


@njit(cache=True)
def _gather_stencil(i, flat, dimx, dimy, dimz, head, successor, cand):
    """Indices of all agents (excluding i) in the 27-box stencil around
    agent i's box.  Order is whatever the chains yield; callers re-sort."""
    iz = flat % dimz
    rest = flat // dimz
    iy = rest % dimy
    ix = rest // dimy
    x0 = max(ix - 1, 0)
    x1 = min(ix + 1, dimx - 1)
    y0 = max(iy - 1, 0)
    y1 = min(iy + 1, dimy - 1)
    z0 = max(iz - 1, 0)
    z1 = min(iz + 1, dimz - 1)
    m = 0
    for ax in range(x0, x1 + 1):
        for ay in range(y0, y1 + 1):
            base = (ax * dimy + ay) * dimz
            for az in range(z0, z1 + 1):
                j = head[base + az]
                while j != SENTINEL:
                    if j != i:
                        cand[m] = j
                        m += 1
                    j = successor[j]
    return m


# ---------------------------------------------------------------------------
# Pair forces
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sum_forces_sorted(i, cand, m, keep, px, py, pz, radii, uid, params, tmp):
    """Collision force on agent i from candidates cand[:m].

    Pass 1 keeps candidates with positive overlap, pass 2 sorts them by uid
    and accumulates contributions in that order.  Returns
    (fx, fy, fz, evaluated_pairs, degenerate_pairs).
    """
    zero = params[PAR_ZERO]
    kappa = params[PAR_KAPPA]
    gamma = params[PAR_GAMMA]
    xi = px[i]
    yi = py[i]
    zi = pz[i]
    ri = radii[i]
    nk = 0
    for t in range(m):
        j = cand[t]
        dx = xi - px[j]
        dy = yi - py[j]
        dz = zi - pz[j]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        delta = (ri + radii[j]) - dist
        if delta > zero:
            keep[nk] = j
            nk += 1
    # uids are unique, so any sort yields the same uid-ascending order;
    # insertion sort wins for the short lists typical of contact problems,
    # argsort takes over for dense neighborhoods.
    if nk <= 32:
        for a in range(1, nk):
            v = keep[a]
            kv = uid[v]
            b = a - 1
            while b >= 0 and uid[keep[b]] > kv:
                keep[b + 1] = keep[b]
                b -= 1
            keep[b + 1] = v
    elif nk > 0:
        kuid = np.empty(nk, np.uint64)
        for a in range(nk):
            kuid[a] = uid[keep[a]]
        order = np.argsort(kuid)
        kcopy = keep[:nk].copy()
        for a in range(nk):
            keep[a] = kcopy[order[a]]
    fx = zero
    fy = zero
    fz = zero
    ndeg = 0
    for t in range(nk):
        j = keep[t]
        dx = xi - px[j]
        dy = yi - py[j]
        dz = zi - pz[j]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        rj = radii[j]
        rsum = ri + rj
        delta = rsum - dist
        req = (ri * rj) / rsum
        mag = kappa * delta - gamma * np.sqrt(req * delta)
        if dist > zero:
            s = mag / dist
            fx = fx + s * dx
            fy = fy + s * dy
            fz = fz + s * dz
        else:
            ndeg += 1
            ui = uid[i]
            uj = uid[j]
            ux, uy, uz = _degenerate_dir(min(ui, uj), max(ui, uj))
            sign = 1.0 if ui < uj else -1.0
            tmp[0] = mag * (sign * ux)
            fx = fx + tmp[0]
            tmp[0] = mag * (sign * uy)
            fy = fy + tmp[0]
            tmp[0] = mag * (sign * uz)
            fz = fz + tmp[0]
    return fx, fy, fz, nk, ndeg


@njit(cache=True)
def _write_displacement(i, fx, fy, fz, adherence, params, out_dx, out_dy, out_dz):
    """Force -> bounded displacement for one agent (adherence gate, then
    Euler step capped at the maximum per-step travel)."""
    zero = params[PAR_ZERO]
    norm = np.sqrt(fx * fx + fy * fy + fz * fz)
    if norm <= params[PAR_ADHERENCE_SCALE] * adherence[i]:
        out_dx[i] = zero
        out_dy[i] = zero
        out_dz[i] = zero
    else:
        s = params[PAR_TIMESTEP]
        if norm * s > params[PAR_MAX_DISP]:
            s = params[PAR_MAX_DISP] / norm
        out_dx[i] = fx * s
        out_dy[i] = fy * s
        out_dz[i] = fz * s


@njit(cache=True)
def force_phase_serial(px, py, pz, radii, adherence, uid, box_index,
                       dimx, dimy, dimz, head, successor, params, cand_cap,
                       out_dx, out_dy, out_dz):
    n = px.shape[0]
    cand = np.empty(cand_cap, np.int64)
    keep = np.empty(cand_cap, np.int64)
    tmp = np.empty(1, px.dtype)
    evals = 0
    cands = 0
    ndeg = 0
    for i in range(n):
        m = _gather_stencil(i, box_index[i], dimx, dimy, dimz, head, successor, cand)
        fx, fy, fz, nk, nd = _sum_forces_sorted(i, cand, m, keep, px, py, pz,
                                                radii, uid, params, tmp)
        cands += m
        evals += nk
        ndeg += nd
        _write_displacement(i, fx, fy, fz, adherence, params, out_dx, out_dy, out_dz)
    return evals, cands, ndeg


@njit(cache=True, parallel=True)
def force_phase_parallel(px, py, pz, radii, adherence, uid, box_index,
                         dimx, dimy, dimz, head, successor, params, cand_cap,
                         out_dx, out_dy, out_dz):
    """Agent-parallel variant: same per-agent arithmetic as the serial
    kernel, agents partitioned over threads in allocation blocks."""
    n = px.shape[0]
    nblocks = (n + _BLOCK - 1) // _BLOCK
    evals = 0
    cands = 0
    ndeg = 0
    for blk in prange(nblocks):
        cand = np.empty(cand_cap, np.int64)
        keep = np.empty(cand_cap, np.int64)
        tmp = np.empty(1, px.dtype)
        lo = blk * _BLOCK
        hi = min(n, lo + _BLOCK)
        b_evals = 0
        b_cands = 0
        b_ndeg = 0
        for i in range(lo, hi):
            m = _gather_stencil(i, box_index[i], dimx, dimy, dimz, head, successor, cand)
            fx, fy, fz, nk, nd = _sum_forces_sorted(i, cand, m, keep, px, py, pz,
                                                    radii, uid, params, tmp)
            b_cands += m
            b_evals += nk
            b_ndeg += nd
            _write_displacement(i, fx, fy, fz, adherence, params, out_dx, out_dy, out_dz)
        evals += b_evals
        cands += b_cands
        ndeg += b_ndeg
    return evals, cands, ndeg


@njit(cache=True, parallel=True)
def force_phase_voxel(px, py, pz, radii, adherence, uid,
                      dimx, dimy, dimz, head, successor, count, boxes,
                      params, tile_capacity, out_dx, out_dy, out_dz, overflow):
    """Voxel-tiled variant: one task per occupied box.  Each task stages
    every agent record in the 27-box stencil into task-local buffers (the
    capacity-bounded tile), then resolves all agents of the central box
    against the staged copies.  Values are bit-equal copies and summation
    goes through the shared uid-ordered helper, so results match the other
    strategies exactly.  Boxes whose stencil exceeds tile_capacity are
    skipped and reported through `overflow`.
    """
    nb = boxes.shape[0]
    evals = 0
    cands = 0
    ndeg = 0
    for t in prange(nb):
        b = boxes[t]
        iz = b % dimz
        rest = b // dimz
        iy = rest % dimy
        ix = rest // dimy
        x0 = max(ix - 1, 0)
        x1 = min(ix + 1, dimx - 1)
        y0 = max(iy - 1, 0)
        y1 = min(iy + 1, dimy - 1)
        z0 = max(iz - 1, 0)
        z1 = min(iz + 1, dimz - 1)
        need = 0
        for ax in range(x0, x1 + 1):
            for ay in range(y0, y1 + 1):
                base = (ax * dimy + ay) * dimz
                for az in range(z0, z1 + 1):
                    need += count[base + az]
        if need > tile_capacity:
            overflow[t] = need
            continue
        sx = np.empty(need, px.dtype)
        sy = np.empty(need, px.dtype)
        sz = np.empty(need, px.dtype)
        sr = np.empty(need, px.dtype)
        suid = np.empty(need, np.uint64)
        sidx = np.empty(need, np.int64)
        k = 0
        for ax in range(x0, x1 + 1):
            for ay in range(y0, y1 + 1):
                base = (ax * dimy + ay) * dimz
                for az in range(z0, z1 + 1):
                    j = head[base + az]
                    while j != SENTINEL:
                        sx[k] = px[j]
                        sy[k] = py[j]
                        sz[k] = pz[j]
                        sr[k] = radii[j]
                        suid[k] = uid[j]
                        sidx[k] = j
                        k += 1
                        j = successor[j]
        cand = np.empty(need, np.int64)
        keep = np.empty(need, np.int64)
        tmp = np.empty(1, px.dtype)
        b_evals = 0
        b_cands = 0
        b_ndeg = 0
        j = head[b]
        while j != SENTINEL:
            m = 0
            i_local = 0
            for q in range(k):
                if sidx[q] == j:
                    i_local = q
                else:
                    cand[m] = q
                    m += 1
            fx, fy, fz, nk, nd = _sum_forces_sorted(i_local, cand, m, keep,
                                                    sx, sy, sz, sr, suid, params, tmp)
            b_cands += m
            b_evals += nk
            b_ndeg += nd
            _write_displacement(j, fx, fy, fz, adherence, params, out_dx, out_dy, out_dz)
            j = successor[j]
        evals += b_evals
        cands += b_cands
        ndeg += b_ndeg
    return evals, cands, ndeg


# ---------------------------------------------------------------------------
# Uniform-radius neighbor queries (float64 predicate, see module docstring)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _grid_count_one(i, radius2, flat, dimx, dimy, dimz, head, successor, px, py, pz):
    qx = np.float64(px[i])
    qy = np.float64(py[i])
    qz = np.float64(pz[i])
    iz = flat % dimz
    rest = flat // dimz
    iy = rest % dimy
    ix = rest // dimy
    x0 = max(ix - 1, 0)
    x1 = min(ix + 1, dimx - 1)
    y0 = max(iy - 1, 0)
    y1 = min(iy + 1, dimy - 1)
    z0 = max(iz - 1, 0)
    z1 = min(iz + 1, dimz - 1)
    c = 0
    for ax in range(x0, x1 + 1):
        for ay in range(y0, y1 + 1):
            base = (ax * dimy + ay) * dimz
            for az in range(z0, z1 + 1):
                j = head[base + az]
                while j != SENTINEL:
                    if j != i:
                        dx = np.float64(px[j]) - qx
                        dy = np.float64(py[j]) - qy
                        dz = np.float64(pz[j]) - qz
                        if dx * dx + dy * dy + dz * dz <= radius2:
                            c += 1
                    j = successor[j]
    return c


@njit(cache=True)
def grid_neighbor_counts(px, py, pz, box_index, dimx, dimy, dimz,
                         head, successor, radius):
    n = px.shape[0]
    radius2 = radius * radius
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = _grid_count_one(i, radius2, box_index[i], dimx, dimy, dimz,
                                 head, successor, px, py, pz)
    return out


@njit(cache=True)
def _sort_row_by_uid(indices, lo, hi, uid):
    for a in range(lo + 1, hi):
        v = indices[a]
        kv = uid[v]
        b = a - 1
        while b >= lo and uid[indices[b]] > kv:
            indices[b + 1] = indices[b]
            b -= 1
        indices[b + 1] = v


@njit(cache=True)
def grid_neighbor_fill(px, py, pz, uid, box_index, dimx, dimy, dimz,
                       head, successor, radius, indptr, indices):
    """Fill a CSR neighbor table whose row sizes were computed by
    `grid_neighbor_counts`; each row comes out sorted by uid."""
    n = px.shape[0]
    radius2 = radius * radius
    for i in range(n):
        qx = np.float64(px[i])
        qy = np.float64(py[i])
        qz = np.float64(pz[i])
        flat = box_index[i]
        iz = flat % dimz
        rest = flat // dimz
        iy = rest % dimy
        ix = rest // dimy
        x0 = max(ix - 1, 0)
        x1 = min(ix + 1, dimx - 1)
        y0 = max(iy - 1, 0)
        y1 = min(iy + 1, dimy - 1)
        z0 = max(iz - 1, 0)
        z1 = min(iz + 1, dimz - 1)
        w = indptr[i]
        for ax in range(x0, x1 + 1):
            for ay in range(y0, y1 + 1):
                base = (ax * dimy + ay) * dimz
                for az in range(z0, z1 + 1):
                    j = head[base + az]
                    while j != SENTINEL:
                        if j != i:
                            dx = np.float64(px[j]) - qx
                            dy = np.float64(py[j]) - qy
                            dz = np.float64(pz[j]) - qz
                            if dx * dx + dy * dy + dz * dz <= radius2:
                                indices[w] = j
                                w += 1
                        j = successor[j]
        _sort_row_by_uid(indices, indptr[i], w, uid)


# ---------------------------------------------------------------------------
# kd-tree baseline
# ---------------------------------------------------------------------------

@njit(cache=True)
def kd_build(xs, ys, zs):
    """Median-split kd-tree over points given as float64 columns.

    Node arrays (length n, preorder allocation, root at 0): split axis,
    split value, the point stored at the node, child node ids (SENTINEL for
    none).  Each level splits its index range at the median of the widest
    axis, so depth is bounded by ceil(log2(n)) + 1 regardless of the data.
    """
    n = xs.shape[0]
    axis = np.zeros(n, np.int64)
    value = np.zeros(n, np.float64)
    point = np.full(n, SENTINEL, np.int64)
    left = np.full(n, SENTINEL, np.int64)
    right = np.full(n, SENTINEL, np.int64)
    if n == 0:
        return axis, value, point, left, right
    idx = np.arange(n)
    stack = np.empty((128, 4), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = SENTINEL
    stack[0, 3] = 0
    top = 1
    next_node = 0
    while top > 0:
        top -= 1
        lo = stack[top, 0]
        hi = stack[top, 1]
        parent = stack[top, 2]
        side = stack[top, 3]
        first = idx[lo]
        minx = xs[first]
        maxx = minx
        miny = ys[first]
        maxy = miny
        minz = zs[first]
        maxz = minz
        for t in range(lo + 1, hi):
            p = idx[t]
            v = xs[p]
            if v < minx:
                minx = v
            elif v > maxx:
                maxx = v
            v = ys[p]
            if v < miny:
                miny = v
            elif v > maxy:
                maxy = v
            v = zs[p]
            if v < minz:
                minz = v
            elif v > maxz:
                maxz = v
        ax = 0
        ext = maxx - minx
        if maxy - miny > ext:
            ax = 1
            ext = maxy - miny
        if maxz - minz > ext:
            ax = 2
        sub = idx[lo:hi].copy()
        if ax == 0:
            order = np.argsort(xs[sub])
        elif ax == 1:
            order = np.argsort(ys[sub])
        else:
            order = np.argsort(zs[sub])
        idx[lo:hi] = sub[order]
        mid = (lo + hi) // 2
        p = idx[mid]
        node = next_node
        next_node += 1
        axis[node] = ax
        point[node] = p
        if ax == 0:
            value[node] = xs[p]
        elif ax == 1:
            value[node] = ys[p]
        else:
            value[node] = zs[p]
        if parent != SENTINEL:
            if side == 0:
                left[parent] = node
            else:
                right[parent] = node
        if mid + 1 < hi:
            stack[top, 0] = mid + 1
            stack[top, 1] = hi
            stack[top, 2] = node
            stack[top, 3] = 1
            top += 1
        if lo < mid:
            stack[top, 0] = lo
            stack[top, 1] = mid
            stack[top, 2] = node
            stack[top, 3] = 0
            top += 1
    return axis, value, point, left, right


@njit(cache=True)
def _kd_count_one(qx, qy, qz, radius, radius2, self_idx,
                  axis, value, point, left, right, xs, ys, zs):
    c = 0
    stack = np.empty(128, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        p = point[node]
        dx = xs[p] - qx
        dy = ys[p] - qy
        dz = zs[p] - qz
        if dx * dx + dy * dy + dz * dz <= radius2 and p != self_idx:
            c += 1
        ax = axis[node]
        if ax == 0:
            coord = qx
        elif ax == 1:
            coord = qy
        else:
            coord = qz
        v = value[node]
        child = left[node]
        if child != SENTINEL and coord - v <= radius:
            stack[top] = child
            top += 1
        child = right[node]
        if child != SENTINEL and v - coord <= radius:
            stack[top] = child
            top += 1
    return c


@njit(cache=True)
def kd_neighbor_counts(xs, ys, zs, axis, value, point, left, right, radius):
    n = xs.shape[0]
    radius2 = radius * radius
    out = np.empty(n, np.int64)
    for i in range(n):
        out[i] = _kd_count_one(xs[i], ys[i], zs[i], radius, radius2, i,
                               axis, value, point, left, right, xs, ys, zs)
    return out


@njit(cache=True)
def kd_neighbor_fill(xs, ys, zs, uid, axis, value, point, left, right,
                     radius, indptr, indices):
    n = xs.shape[0]
    radius2 = radius * radius
    stack = np.empty(128, np.int64)
    for i in range(n):
        qx = xs[i]
        qy = ys[i]
        qz = zs[i]
        w = indptr[i]
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            p = point[node]
            dx = xs[p] - qx
            dy = ys[p] - qy
            dz = zs[p] - qz
            if dx * dx + dy * dy + dz * dz <= radius2 and p != i:
                indices[w] = p
                w += 1
            ax = axis[node]
            if ax == 0:
                coord = qx
            elif ax == 1:
                coord = qy
            else:
                coord = qz
            v = value[node]
            child = left[node]
            if child != SENTINEL and coord - v <= radius:
                stack[top] = child
                top += 1
            child = right[node]
            if child != SENTINEL and v - coord <= radius:
                stack[top] = child
                top += 1
        _sort_row_by_uid(indices, indptr[i], w, uid)
