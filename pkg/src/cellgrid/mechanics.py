"""Pairwise collision mechanics - readable reference implementation.

This module states the model in plain numpy; the compiled kernels implement
the same arithmetic in the same operation order, and the unit tests hold
the two bit-identical on common inputs.  Keep both sides in sync when
changing anything here.

Model: two spheres at distance d with radii r1, r2 overlap by
delta = r1 + r2 - d.  A positive overlap produces a repulsive force on
agent 1 of magnitude kappa*delta - gamma*sqrt(r*delta) (r = r1*r2/(r1+r2),
the reduced radius; the subtracted term is a pull-back that softens shallow
contacts) along the center line (p1 - p2)/d.  Non-overlapping pairs exert
nothing.  Coincident centers (d = 0) have no center line, so the direction
comes from a hash of the uid pair - deterministic, reorder-invariant, and
antisymmetric because the smaller uid takes the positive sign.

Displacement resolution: forces below an agent's adherence threshold are
dropped entirely, otherwise the agent moves force * timestep, rescaled if
that step would exceed max_displacement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (PAR_ADHERENCE_SCALE, PAR_GAMMA, PAR_KAPPA, PAR_MAX_DISP,
                      PAR_ONE, PAR_TIMESTEP, PAR_ZERO, PARAM_COUNT)
from .rng import degenerate_direction

DEFAULT_ADHERENCE = 0.4

# Arithmetic cost model for one evaluated (overlapping, ordered) pair:
#   separation + overlap test: 3 sub, 3 mul, 2 add, 1 sqrt, 1 add, 1 sub = 11
#   reduced radius:            1 mul, 1 div                              =  2
#   magnitude:                 2 mul, 1 sqrt, 1 mul, 1 sub               =  5
#   direction scale:           1 div, 3 mul                              =  4
#   accumulation:              3 add                                     =  3
FLOPS_PER_FORCE_EVAL = 25


class DegenerateDirectionError(ValueError):
    """Coincident centers with overlap but no uids to derive a direction."""


@dataclass(frozen=True)
class ForceParams:
    """Scalar knobs of the collision/displacement model."""

    kappa: float = 2.0
    gamma: float = 1.0
    timestep: float = 0.01
    max_displacement: float = 3.0
    adherence_scale: float = 1.0

    def __post_init__(self):
        if self.kappa < 0 or self.gamma < 0 or self.adherence_scale < 0:
            raise ValueError("force coefficients must be nonnegative")
        if not self.timestep > 0:
            raise ValueError("timestep must be positive")
        if not self.max_displacement > 0:
            raise ValueError("max_displacement must be positive")

    def as_array(self, dtype):
        """Parameter vector in the pool dtype, as the kernels consume it."""
        out = np.zeros(PARAM_COUNT, dtype=dtype)
        out[PAR_KAPPA] = self.kappa
        out[PAR_GAMMA] = self.gamma
        out[PAR_TIMESTEP] = self.timestep
        out[PAR_MAX_DISP] = self.max_displacement
        out[PAR_ADHERENCE_SCALE] = self.adherence_scale
        out[PAR_ZERO] = 0.0
        out[PAR_ONE] = 1.0
        return out


def _infer_dtype(pos):
    dt = np.asarray(pos).dtype
    return dt if dt.kind == "f" else np.dtype(np.float64)


def collision_force(pos1, radius1, pos2, radius2, params,
                    uid1=None, uid2=None, dtype=None):
    """Force exerted on agent 1 by agent 2, in the working dtype."""
    dt = np.dtype(dtype) if dtype is not None else _infer_dtype(pos1)
    T = dt.type
    p1 = np.asarray(pos1, dtype=dt)
    p2 = np.asarray(pos2, dtype=dt)
    pv = params.as_array(dt)
    zero = pv[PAR_ZERO]
    dx = p1[0] - p2[0]
    dy = p1[1] - p2[1]
    dz = p1[2] - p2[2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    r1 = T(radius1)
    r2 = T(radius2)
    rsum = r1 + r2
    delta = rsum - dist
    if not delta > zero:
        return np.zeros(3, dt)
    req = (r1 * r2) / rsum
    mag = pv[PAR_KAPPA] * delta - pv[PAR_GAMMA] * np.sqrt(req * delta)
    if dist > zero:
        s = mag / dist
        return np.array([s * dx, s * dy, s * dz], dtype=dt)
    if uid1 is None or uid2 is None:
        raise DegenerateDirectionError(
            "coincident centers with overlap %r require uids for a direction" % float(delta))
    u = degenerate_direction(uid1, uid2)
    sign = 1.0 if uid1 < uid2 else -1.0
    return (np.float64(mag) * (sign * u)).astype(dt)


def resolve_displacement(force, adherence, params, dtype=None):
    """Bounded Euler step for one agent's summed force."""
    dt = np.dtype(dtype) if dtype is not None else _infer_dtype(force)
    T = dt.type
    f = np.asarray(force, dtype=dt)
    pv = params.as_array(dt)
    norm = np.sqrt(f[0] * f[0] + f[1] * f[1] + f[2] * f[2])
    if norm <= pv[PAR_ADHERENCE_SCALE] * T(adherence):
        return np.zeros(3, dt)
    s = pv[PAR_TIMESTEP]
    if norm * s > pv[PAR_MAX_DISP]:
        s = pv[PAR_MAX_DISP] / norm
    return np.array([f[0] * s, f[1] * s, f[2] * s], dtype=dt)


def colliding_pair_count(pool):
    """Ordered (i, j) pairs with positive overlap, by all-pairs evaluation.

    Computed in the pool dtype with the same expression shape as the
    kernels, so the count matches their force_evals counter exactly.
    """
    px, py, pz = pool.position_x, pool.position_y, pool.position_z
    radii = pool.radii()
    dx = px[:, None] - px[None, :]
    dy = py[:, None] - py[None, :]
    dz = pz[:, None] - pz[None, :]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    delta = (radii[:, None] + radii[None, :]) - dist
    hit = delta > pool.dtype.type(0)
    np.fill_diagonal(hit, False)
    return int(hit.sum())


def accumulate_forces(pool, grid, query_index, params):
    """Net collision force on one agent: stencil candidates filtered to
    positive overlap, summed in ascending uid order.

    Readable twin of the compiled force phase; identical candidate sets and
    summation order make the two agree bit for bit.
    """
    from .spatial import stencil_candidates  # local import, avoids a cycle

    dt = pool.dtype
    T = dt.type
    radii = pool.radii()
    px, py, pz = pool.position_x, pool.position_y, pool.position_z
    i = query_index
    cand = stencil_candidates(grid, i)
    if cand.shape[0]:
        dx = px[i] - px[cand]
        dy = py[i] - py[cand]
        dz = pz[i] - pz[cand]
        deltas = (radii[i] + radii[cand]) - np.sqrt(dx * dx + dy * dy + dz * dz)
        keep = cand[deltas > T(0)]
        keep = keep[np.argsort(pool.uid[keep])]
    else:
        keep = cand
    fx = T(0)
    fy = T(0)
    fz = T(0)
    for j in keep:
        f = collision_force((px[i], py[i], pz[i]), radii[i],
                            (px[j], py[j], pz[j]), radii[j],
                            params, uid1=int(pool.uid[i]), uid2=int(pool.uid[j]),
                            dtype=dt)
        fx = fx + f[0]
        fy = fy + f[1]
        fz = fz + f[2]
    return np.array([fx, fy, fz], dtype=dt)


def all_pairs_forces(pool, params):
    """All-pairs reference for per-agent net force, uid-ordered summation.

    O(n^2); exists to cross-check the grid-accelerated kernels on small
    pools.  Returns (forces (n, 3), evaluated pair count).
    """
    n = pool.count
    dt = pool.dtype
    T = dt.type
    zero = T(0)
    radii = pool.radii()
    px, py, pz = pool.position_x, pool.position_y, pool.position_z
    forces = np.zeros((n, 3), dt)
    evals = 0
    for i in range(n):
        deltas = (radii[i] + radii) - np.sqrt(
            (px[i] - px) * (px[i] - px)
            + (py[i] - py) * (py[i] - py)
            + (pz[i] - pz) * (pz[i] - pz))
        keep = np.flatnonzero(deltas > zero)
        keep = keep[keep != i]
        keep = keep[np.argsort(pool.uid[keep])]
        evals += keep.shape[0]
        fx = zero
        fy = zero
        fz = zero
        for j in keep:
            f = collision_force((px[i], py[i], pz[i]), radii[i],
                                (px[j], py[j], pz[j]), radii[j],
                                params, uid1=int(pool.uid[i]), uid2=int(pool.uid[j]),
                                dtype=dt)
            fx = fx + f[0]
            fy = fy + f[1]
            fz = fz + f[2]
        forces[i, 0] = fx
        forces[i, 1] = fy
        forces[i, 2] = fz
    return forces, evals


def reference_displacements(pool, params):
    """Brute-force displacements for a whole pool (oracle for the engine)."""
    forces, evals = all_pairs_forces(pool, params)
    out = np.zeros((pool.count, 3), pool.dtype)
    for i in range(pool.count):
        out[i] = resolve_displacement(forces[i], pool.adherence[i], params,
                                      dtype=pool.dtype)
    return out, evals
