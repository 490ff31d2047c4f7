"""Per-step scheduler: behavior, locality sort, grid rebuild, force phase,
displacement apply - under three interchangeable execution strategies.

Strategy equivalence is the load-bearing guarantee: for any configuration,
Serial, AgentParallel(t) and VoxelTiled(t, c) produce bit-identical pools
after any number of steps.  It holds because every step is two-phase (the
force phase reads only pre-step positions and writes only per-agent
displacement slots) and because per-agent summation order is fixed by uid
inside the kernels.  Tests diff snapshot files across strategies to keep
this honest.

Step order within one call (fixed contract):
  behavior (growth then division) -> Morton re-sort if due -> grid rebuild
  -> force phase -> apply displacements (skipped when freeze_displacement).

Counters: force_evals counts ordered pairs with positive overlap;
candidates counts ordered stencil pairs examined; bytes_modeled models
memory traffic as records-touched x record size, where a record is the
five per-agent scalars the force phase reads (position x/y/z, radius,
adherence) in the active precision.  uid traffic is precision-independent
and deliberately excluded so the FP32:FP64 byte ratio is exactly 2.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels, morton, spatial
from .mechanics import ForceParams
from .pool import AgentPool, PrecisionMode
from .rng import unit_vector

# Scalars per agent record in the memory-traffic model (see module docstring).
RECORD_SCALARS = 5

_SIXTH_PI = np.pi / 6.0


class TileCapacityError(RuntimeError):
    """A voxel tile's 27-box stencil exceeded the configured staging capacity."""

    def __init__(self, box, needed, capacity):
        super().__init__(
            "stencil of box %d holds %d agents, exceeding tile capacity %d"
            % (box, needed, capacity))
        self.box = box
        self.needed = needed
        self.capacity = capacity


@dataclass(frozen=True)
class Serial:
    """Single-threaded reference strategy."""


@dataclass(frozen=True)
class AgentParallel:
    """One logical worker per agent, partitioned over thread_count threads."""

    thread_count: int

    def __post_init__(self):
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")


@dataclass(frozen=True)
class VoxelTiled:
    """One task per occupied box; each task stages its 27-box stencil into
    a bounded scratch tile shared by all member agents.

    tile_stencil_capacity None means size to 27 x the observed max box
    occupancy after each grid build (always sufficient)."""

    thread_count: int
    tile_stencil_capacity: Optional[int] = None

    def __post_init__(self):
        if self.thread_count < 1:
            raise ValueError("thread_count must be >= 1")
        if self.tile_stencil_capacity is not None and self.tile_stencil_capacity < 1:
            raise ValueError("tile_stencil_capacity must be >= 1")


def strategy_label(strategy):
    if isinstance(strategy, Serial):
        return "serial"
    if isinstance(strategy, AgentParallel):
        return "parallel(%d)" % strategy.thread_count
    if isinstance(strategy, VoxelTiled):
        return "voxel(%d)" % strategy.thread_count
    raise TypeError("unknown strategy %r" % (strategy,))


@dataclass(frozen=True)
class GrowthParams:
    """Volume growth per step and the diameter gate for division."""

    volume_growth_rate: float
    division_diameter: float
    division_enabled: bool = True

    def __post_init__(self):
        if not self.volume_growth_rate > 0:
            raise ValueError("volume_growth_rate must be positive")
        if not self.division_diameter > 0:
            raise ValueError("division_diameter must be positive")


@dataclass(frozen=True)
class SimulationConfig:
    force_params: ForceParams = field(default_factory=ForceParams)
    strategy: object = field(default_factory=Serial)
    precision: PrecisionMode = PrecisionMode.FP64
    morton_sort_every: int = 1
    steps: int = 10
    growth: Optional[GrowthParams] = None
    freeze_displacement: bool = False
    interaction_radius: Optional[float] = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.morton_sort_every < 0:
            raise ValueError("morton_sort_every must be >= 0 (0 = never)")
        strategy_label(self.strategy)  # raises on unknown strategy types


@dataclass
class StepStats:
    step_index: int
    agent_count: int
    divisions: int
    force_evals: int
    candidates: int
    degenerate_pairs: int
    bytes_modeled: int
    t_behavior: float
    t_sort: float
    t_grid: float
    t_force: float
    t_apply: float
    t_total: float
    grid_dims: tuple
    grid_occupied_boxes: int
    grid_max_occupancy: int


@dataclass
class RunReport:
    strategy: str
    precision: str
    initial_count: int
    final_count: int
    steps: list
    final_state_hash: str
    wall_time: float

    @property
    def force_evals(self):
        return sum(s.force_evals for s in self.steps)

    @property
    def candidates(self):
        return sum(s.candidates for s in self.steps)

    @property
    def bytes_modeled(self):
        return sum(s.bytes_modeled for s in self.steps)

    @property
    def divisions(self):
        return sum(s.divisions for s in self.steps)

    def write_step_log(self, path):
        cols = ("step_index", "agent_count", "divisions", "force_evals",
                "candidates", "degenerate_pairs", "bytes_modeled",
                "t_behavior", "t_sort", "t_grid", "t_force", "t_apply", "t_total")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for s in self.steps:
                writer.writerow([getattr(s, c) for c in cols])


def grow_and_divide(pool: AgentPool, growth: GrowthParams, step_index=0):
    """Behavior phase: add volume_growth_rate to every agent's volume, then
    split every agent whose diameter reached division_diameter.

    Division halves the mother's volume exactly (x0.5) and appends a
    daughter with the other half at distance mother_radius/4 along a unit
    vector keyed on (mother uid, step_index).  Mothers are processed in
    ascending uid order so daughter uid assignment does not depend on
    storage order.  Returns the division count.
    """
    if pool.count == 0:
        return 0
    T = pool.dtype.type
    sixth_pi = T(_SIXTH_PI)
    d = pool.diameter
    volume = sixth_pi * (d * d * d)
    volume = volume + T(growth.volume_growth_rate)
    pool.diameter = np.cbrt(volume / sixth_pi)
    if not growth.division_enabled:
        return 0
    ripe = np.flatnonzero(pool.diameter >= T(growth.division_diameter))
    if ripe.shape[0] == 0:
        return 0
    ripe = ripe[np.argsort(pool.uid[ripe])]
    positions = np.empty((ripe.shape[0], 3), np.float64)
    diameters = np.empty(ripe.shape[0], np.float64)
    adherences = np.empty(ripe.shape[0], np.float64)
    for row, i in enumerate(ripe):
        dm = pool.diameter[i]
        vol = sixth_pi * (dm * dm * dm)
        half = T(0.5) * vol
        d_half = np.cbrt(half / sixth_pi)
        direction = unit_vector(int(pool.uid[i]), step_index)
        offset = direction * (float(dm) * 0.5 / 4.0)
        positions[row, 0] = float(pool.position_x[i]) + offset[0]
        positions[row, 1] = float(pool.position_y[i]) + offset[1]
        positions[row, 2] = float(pool.position_z[i]) + offset[2]
        diameters[row] = float(d_half)
        adherences[row] = float(pool.adherence[i])
        pool.diameter[i] = d_half
    pool.append_many(positions, diameters, adherences)
    return int(ripe.shape[0])


def _dispatch_force_phase(pool, grid, params_arr, strategy):
    """Run the configured force kernel; returns (evals, candidates, degenerate)."""
    radii = pool.radii()
    args = (pool.position_x, pool.position_y, pool.position_z, radii,
            pool.adherence, pool.uid)
    dims = (int(grid.dims[0]), int(grid.dims[1]), int(grid.dims[2]))
    out = (pool.displacement_x, pool.displacement_y, pool.displacement_z)
    if isinstance(strategy, Serial):
        return kernels.force_phase_serial(
            *args, grid.box_index, *dims, grid.box_head, grid.successors,
            params_arr, grid.stencil_candidate_cap(), *out)
    if isinstance(strategy, AgentParallel):
        kernels.clamp_threads(strategy.thread_count)
        return kernels.force_phase_parallel(
            *args, grid.box_index, *dims, grid.box_head, grid.successors,
            params_arr, grid.stencil_candidate_cap(), *out)
    if isinstance(strategy, VoxelTiled):
        kernels.clamp_threads(strategy.thread_count)
        boxes = np.flatnonzero(grid.box_count > 0)
        capacity = strategy.tile_stencil_capacity
        if capacity is None:
            capacity = grid.stencil_candidate_cap()
        overflow = np.zeros(boxes.shape[0], np.int64)
        counters = kernels.force_phase_voxel(
            *args, *dims, grid.box_head, grid.successors, grid.box_count,
            boxes, params_arr, int(capacity), *out, overflow)
        bad = np.flatnonzero(overflow)
        if bad.shape[0]:
            worst = bad[np.argmax(overflow[bad])]
            raise TileCapacityError(box=int(boxes[worst]),
                                    needed=int(overflow[worst]),
                                    capacity=int(capacity))
        return counters
    raise TypeError("unknown strategy %r" % (strategy,))


def voxel_tiled_force_phase(pool, grid, params: ForceParams, strategy: VoxelTiled):
    """Voxel-tiled force phase on its own (displacements land in the pool's
    displacement buffer; positions untouched)."""
    if not isinstance(strategy, VoxelTiled):
        raise TypeError("voxel_tiled_force_phase requires a VoxelTiled strategy")
    _dispatch_force_phase(pool, grid, params.as_array(pool.dtype), strategy)


def step(pool: AgentPool, config: SimulationConfig, step_index=0):
    """Advance the pool by one step; returns StepStats."""
    if pool.dtype != config.precision.dtype:
        raise ValueError("pool dtype %s does not match configured precision %s"
                         % (pool.dtype, config.precision.value))
    t_start = time.perf_counter()
    divisions = 0
    t0 = time.perf_counter()
    if config.growth is not None and pool.count:
        divisions = grow_and_divide(pool, config.growth, step_index)
    t_behavior = time.perf_counter() - t0

    if pool.count == 0:
        t_total = time.perf_counter() - t_start
        return StepStats(step_index=step_index, agent_count=0, divisions=0,
                         force_evals=0, candidates=0, degenerate_pairs=0,
                         bytes_modeled=0, t_behavior=t_behavior, t_sort=0.0,
                         t_grid=0.0, t_force=0.0, t_apply=0.0, t_total=t_total,
                         grid_dims=(0, 0, 0), grid_occupied_boxes=0,
                         grid_max_occupancy=0)

    parallel_build = not isinstance(config.strategy, Serial)
    if parallel_build:
        kernels.clamp_threads(getattr(config.strategy, "thread_count", 1))

    t0 = time.perf_counter()
    sort_due = config.morton_sort_every > 0 and step_index % config.morton_sort_every == 0
    if sort_due and pool.count > 1:
        pre_grid = spatial.build_grid(pool, config.interaction_radius,
                                      parallel=parallel_build)
        morton.reorder_pool(pool, morton.compute_sort_permutation(pool, pre_grid))
    t_sort = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid = spatial.build_grid(pool, config.interaction_radius,
                              parallel=parallel_build)
    t_grid = time.perf_counter() - t0

    t0 = time.perf_counter()
    params_arr = config.force_params.as_array(pool.dtype)
    evals, cands, ndeg = _dispatch_force_phase(pool, grid, params_arr,
                                               config.strategy)
    t_force = time.perf_counter() - t0

    t0 = time.perf_counter()
    if not config.freeze_displacement:
        pool.position_x += pool.displacement_x
        pool.position_y += pool.displacement_y
        pool.position_z += pool.displacement_z
    t_apply = time.perf_counter() - t0

    agent_count = pool.count
    bytes_modeled = (int(cands) + agent_count) * RECORD_SCALARS * pool.precision.itemsize
    t_total = time.perf_counter() - t_start
    return StepStats(step_index=step_index, agent_count=agent_count,
                     divisions=divisions, force_evals=int(evals),
                     candidates=int(cands), degenerate_pairs=int(ndeg),
                     bytes_modeled=bytes_modeled, t_behavior=t_behavior,
                     t_sort=t_sort, t_grid=t_grid, t_force=t_force,
                     t_apply=t_apply, t_total=t_total,
                     grid_dims=tuple(int(d) for d in grid.dims),
                     grid_occupied_boxes=grid.occupied_box_count,
                     grid_max_occupancy=grid.max_occupancy)


def run(pool: AgentPool, config: SimulationConfig):
    """Run config.steps steps; returns a RunReport with per-step stats."""
    t0 = time.perf_counter()
    initial = pool.count
    stats = [step(pool, config, step_index=k) for k in range(config.steps)]
    return RunReport(strategy=strategy_label(config.strategy),
                     precision=config.precision.value,
                     initial_count=initial, final_count=pool.count,
                     steps=stats, final_state_hash=pool.state_hash(),
                     wall_time=time.perf_counter() - t0)
