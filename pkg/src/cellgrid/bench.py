"""Benchmark harness: proliferation (A), density sweep (B), backend lookup
comparison, and the CSV/SVG report layer.

Benchmark A grows a cubic lattice of touching cells for a fixed number of
steps with division enabled, once per requested strategy.  Timing follows
a warm-up-then-measure discipline: one full untimed run first (absorbs JIT
compilation), then `repeats` timed runs; the row reports the median
per-step phase times over all timed steps.

Benchmark B spawns agents uniformly at random in a cube sized for each
target neighbor density, freezes displacement so the density cannot relax,
and times steps on the static pool: one untimed warm-up step, then `steps`
timed steps whose median becomes the row (the frozen pool makes every step
an identical repeat).  Measured density is verified by brute force on an
evenly strided subsample.

Lookup rows ("strategy" column = "lookup") compare the grid against the
kd-tree on the same pool: build the index, then produce the full neighbor
table at the given radius.  Both backends hash their tables in uid space,
so equal hashes certify equal neighbor sets.

Rows serialize to CSV with a fixed 16-column prefix; the columns appended
after `ai_flops_per_byte` (hashes, grid statistics, division count) carry
the cross-check data the fixed prefix has no slot for.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import engine as eng
from . import kdtree, spatial
from .engine import GrowthParams, Serial, SimulationConfig, strategy_label
from .geometry import Aabb
from .mechanics import DEFAULT_ADHERENCE, FLOPS_PER_FORCE_EVAL, ForceParams
from .pool import AgentPool, PrecisionMode

DENSITY_LADDER = (1.0, 3.0, 6.0, 11.0, 17.0, 27.0, 35.0, 47.0)

CSV_HEADER = ("bench,backend,strategy,precision,density_target,density_measured,"
              "agents,steps,t_grid_ms,t_force_ms,t_behavior_ms,t_total_ms,"
              "force_evals,candidates,bytes_modeled,ai_flops_per_byte")
EXTRA_COLUMNS = ("state_hash", "neighbor_hash", "grid_dims",
                 "grid_occupied_boxes", "grid_max_occupancy", "divisions")


@dataclass(frozen=True)
class BenchmarkAConfig:
    """Proliferation benchmark: side_count^3 touching cells, growth + division."""

    side_count: int = 64
    steps: int = 10
    strategy: object = field(default_factory=Serial)
    precision: PrecisionMode = PrecisionMode.FP64
    spacing: float = 10.0
    diameter: float = 10.0
    adherence: float = DEFAULT_ADHERENCE
    growth: GrowthParams = GrowthParams(volume_growth_rate=100.0,
                                        division_diameter=12.0)
    force_params: ForceParams = field(default_factory=ForceParams)
    morton_sort_every: int = 1
    repeats: int = 5

    def __post_init__(self):
        if self.side_count < 2:
            raise ValueError("side_count must be >= 2")
        if self.steps < 1 or self.repeats < 1:
            raise ValueError("steps and repeats must be >= 1")


@dataclass(frozen=True)
class BenchmarkBConfig:
    """Density-sweep benchmark: frozen random pools, one row per density."""

    agent_count: int = 100_000
    target_densities: tuple = DENSITY_LADDER
    steps: int = 5
    strategy: object = field(default_factory=Serial)
    precision: PrecisionMode = PrecisionMode.FP64
    seed: int = 0
    radius: float = 5.0
    adherence: float = DEFAULT_ADHERENCE
    force_params: ForceParams = field(default_factory=ForceParams)
    morton_sort_every: int = 1
    sample_count: int = 1000

    def __post_init__(self):
        if self.agent_count < 2:
            raise ValueError("agent_count must be >= 2")
        if not all(t > 0 for t in self.target_densities):
            raise ValueError("density targets must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.radius > 0:
            raise ValueError("radius must be positive")


@dataclass
class ReportRow:
    bench: str
    backend: str
    strategy: str
    precision: str
    density_target: Optional[float]
    density_measured: Optional[float]
    agents: int
    steps: int
    t_grid_ms: float
    t_force_ms: float
    t_behavior_ms: float
    t_total_ms: float
    force_evals: int
    candidates: int
    bytes_modeled: int
    ai_flops_per_byte: float = 0.0
    state_hash: str = ""
    neighbor_hash: str = ""
    grid_dims: str = ""
    grid_occupied_boxes: int = 0
    grid_max_occupancy: int = 0
    divisions: int = 0


def estimate_arithmetic_intensity(row: ReportRow):
    """FLOPs per modeled byte for one report row (0 when nothing ran)."""
    if row.force_evals == 0 or row.bytes_modeled == 0:
        return 0.0
    return row.force_evals * FLOPS_PER_FORCE_EVAL / row.bytes_modeled


def box_side_for_density(agent_count, radius, target_mean_neighbors):
    """Cube side L with (agent_count-1) * (4/3)pi r^3 / L^3 = target.

    Uniform-density expectation; boundary depletion is deliberately left
    uncorrected and absorbed by the acceptance tolerance.
    """
    if agent_count < 2:
        raise ValueError("agent_count must be >= 2")
    if not (radius > 0 and target_mean_neighbors > 0):
        raise ValueError("radius and target must be positive")
    sphere = (4.0 / 3.0) * np.pi * float(radius) ** 3
    return ((agent_count - 1) * sphere / float(target_mean_neighbors)) ** (1.0 / 3.0)


def measure_density(pool, radius, sample_count=1000):
    """Mean neighbor count within `radius`, brute-forced on an evenly
    strided subsample of the pool (exact when sample_count >= pool size)."""
    n = pool.count
    take = min(int(sample_count), n)
    rows = np.arange(n, dtype=np.int64)[:: max(1, n // take)][:take]
    counts = spatial.brute_force_counts(pool, radius, rows=rows)
    return float(counts.mean())


def spawn_benchmark_a_pool(config: BenchmarkAConfig):
    return AgentPool.spawn_grid(config.side_count, config.spacing,
                                config.diameter, config.adherence,
                                precision=config.precision)


def spawn_benchmark_b_pool(config: BenchmarkBConfig, target):
    side = box_side_for_density(config.agent_count, config.radius, target)
    bounds = Aabb.cube(side)
    return AgentPool.spawn_random(config.agent_count, bounds,
                                  2.0 * config.radius, config.adherence,
                                  config.seed, precision=config.precision)


def _median_ms(stats, attr):
    return statistics.median(getattr(s, attr) for s in stats) * 1e3


def _finish_row(row):
    row.ai_flops_per_byte = estimate_arithmetic_intensity(row)
    return row


def _row_from_steps(bench, strategy, precision, timed_stats, counter_stats,
                    agents, state_hash, steps, density_target=None,
                    density_measured=None):
    """Assemble a row: phase times are medians over timed_stats (which may
    span several repeats); counters are summed over counter_stats (exactly
    one run's worth, so repeats do not inflate them)."""
    last = counter_stats[-1]
    row = ReportRow(
        bench=bench, backend="grid", strategy=strategy_label(strategy),
        precision=precision.value, density_target=density_target,
        density_measured=density_measured, agents=agents, steps=steps,
        t_grid_ms=_median_ms(timed_stats, "t_grid"),
        t_force_ms=_median_ms(timed_stats, "t_force"),
        t_behavior_ms=_median_ms(timed_stats, "t_behavior"),
        t_total_ms=_median_ms(timed_stats, "t_total"),
        force_evals=sum(s.force_evals for s in counter_stats),
        candidates=sum(s.candidates for s in counter_stats),
        bytes_modeled=sum(s.bytes_modeled for s in counter_stats),
        state_hash=state_hash,
        grid_dims="%dx%dx%d" % last.grid_dims,
        grid_occupied_boxes=last.grid_occupied_boxes,
        grid_max_occupancy=last.grid_max_occupancy,
        divisions=sum(s.divisions for s in counter_stats))
    return _finish_row(row)


def run_benchmark_a(config: BenchmarkAConfig, strategies=None,
                    backends=("grid",), warmup=True):
    """One engine row per strategy (plus lookup rows per extra backend)."""
    strategies = list(strategies) if strategies is not None else [config.strategy]
    rows = []
    for strategy in strategies:
        sim = SimulationConfig(force_params=config.force_params,
                               strategy=strategy, precision=config.precision,
                               morton_sort_every=config.morton_sort_every,
                               steps=config.steps, growth=config.growth)
        if warmup:
            eng.run(spawn_benchmark_a_pool(config), sim)
        reports = [eng.run(spawn_benchmark_a_pool(config), sim)
                   for _ in range(config.repeats)]
        hashes = {r.final_state_hash for r in reports}
        if len(hashes) != 1:
            raise RuntimeError("nondeterministic benchmark A repeats: %r" % hashes)
        timed = [s for r in reports for s in r.steps]
        rows.append(_row_from_steps(
            "A", strategy, config.precision, timed, reports[-1].steps,
            agents=reports[-1].final_count, steps=config.steps,
            state_hash=reports[-1].final_state_hash))
    extra = [b for b in backends if b != "grid"]
    if extra:
        pool = spawn_benchmark_a_pool(config)
        radius = pool.max_diameter()
        rows.extend(lookup_comparison_rows(pool, radius, bench="A",
                                           backends=("grid", *extra)))
    return rows


def run_benchmark_b(config: BenchmarkBConfig, strategies=None):
    """Rows over the density ladder; one per (density, strategy)."""
    strategies = list(strategies) if strategies is not None else [config.strategy]
    rows = []
    for target in config.target_densities:
        probe = spawn_benchmark_b_pool(config, target)
        measured = measure_density(probe, config.radius, config.sample_count)
        for strategy in strategies:
            pool = spawn_benchmark_b_pool(config, target)
            sim = SimulationConfig(force_params=config.force_params,
                                   strategy=strategy, precision=config.precision,
                                   morton_sort_every=config.morton_sort_every,
                                   steps=config.steps, freeze_displacement=True)
            eng.step(pool, sim, 0)  # warm-up step, untimed by convention
            stats = [eng.step(pool, sim, k + 1) for k in range(config.steps)]
            rows.append(_row_from_steps(
                "B", strategy, config.precision, stats, stats,
                agents=pool.count, steps=config.steps,
                state_hash=pool.state_hash(), density_target=float(target),
                density_measured=measured))
    return rows


def lookup_comparison_rows(pool, radius, bench="lookup", backends=("grid", "kdtree"),
                           repeats=1):
    """Time build + full neighbor-table query per backend on one pool.

    Single-threaded on both sides; the neighbor_hash column certifies that
    the backends agree on every neighbor set.
    """
    rows = []
    for backend in backends:
        t_build = []
        t_query = []
        table = None
        for _ in range(int(repeats)):
            if backend == "grid":
                t0 = time.perf_counter()
                grid = spatial.build_grid(pool, interaction_radius=radius)
                t1 = time.perf_counter()
                table = spatial.neighbor_csr(grid, pool, radius)
                t2 = time.perf_counter()
                dims = "%dx%dx%d" % tuple(int(d) for d in grid.dims)
                occupied, maxocc = grid.occupied_box_count, grid.max_occupancy
            elif backend == "kdtree":
                t0 = time.perf_counter()
                tree = kdtree.build_kdtree(pool)
                t1 = time.perf_counter()
                table = kdtree.neighbor_csr(tree, pool, radius)
                t2 = time.perf_counter()
                dims, occupied, maxocc = "", 0, 0
            else:
                raise ValueError("unknown backend %r" % backend)
            t_build.append(t1 - t0)
            t_query.append(t2 - t1)
        indptr, indices = table
        row = ReportRow(
            bench=bench, backend=backend, strategy="lookup",
            precision=pool.precision.value, density_target=None,
            density_measured=None, agents=pool.count, steps=1,
            t_grid_ms=statistics.median(t_build) * 1e3,
            t_force_ms=statistics.median(t_query) * 1e3,
            t_behavior_ms=0.0,
            t_total_ms=(statistics.median(t_build) + statistics.median(t_query)) * 1e3,
            force_evals=0, candidates=int(indptr[-1]), bytes_modeled=0,
            neighbor_hash=spatial.neighbor_table_hash(pool, indptr, indices),
            grid_dims=dims, grid_occupied_boxes=occupied,
            grid_max_occupancy=maxocc)
        rows.append(_finish_row(row))
    return rows


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(rows, path):
    """CSV with the fixed 16-column prefix plus the extra columns."""
    prefix = CSV_HEADER.split(",")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(prefix + list(EXTRA_COLUMNS))
        for row in rows:
            writer.writerow([_cell(getattr(row, c)) for c in prefix]
                            + [_cell(getattr(row, c)) for c in EXTRA_COLUMNS])


def read_report(path):
    """Rows back from a report CSV (floats/ints restored, blanks -> None)."""
    out = []
    types = {f.name: f.type for f in fields(ReportRow)}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            kwargs = {}
            for name, raw in rec.items():
                if name not in types:
                    continue
                if raw == "":
                    kwargs[name] = None if "Optional" in str(types[name]) else ""
                elif name in ("agents", "steps", "force_evals", "candidates",
                              "bytes_modeled", "grid_occupied_boxes",
                              "grid_max_occupancy", "divisions"):
                    kwargs[name] = int(raw)
                elif name.startswith("t_") or name.startswith("density") \
                        or name == "ai_flops_per_byte":
                    kwargs[name] = float(raw)
                else:
                    kwargs[name] = raw
            out.append(ReportRow(**kwargs))
    return out


def plot_report(rows, path):
    """Bar/line SVG summary of a report (matplotlib, Agg backend)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sweep = [r for r in rows if r.bench == "B" and r.density_measured is not None]
    other = [r for r in rows if r not in sweep]
    npanels = (1 if sweep else 0) + (1 if other else 0)
    fig, axes = plt.subplots(1, max(npanels, 1), figsize=(6 * max(npanels, 1), 4))
    axes = np.atleast_1d(axes)
    panel = 0
    if sweep:
        ax = axes[panel]
        panel += 1
        labels = sorted({r.strategy for r in sweep})
        for label in labels:
            series = sorted((r for r in sweep if r.strategy == label),
                            key=lambda r: r.density_measured)
            ax.plot([r.density_measured for r in series],
                    [r.t_total_ms for r in series], marker="o", label=label)
        ax.set_xlabel("measured neighbor density")
        ax.set_ylabel("median step time [ms]")
        ax.set_title("density sweep")
        ax.legend()
    if other:
        ax = axes[panel]
        names = ["%s/%s" % (r.backend, r.strategy) for r in other]
        ax.bar(range(len(other)), [r.t_total_ms for r in other])
        ax.set_xticks(range(len(other)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("median time [ms]")
        ax.set_title("runs and lookups")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
