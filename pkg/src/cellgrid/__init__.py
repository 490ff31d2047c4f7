"""cellgrid: deterministic 3D cell-mechanics engine with uniform-grid
neighbor search, a kd-tree baseline, and interchangeable serial/parallel
execution strategies."""

from .bench import (BenchmarkAConfig, BenchmarkBConfig, ReportRow,
                    box_side_for_density, measure_density, run_benchmark_a,
                    run_benchmark_b, write_report)
from .engine import (AgentParallel, GrowthParams, RunReport, Serial,
                     SimulationConfig, StepStats, VoxelTiled, run, step)
from .geometry import FP32, FP64, Aabb
from .kdtree import KdTree, build_kdtree
from .mechanics import ForceParams, collision_force
from .morton import MortonIndex, morton_decode, morton_encode
from .pool import AgentPool, PrecisionMode
from .spatial import UniformGrid, build_grid

__version__ = "0.1.0"

__all__ = [
    "Aabb", "AgentParallel", "AgentPool", "BenchmarkAConfig",
    "BenchmarkBConfig", "ForceParams", "FP32", "FP64", "GrowthParams",
    "KdTree", "MortonIndex", "PrecisionMode", "ReportRow", "RunReport",
    "Serial", "SimulationConfig", "StepStats", "UniformGrid", "VoxelTiled",
    "box_side_for_density", "build_grid", "build_kdtree", "collision_force",
    "measure_density", "morton_decode", "morton_encode", "run",
    "run_benchmark_a", "run_benchmark_b", "step", "write_report",
]
