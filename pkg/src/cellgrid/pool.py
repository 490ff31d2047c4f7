"""Struct-of-arrays agent storage.

Agents live in parallel numpy arrays (one column per attribute) rather than
as objects, so compiled kernels stream contiguous memory and reordering an
entire population is one fancy-index per column.  Array index is *transient*
storage order - it changes under locality sorting and swap-removal.  The
``uid`` column is the only stable handle; uids are assigned once, strictly
increasing, and never reused.
"""

from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import Aabb
from .rng import spawn_generator

# Hard cap on population size: keeps box ids, CSR offsets and staging
# buffers comfortably inside int64 and catches runaway division early.
DEFAULT_AGENT_CAP = 16_777_216

SNAPSHOT_HEADER = ("uid", "x", "y", "z", "diameter", "adherence")


class PoolCapacityError(RuntimeError):
    pass


class PrecisionMode(enum.Enum):
    """Floating-point width for every per-agent attribute column."""

    FP32 = "fp32"
    FP64 = "fp64"

    @property
    def dtype(self):
        return np.float32 if self is PrecisionMode.FP32 else np.float64

    @property
    def itemsize(self):
        return np.dtype(self.dtype).itemsize


@dataclass
class AgentPool:
    """Population of spherical agents in struct-of-arrays layout.

    All float columns share one dtype (see `PrecisionMode`).  ``displacement_*``
    are scratch columns the force phase writes and the integrator consumes;
    they are not part of persistent state.
    """

    position_x: np.ndarray
    position_y: np.ndarray
    position_z: np.ndarray
    diameter: np.ndarray
    adherence: np.ndarray
    uid: np.ndarray
    displacement_x: np.ndarray = field(default=None)  # type: ignore[assignment]
    displacement_y: np.ndarray = field(default=None)  # type: ignore[assignment]
    displacement_z: np.ndarray = field(default=None)  # type: ignore[assignment]
    next_uid: int = 0

    def __post_init__(self):
        n = self.position_x.shape[0]
        if self.displacement_x is None:
            self.displacement_x = np.zeros(n, self.position_x.dtype)
        if self.displacement_y is None:
            self.displacement_y = np.zeros(n, self.position_x.dtype)
        if self.displacement_z is None:
            self.displacement_z = np.zeros(n, self.position_x.dtype)
        if self.next_uid == 0 and n:
            self.next_uid = int(self.uid.max()) + 1
        self.validate()

    # -- basic queries ----------------------------------------------------

    @property
    def count(self):
        return self.position_x.shape[0]

    @property
    def dtype(self):
        return self.position_x.dtype

    @property
    def precision(self):
        return PrecisionMode.FP32 if self.dtype == np.float32 else PrecisionMode.FP64

    def positions(self):
        """(n, 3) copy of the position columns."""
        return np.stack([self.position_x, self.position_y, self.position_z], axis=1)

    def radii(self):
        return self.diameter * self.dtype.type(0.5)

    def max_diameter(self):
        return float(self.diameter.max()) if self.count else 0.0

    def bounding_box(self):
        if not self.count:
            raise ValueError("empty pool has no bounding box")
        lo = np.array([self.position_x.min(), self.position_y.min(), self.position_z.min()], dtype=np.float64)
        hi = np.array([self.position_x.max(), self.position_y.max(), self.position_z.max()], dtype=np.float64)
        return Aabb(lo=lo, hi=hi)

    def validate(self):
        n = self.count
        float_cols = (self.position_x, self.position_y, self.position_z,
                      self.diameter, self.adherence,
                      self.displacement_x, self.displacement_y, self.displacement_z)
        for col in float_cols:
            if col.shape != (n,):
                raise ValueError("column shape mismatch: %r vs %d agents" % (col.shape, n))
            if col.dtype != self.dtype:
                raise ValueError("column dtype mismatch: %s vs %s" % (col.dtype, self.dtype))
        if self.uid.shape != (n,) or self.uid.dtype != np.uint64:
            raise ValueError("uid column must be uint64 of length %d" % n)
        if n:
            if not np.isfinite(self.position_x).all() or not np.isfinite(self.position_y).all() \
                    or not np.isfinite(self.position_z).all():
                raise ValueError("non-finite position")
            if (self.diameter <= 0).any():
                raise ValueError("non-positive diameter")
            if len(np.unique(self.uid)) != n:
                raise ValueError("duplicate uid")
            if int(self.uid.max()) >= self.next_uid:
                raise ValueError("next_uid %d not above max uid %d" % (self.next_uid, int(self.uid.max())))

    # -- construction -----------------------------------------------------

    @classmethod
    def empty(cls, precision=PrecisionMode.FP64):
        dt = precision.dtype
        z = np.zeros(0, dt)
        return cls(position_x=z.copy(), position_y=z.copy(), position_z=z.copy(),
                   diameter=z.copy(), adherence=z.copy(),
                   uid=np.zeros(0, np.uint64))

    @classmethod
    def from_arrays(cls, positions, diameter, adherence, precision=PrecisionMode.FP64):
        """Build a pool from (n, 3) positions and per-agent scalars; uids 0..n-1."""
        dt = precision.dtype
        positions = np.asarray(positions, dtype=np.float64)
        n = positions.shape[0]
        if n > DEFAULT_AGENT_CAP:
            raise PoolCapacityError("%d agents exceeds cap %d" % (n, DEFAULT_AGENT_CAP))
        diameter = np.broadcast_to(np.asarray(diameter, dtype=np.float64), (n,))
        adherence = np.broadcast_to(np.asarray(adherence, dtype=np.float64), (n,))
        return cls(position_x=positions[:, 0].astype(dt),
                   position_y=positions[:, 1].astype(dt),
                   position_z=positions[:, 2].astype(dt),
                   diameter=diameter.astype(dt),
                   adherence=adherence.astype(dt),
                   uid=np.arange(n, dtype=np.uint64))

    @classmethod
    def spawn_grid(cls, side_count, spacing, diameter, adherence,
                   precision=PrecisionMode.FP64, origin=(0.0, 0.0, 0.0)):
        """Cubic lattice of side_count**3 agents; uid order is x-major (x slowest)."""
        n = side_count ** 3
        if n > DEFAULT_AGENT_CAP:
            raise PoolCapacityError("%d agents exceeds cap %d" % (n, DEFAULT_AGENT_CAP))
        axis = np.arange(side_count, dtype=np.float64) * spacing
        gx, gy, gz = np.meshgrid(axis + origin[0], axis + origin[1], axis + origin[2],
                                 indexing="ij")
        positions = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        return cls.from_arrays(positions, diameter, adherence, precision)

    @classmethod
    def spawn_random(cls, n, bounds, diameter, adherence, seed,
                     precision=PrecisionMode.FP64):
        """Uniform placement inside an `Aabb`, reproducible from the seed.

        Draws are always float64 and downcast afterwards, so FP32 and FP64
        pools built from the same seed describe the same physical layout.
        """
        if n > DEFAULT_AGENT_CAP:
            raise PoolCapacityError("%d agents exceeds cap %d" % (n, DEFAULT_AGENT_CAP))
        if n > 1 and bounds.degenerate_axes():
            raise ValueError("bounds degenerate along axes %r" % (bounds.degenerate_axes(),))
        gen = spawn_generator(seed)
        u = gen.random((n, 3))
        positions = bounds.lo + u * (bounds.hi - bounds.lo)
        return cls.from_arrays(positions, diameter, adherence, precision)

    # -- mutation ---------------------------------------------------------

    def append(self, position, diameter, adherence):
        """Add one agent; returns its uid.  O(n) per call - batch via append_many."""
        return self.append_many(np.asarray(position, dtype=np.float64)[None, :],
                                np.array([diameter]), np.array([adherence]))[0]

    def append_many(self, positions, diameter, adherence):
        """Add a batch of agents; returns their uids in order."""
        positions = np.asarray(positions, dtype=np.float64)
        k = positions.shape[0]
        if self.count + k > DEFAULT_AGENT_CAP:
            raise PoolCapacityError("%d agents exceeds cap %d" % (self.count + k, DEFAULT_AGENT_CAP))
        dt = self.dtype
        new_uids = np.arange(self.next_uid, self.next_uid + k, dtype=np.uint64)
        self.position_x = np.concatenate([self.position_x, positions[:, 0].astype(dt)])
        self.position_y = np.concatenate([self.position_y, positions[:, 1].astype(dt)])
        self.position_z = np.concatenate([self.position_z, positions[:, 2].astype(dt)])
        self.diameter = np.concatenate([self.diameter, np.asarray(diameter, np.float64).astype(dt)])
        self.adherence = np.concatenate([self.adherence, np.asarray(adherence, np.float64).astype(dt)])
        self.displacement_x = np.concatenate([self.displacement_x, np.zeros(k, dt)])
        self.displacement_y = np.concatenate([self.displacement_y, np.zeros(k, dt)])
        self.displacement_z = np.concatenate([self.displacement_z, np.zeros(k, dt)])
        self.uid = np.concatenate([self.uid, new_uids])
        self.next_uid += k
        return new_uids

    def remove(self, index):
        """Swap-remove the agent at a storage index (order not preserved)."""
        last = self.count - 1
        for name in ("position_x", "position_y", "position_z", "diameter", "adherence",
                     "displacement_x", "displacement_y", "displacement_z", "uid"):
            col = getattr(self, name)
            col[index] = col[last]
            setattr(self, name, col[:last])

    def apply_permutation(self, perm):
        """Reorder storage so new index i holds the agent old index perm[i] held."""
        perm = np.asarray(perm)
        if perm.shape != (self.count,):
            raise ValueError("permutation length %r != %d" % (perm.shape, self.count))
        check = np.zeros(self.count, dtype=bool)
        check[perm] = True
        if not check.all():
            raise ValueError("not a permutation")
        for name in ("position_x", "position_y", "position_z", "diameter", "adherence",
                     "displacement_x", "displacement_y", "displacement_z", "uid"):
            setattr(self, name, getattr(self, name)[perm])

    # -- persistence ------------------------------------------------------

    def copy(self):
        return AgentPool(position_x=self.position_x.copy(), position_y=self.position_y.copy(),
                         position_z=self.position_z.copy(),
                         diameter=self.diameter.copy(), adherence=self.adherence.copy(),
                         uid=self.uid.copy(),
                         displacement_x=self.displacement_x.copy(),
                         displacement_y=self.displacement_y.copy(),
                         displacement_z=self.displacement_z.copy(),
                         next_uid=self.next_uid)

    def state_hash(self):
        """SHA-256 over uid-sorted persistent columns; independent of storage order."""
        order = np.argsort(self.uid, kind="stable")
        h = hashlib.sha256()
        h.update(b"cellgrid-pool-v1")
        h.update(np.int64(self.count).tobytes())
        h.update(self.dtype.str.encode())
        h.update(self.uid[order].tobytes())
        for name in ("position_x", "position_y", "position_z", "diameter", "adherence"):
            h.update(getattr(self, name)[order].tobytes())
        return h.hexdigest()

    def write_snapshot(self, path):
        """uid-sorted CSV; float cells use repr() so FP64 round-trips exactly."""
        order = np.argsort(self.uid, kind="stable")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(SNAPSHOT_HEADER)
            for i in order:
                writer.writerow([int(self.uid[i]),
                                 repr(float(self.position_x[i])),
                                 repr(float(self.position_y[i])),
                                 repr(float(self.position_z[i])),
                                 repr(float(self.diameter[i])),
                                 repr(float(self.adherence[i]))])

    @classmethod
    def read_snapshot(cls, path, precision=PrecisionMode.FP64):
        uids, rows = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != SNAPSHOT_HEADER:
                raise ValueError("unexpected snapshot header %r" % (header,))
            for rec in reader:
                uids.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
        data = np.asarray(rows, dtype=np.float64).reshape(len(rows), 5)
        dt = precision.dtype
        pool = cls(position_x=data[:, 0].astype(dt), position_y=data[:, 1].astype(dt),
                   position_z=data[:, 2].astype(dt), diameter=data[:, 3].astype(dt),
                   adherence=data[:, 4].astype(dt),
                   uid=np.asarray(uids, dtype=np.uint64))
        return pool
