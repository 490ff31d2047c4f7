"""Precision-generic 3D vector helpers and axis-aligned bounds.

Vectors are plain numpy arrays of shape (3,); every helper preserves the
dtype of its inputs so the same call sites run at float32 or float64.
Component sums are written out explicitly (left-associated) so that scalar
reference code and the compiled kernels agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FP32 = np.dtype(np.float32)
FP64 = np.dtype(np.float64)


def vec3(x, y, z, dtype=FP64):
    return np.array([x, y, z], dtype=dtype)


def sub(a, b):
    return a - b


def add(a, b):
    return a + b


def scale(a, s):
    return a * a.dtype.type(s)


def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def norm(a):
    """Euclidean length; exactly 0 for the zero vector (callers guard division)."""
    return np.sqrt(dot(a, a))


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by its min and max corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=FP64)
        hi = np.asarray(self.hi, dtype=FP64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("Aabb corners must be 3-vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("Aabb corners must be finite")
        if np.any(lo > hi):
            raise ValueError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, side, origin=(0.0, 0.0, 0.0)):
        lo = np.asarray(origin, dtype=FP64)
        return cls(lo, lo + float(side))

    @property
    def extent(self):
        return self.hi - self.lo

    def degenerate_axes(self):
        """Axes on which the box has zero width."""
        return [c for c in range(3) if self.lo[c] == self.hi[c]]
