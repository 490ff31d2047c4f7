"""Z-order (Morton) curve utilities for locality-preserving agent sorting.

Interleaving the bits of a 3-D box coordinate produces a 1-D key whose
ordering visits boxes along a space-filling Z curve: agents that are close
in space land close in storage, which shrinks the index span a neighbor
stencil touches and keeps its memory traffic inside fewer cache lines.

Encoding maps bit i of (ix, iy, iz) to code bits (3i, 3i+1, 3i+2); each
axis contributes 21 bits, so coordinates must lie in [0, 2**21).  The
bit-spreading uses the standard parallel-prefix magic masks, vectorised
over uint64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COORD_BITS = 21
COORD_LIMIT = 1 << COORD_BITS

_U = np.uint64


def _spread_bits(v):
    """Space the low 21 bits of each uint64 three apart (bit i -> bit 3i)."""
    m = v.astype(np.uint64)
    m = (m | (m << _U(32))) & _U(0x1F00000000FFFF)
    m = (m | (m << _U(16))) & _U(0x1F0000FF0000FF)
    m = (m | (m << _U(8))) & _U(0x100F00F00F00F00F)
    m = (m | (m << _U(4))) & _U(0x10C30C30C30C30C3)
    m = (m | (m << _U(2))) & _U(0x1249249249249249)
    return m


def _compact_bits(v):
    """Inverse of `_spread_bits`: gather every third bit down to the low 21."""
    m = v.astype(np.uint64) & _U(0x1249249249249249)
    m = (m ^ (m >> _U(2))) & _U(0x10C30C30C30C30C3)
    m = (m ^ (m >> _U(4))) & _U(0x100F00F00F00F00F)
    m = (m ^ (m >> _U(8))) & _U(0x1F0000FF0000FF)
    m = (m ^ (m >> _U(16))) & _U(0x1F00000000FFFF)
    m = (m ^ (m >> _U(32))) & _U(0x1FFFFF)
    return m


def morton_encode(ix, iy, iz):
    """Interleave three integer coordinates into Z-order codes (vectorised)."""
    ix = np.asarray(ix)
    iy = np.asarray(iy)
    iz = np.asarray(iz)
    for axis in (ix, iy, iz):
        if axis.size and (axis.min() < 0 or axis.max() >= COORD_LIMIT):
            raise ValueError("coordinates must lie in [0, %d)" % COORD_LIMIT)
    return _spread_bits(ix) | (_spread_bits(iy) << _U(1)) | (_spread_bits(iz) << _U(2))


def morton_decode(code):
    """Recover (ix, iy, iz) from Z-order codes."""
    code = np.asarray(code, dtype=np.uint64)
    return (_compact_bits(code).astype(np.int64),
            _compact_bits(code >> _U(1)).astype(np.int64),
            _compact_bits(code >> _U(2)).astype(np.int64))


def sort_permutation(codes, uid):
    """Stable storage order sorted by Morton code, ties broken by uid.

    Tie-breaking on uid (not the incoming storage index) makes the resulting
    agent sequence a pure function of the population, so two pools holding
    the same agents in different orders sort to identical sequences.
    """
    return np.lexsort((uid, codes))


@dataclass
class MortonIndex:
    """Z-order codes of a pool plus the permutation that sorts by them."""

    z_values: np.ndarray
    permutation: np.ndarray

    def __post_init__(self):
        n = self.z_values.shape[0]
        if self.permutation.shape != (n,):
            raise ValueError("permutation length mismatch")
        sorted_codes = self.z_values[self.permutation]
        if n and (sorted_codes[1:] < sorted_codes[:-1]).any():
            raise ValueError("permutation does not sort the codes")


def compute_sort_permutation(pool, grid):
    """Locality-sorting index for a pool from its current grid.

    Codes come from integer box coordinates (resolution follows box_length),
    so agents sharing a box share a code and sort adjacently by uid.
    """
    ix, iy, iz = grid.box_coords()
    codes = morton_encode(ix, iy, iz)
    return MortonIndex(z_values=codes,
                       permutation=sort_permutation(codes, pool.uid))


def reorder_pool(pool, index: MortonIndex):
    """Apply a Morton permutation to the pool's storage order."""
    pool.apply_permutation(index.permutation)


def mean_neighbor_index_distance(indptr, indices):
    """Mean |i - j| over all (agent i, neighbor j) pairs of a CSR neighbor table.

    A storage-order locality figure: lower means neighbor gathers touch a
    narrower index window.  Returns 0.0 when the table has no pairs.
    """
    total = int(indptr[-1])
    if total == 0:
        return 0.0
    owner = np.repeat(np.arange(len(indptr) - 1, dtype=np.int64), np.diff(indptr))
    return float(np.mean(np.abs(owner - indices.astype(np.int64))))
