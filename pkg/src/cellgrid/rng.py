"""Deterministic random streams.

Two generator families cover every random decision in the engine:

* Bulk streams (agent placement) use numpy's counter-based Philox4x64-10
  bit generator.  The key is the pair ``(seed, stream tag)``, so one integer
  seed reproduces identical agent positions on any platform; uniforms follow
  numpy's fixed ``(next_uint64 >> 11) * 2**-53`` transform.
* Per-event unit vectors (daughter placement at division, the direction
  fallback for coincident centers) are keyed on ``(uid, step)`` or on the
  ordered uid pair, never on the global seed, so they are invariant under
  agent reordering and across execution strategies.

The uid-pair fallback uses SplitMix64 (Steele et al. increment
0x9E3779B97F4A7C15, finalizer constants 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB) so the compiled kernels can evaluate the identical
function without a generator object; `degenerate_direction` is the Python
twin and the tests assert bit equality against the kernel.
"""

from __future__ import annotations

import math

import numpy as np

_SPAWN_TAG = 0x5350574E  # "SPWN"
_MASK64 = (1 << 64) - 1

_SM64_INC = 0x9E3779B97F4A7C15
_SM64_M1 = 0xBF58476D1CE4E5B9
_SM64_M2 = 0x94D049BB133111EB


def spawn_generator(seed):
    """Philox stream for agent placement under one run seed."""
    key = np.array([int(seed) & _MASK64, _SPAWN_TAG], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def event_generator(uid, step):
    """Philox stream keyed on a (uid, step) event, independent of the run seed."""
    key = np.array([int(uid) & _MASK64, int(step) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def unit_vector(uid, step):
    """Deterministic unit vector for the (uid, step) event, float64."""
    gen = event_generator(uid, step)
    while True:
        v = gen.standard_normal(3)
        n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
        if n > 1e-12:
            return v / n


def splitmix64(x):
    x = (x + _SM64_INC) & _MASK64
    x = ((x ^ (x >> 30)) * _SM64_M1) & _MASK64
    x = ((x ^ (x >> 27)) * _SM64_M2) & _MASK64
    return x ^ (x >> 31)


def degenerate_direction(uid_a, uid_b):
    """Unit vector assigned to a coincident-center pair, float64.

    Depends only on the unordered uid pair.  The caller flips the sign for
    the higher uid so the pair still obeys action-reaction.
    """
    lo, hi = (uid_a, uid_b) if uid_a <= uid_b else (uid_b, uid_a)
    a = splitmix64(int(lo) & _MASK64)
    b = splitmix64(a ^ (int(hi) & _MASK64))
    c = splitmix64(b)
    z = 2.0 * (b * 2.0**-64) - 1.0
    phi = (2.0 * math.pi) * (c * 2.0**-64)
    s = math.sqrt(max(0.0, 1.0 - z * z))
    return np.array([s * math.cos(phi), s * math.sin(phi), z])
