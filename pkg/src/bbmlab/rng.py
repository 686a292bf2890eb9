"""Counter-based random numbers keyed by (seed, lineage id, counter).

The particle simulators need every draw to be a pure function of the
lineage identity so that runs with different branching rates but the same
seed see identical randomness for shared lineages.  numpy's stateful
generators cannot be vectorized across thousands of per-particle streams,
so we use a stateless 64-bit mixing function (splitmix64 finalizer,
Stafford variant 13) applied to the tuple (seed, id_hi, id_lo, counter).

Uniforms are mapped to (0, 1), normals via the exact inverse CDF and
exponentials via -log(U); all are vectorized over particle arrays.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# Root lineage id, fixed by convention.
ROOT_ID = (np.uint64(0), np.uint64(1))


def _mix64(x):
    x = x ^ (x >> np.uint64(30))
    x = x * _MIX1
    x = x ^ (x >> np.uint64(27))
    x = x * _MIX2
    return x ^ (x >> np.uint64(31))


def mix_words(*words):
    """Mix any number of uint64 words (scalars or aligned arrays) into one.

    uint64 arithmetic wraps mod 2**64 by design; numpy's overflow warning
    is suppressed locally because the wraparound is the point.
    """
    with np.errstate(over="ignore"):
        h = np.uint64(0x243F6A8885A308D3)
        for w in words:
            h = _mix64((h + _GOLDEN) ^ np.asarray(w, dtype=np.uint64))
    return h


def child_id(parent_hi, parent_lo, event_index):
    """Derive a child's 128-bit lineage id from the parent id and the index
    of the parent proposal event at which it was born."""
    ev = np.asarray(event_index, dtype=np.uint64)
    hi = mix_words(parent_hi, parent_lo, ev, np.uint64(0xA5A5A5A5A5A5A5A5))
    lo = mix_words(parent_lo, parent_hi, ev, np.uint64(0x5A5A5A5A5A5A5A5A))
    return hi, lo


class CounterRNG:
    """Stateless stream: draw k-th variate of lineage (hi, lo) under a seed."""

    def __init__(self, seed):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)

    def uniform(self, hi, lo, ctr):
        """U(0,1) from counter slot `ctr`; never returns exactly 0 or 1."""
        bits = mix_words(self.seed, hi, lo, np.asarray(ctr, dtype=np.uint64))
        # 53 significant bits, shifted into (0, 1)
        u = (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return np.where(u <= 0.0, 2.0 ** -54, u)

    def exponential(self, hi, lo, ctr):
        return -np.log(self.uniform(hi, lo, ctr))

    def normal(self, hi, lo, ctr):
        return ndtri(self.uniform(hi, lo, ctr))
