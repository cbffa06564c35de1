"""Counter-based Gaussian noise keyed by (seed, step, agent).

Each agent's draw at a given step is a pure function of the master seed, the
step index and the agent index, so any partition of agents across workers
reproduces the same numbers bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_TWO_M53 = 1.0 / 9007199254740992.0

# second key word separates independent uses of the same master seed
STREAM_WEALTH = 0


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def step_normals(seed: int, step: int, lo: int, hi: int, stream: int = STREAM_WEALTH) -> np.ndarray:
    """Standard normals for agents ``lo..hi-1`` at ``step``.

    One raw 64-bit word per agent, mapped through the inverse normal CDF.
    Philox emits four words per counter increment, hence the block offset.
    """
    seed = _check_seed(seed)
    if hi <= lo:
        return np.empty(0)
    key = np.array([seed, stream], dtype=np.uint64)
    counter = np.array([lo // 4, 0, step & _MASK64, 0], dtype=np.uint64)
    bitgen = np.random.Philox(key=key, counter=counter)
    off = lo % 4
    raw = bitgen.random_raw(hi - lo + off)[off:]
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)
