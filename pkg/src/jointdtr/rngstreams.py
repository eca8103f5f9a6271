"""Counter-based RNG substreams for reproducible parallel simulation.

Every stochastic component draws from a Philox generator keyed by a master
seed plus a tuple of integer tags (individual index, chain index, rollout
node, ...).  Streams are independent across distinct key tuples and
identical across runs and across serial/parallel execution orders.
"""

from __future__ import annotations

import numpy as np

# stable tag namespace so textual tags hash identically across processes
_TAGS = {
    "indiv": 1, "censor": 2, "test": 3, "chain": 4, "sigma": 5,
    "re_chain": 6, "rollout": 7, "data": 8, "study": 9, "metrics": 10,
    "arm": 11, "stage": 12, "init": 13, "prior": 14,
}


def _encode(key) -> int:
    if isinstance(key, str):
        try:
            return _TAGS[key]
        except KeyError:
            raise ValueError(f"unknown stream tag {key!r}") from None
    return int(key)


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, keys); order of creation irrelevant."""
    entropy = (int(seed),) + tuple(_encode(k) for k in keys)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
