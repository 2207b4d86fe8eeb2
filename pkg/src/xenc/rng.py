"""Deterministic random substreams.

Every stochastic routine in the package draws from a counter-based
(Philox) generator keyed by a root seed plus a structured path, e.g.
``substream(seed, "cv", iteration)``. Streams are independent of each
other and of execution order, so results do not depend on thread count
or scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK32
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the substream identified by ``path`` under ``seed``.

    Path components may be ints or strings; strings are hashed. The same
    (seed, path) always yields the same stream.
    """
    spawn_key = tuple(_key_to_int(k) for k in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))
