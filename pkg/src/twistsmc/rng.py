"""Named, counter-addressed random streams derived from one master seed.

Every stage asks for ``stream(seed, "smc", m, chunk)`` instead of sharing a
generator, so results never depend on call order or worker count.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Return a Philox generator keyed by ``(seed, name, *counters)``."""
    key = (_name_key(name),) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def chunk_sizes(total: int, chunk: int) -> list[int]:
    """Split ``total`` into fixed-size chunks (last one possibly short)."""
    if total <= 0:
        return []
    n_full, rest = divmod(total, chunk)
    return [chunk] * n_full + ([rest] if rest else [])


def map_chunks(fn, sizes, threads: int = 1):
    """Apply ``fn(index, size)`` to every chunk and return results in order.

    Chunk boundaries are fixed by the caller, so the thread count only
    changes scheduling, never the values produced.
    """
    items = list(enumerate(sizes))
    if threads <= 1 or len(items) <= 1:
        return [fn(i, s) for i, s in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda item: fn(*item), items))
