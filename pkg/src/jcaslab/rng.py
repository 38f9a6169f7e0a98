"""Counter-based random streams keyed by (seed, purpose, index).

Every stochastic routine in the package receives a ``numpy.random.Generator``
built here. Streams depend only on the key, never on execution order, so
results are identical for any number of worker threads.
"""

import zlib

import numpy as np


def _label_key(label):
    return zlib.crc32(label.encode("utf-8"))


def stream(seed, label, *index):
    """Return an independent Philox generator for ``(seed, label, *index)``."""
    key = (_label_key(label),) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def chunks(total, size):
    """Split ``total`` trials into ``(chunk_index, n)`` pairs of at most ``size``."""
    out = []
    start = 0
    i = 0
    while start < total:
        n = min(size, total - start)
        out.append((i, n))
        start += n
        i += 1
    return out
