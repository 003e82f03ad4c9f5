"""Seed derivation and a worker-count-independent parallel map."""

import os
import zlib

import numpy as np
from joblib import Parallel, delayed

THREADS_ENV = "NONIID_QLEARN_THREADS"


def n_workers():
    """Worker cap from ``NONIID_QLEARN_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def master_entropy(seed):
    """Integer entropy from a seed or a generator (consuming one draw)."""
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(2**63))
    if seed is None:
        return int(np.random.SeedSequence().entropy % 2**63)
    return int(seed)


def stream(seed, key, index):
    """Generator for stream ``index`` of experiment ``key`` under ``seed``."""
    tag = zlib.crc32(str(key).encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([master_entropy(seed), tag, int(index)]))


def block_sizes(trials, block):
    full, rest = divmod(int(trials), int(block))
    return [block] * full + ([rest] if rest else [])


def parallel_map(fn, items, workers=None):
    """Ordered map; uses threads when more than one worker is allowed."""
    items = list(items)
    workers = n_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    return Parallel(n_jobs=min(workers, len(items)), prefer="threads")(delayed(fn)(x) for x in items)
