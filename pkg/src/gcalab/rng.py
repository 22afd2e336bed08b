"""Splittable deterministic random streams.

Every source of randomness in the package is a named substream derived from a
single integer seed. Substreams are independent of the order in which they are
created, so adding a module (say, an extra adapter) never shifts the random
numbers any other module sees. That property is what makes bitwise-identical
reruns and cross-config parameter sharing possible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _path_key(path: tuple[object, ...]) -> int:
    """Hash a name path to a stable 32-bit integer (process-independent)."""
    text = "/".join(str(part) for part in path)
    return zlib.crc32(text.encode("utf-8"))


def derive_rng(seed: int, *path: object) -> np.random.Generator:
    """Return a Generator for the substream named by ``path`` under ``seed``.

    The same (seed, path) pair always yields the same stream, on every
    platform, regardless of how many other substreams were derived before it.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), _path_key(path)]))


def derive_seed(seed: int, *path: object) -> int:
    """Collapse a substream name to a plain integer seed (for nesting)."""
    ss = np.random.SeedSequence([int(seed), _path_key(path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2**63))
