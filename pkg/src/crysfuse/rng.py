"""Named counter-based random streams.

Every source of randomness in the package draws from a stream identified by
a (seed, name) pair, e.g. ``stream(seed, "noise")`` or
``stream(seed, "init/se3.edge.f_q.weight")``. Streams are independent Philox
generators, so adding or removing one consumer never shifts the values seen
by another.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for the stream `name` under `seed`."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, tag])))
