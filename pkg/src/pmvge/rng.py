"""Named, independently reproducible random streams derived from one seed."""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Return a generator for the sub-stream ``name`` of master ``seed``.

    Streams with different names are statistically independent, and each
    stream depends only on ``(seed, name)`` so components can be re-run in
    isolation.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, key]))
