"""Named RNG substreams so one --seed drives every component stably."""

from __future__ import annotations

import zlib

import numpy as np

# Stream names used across the package; anything else is fine too, but
# these are the canonical ones a CLI run touches.
STREAMS = ("data", "jitter", "mode", "init", "eval")


def substream(seed: int, name: str) -> np.random.Generator:
    """A generator keyed by (seed, name); stable across runs and platforms."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
