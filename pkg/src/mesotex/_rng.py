"""Named, independent random streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
