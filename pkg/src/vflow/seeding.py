"""Deterministic per-component random streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def component_seed(master: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master) & 0xFFFFFFFF, zlib.crc32(name.encode())])


def component_rng(master: int, name: str) -> np.random.Generator:
    """Independent generator for ``name``; the same (master, name) always gives the same stream."""
    return np.random.default_rng(component_seed(master, name))
