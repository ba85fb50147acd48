"""Stage-keyed random streams derived from a single 64-bit seed."""

import zlib

import numpy as np


def stream(seed, name):
    """Return an independent generator for the stage called ``name``.

    The stage name is hashed with CRC-32 and used as the spawn key of a
    ``SeedSequence`` rooted at ``seed``.  The same (seed, name) pair always
    yields the same stream, and distinct names give statistically
    independent streams regardless of the order in which stages run.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))
