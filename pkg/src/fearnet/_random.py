import zlib

import numpy as np


def substream(seed, name):
    """Independent generator for a named purpose derived from one integer seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
