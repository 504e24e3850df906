"""Named random sub-streams derived from one experiment seed.

Every consumer of randomness asks for its own stream (``"init"``,
``"encoding"``, ``"pairing"``, ...), so changing how much randomness one
stage draws never shifts the numbers another stage sees.
"""

import zlib

import numpy as np


def stream(seed, name):
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
