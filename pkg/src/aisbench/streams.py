"""Reproducible random streams keyed by (master seed, example, chain, direction).

Every stochastic operation in the package draws from a stream derived here, so
results are a pure function of the master seed and never depend on scheduling
order or worker count.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# direction / role codes for stream derivation
FORWARD = 0
REVERSE = 1
SIMULATE = 2
SELECT = 3
SHUFFLE = 4
DEQUANTIZE = 5
BINARIZE = 6
PROPOSAL_IWAE = 7
PROPOSAL_ELBO = 8
SAMPLE_BANK = 9


def _splitmix64(x):
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def stream_seed(master_seed, example, chain, direction):
    """Mix the four indices into a single 64-bit stream seed.

    The indices pack into disjoint bit ranges, so for a fixed master seed
    every (example, chain, direction) cell maps to a distinct seed (splitmix64
    is a bijection). Bounds: example < 2^28, chain < 2^32, direction < 16.
    """
    example, chain, direction = int(example), int(chain), int(direction)
    if not (0 <= example < 1 << 28 and 0 <= chain < 1 << 32
            and 0 <= direction < 16):
        raise ValueError("stream index out of range")
    key = (example << 36) | (chain << 4) | direction
    return _splitmix64((_splitmix64(master_seed & _MASK64) + key) & _MASK64)


def stream(master_seed, example, chain, direction) -> np.random.Generator:
    """Independent generator for one (example, chain, direction) cell."""
    return np.random.Generator(
        np.random.PCG64(stream_seed(master_seed, example, chain, direction))
    )
