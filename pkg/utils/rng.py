import hashlib

import numpy as np

from models.errors import ConfigInvalid


def tag_key(tag: str) -> int:
    """Stable 64-bit integer for a purpose tag."""
    hasher = hashlib.md5()
    hasher.update(tag.encode("utf-8"))
    return int.from_bytes(hasher.digest()[:8], "little")


def stream(seed: int, n: int, replicate: int, tag: str) -> np.random.Generator:
    """
    Counter-based generator keyed by (seed, n, replicate, tag). Streams for
    different keys are independent, so replicates can run in any order.
    """
    for name, value in (("seed", seed), ("n", n), ("replicate", replicate)):
        if value < 0:
            raise ConfigInvalid(f"{name} must be non-negative, got {value}")
    sequence = np.random.SeedSequence([seed, n, replicate, tag_key(tag)])
    return np.random.Generator(np.random.Philox(sequence))
