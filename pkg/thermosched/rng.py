"""Seed streams. Every unit of parallel work owns a generator derived from the run seed and a
tuple of labels, so results do not depend on how work is spread over threads."""
import hashlib
from typing import Tuple, Union

import numpy as np

from thermosched.exceptions import ConfigurationError

SeedPart = Union[int, str]


def _as_word(part: SeedPart) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ConfigurationError(f"Seed parts must be nonnegative. Got {part}")
        return int(part)
    # stable across processes, unlike hash()
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def spawn_key(*parts: SeedPart) -> Tuple[int, ...]:
    return tuple(_as_word(p) for p in parts)


def derive_rng(seed: int, *parts: SeedPart) -> np.random.Generator:
    """Generator deterministically derived from `seed` and any number of labels.

    Example:
        `derive_rng(7, "sample", 3)` is the stream of sampler chunk 3 for run seed 7.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(*parts))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *parts: SeedPart) -> int:
    """32-bit integer seed for the stream `(seed, *parts)`, as recorded in manifests."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key(*parts))
    return int(ss.generate_state(1)[0])
