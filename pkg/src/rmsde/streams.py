"""Per-path random streams.

Every path draws from its own PCG64 generator whose seed is a pure function of
``(master_seed, experiment_tag, path_index)``, so results do not depend on how
paths are spread across workers. Normals come from numpy's ziggurat sampler,
which is stable for a fixed bit stream.
"""

import zlib

import numpy as np

from rmsde.errors import InputDomainError

MAX_SEED = 2**64 - 1


def check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed <= MAX_SEED:
        raise InputDomainError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def tag_id(tag):
    """Stable 32-bit id of an experiment tag."""
    return zlib.crc32(str(tag).encode("utf-8"))


def path_seed_sequence(master_seed, tag, index):
    return np.random.SeedSequence(entropy=check_seed(master_seed), spawn_key=(tag_id(tag), int(index)))


def path_stream(master_seed, tag, index):
    """Generator for path ``index`` of experiment ``tag``."""
    return np.random.Generator(np.random.PCG64(path_seed_sequence(master_seed, tag, index)))


def as_generator(rng):
    """Accept a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(check_seed(rng))
