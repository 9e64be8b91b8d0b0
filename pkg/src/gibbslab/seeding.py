"""Reproducible seed splitting.

A replica seed is the first 8 bytes (little endian) of
``blake2b(data=repr(path).encode(), key=b"gibbslab-seed-v1", digest_size=8)``
where ``path = (master_seed, *labels)``. Every random stream in the package is
a numpy ``PCG64`` generator built from such a seed, so results do not depend
on the machine, the worker count, or the order replicas are run in.
"""
import hashlib

import numpy as np

_KEY = b"gibbslab-seed-v1"


def derive_seed(master: int, *labels) -> int:
    path = (int(master),) + tuple(labels)
    digest = hashlib.blake2b(repr(path).encode(), key=_KEY, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_for(master: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *labels)))
