import hashlib
import json
import zlib

import numpy as np
import jax.numpy as jnp
from jax import random

from cwae.tree_util import to_jsonable


def split_seed(master, *path):
    """Derive a component seed from a master seed and a path of names or indices.

    Each path component is folded into the PRNG key of ``master`` in order, strings
    by their CRC-32, so that e.g. ``split_seed(7, 'table1', 'cwae2', 3)`` is
    reproducible and independent of ``split_seed(7, 'table1', 'lrenkf', 3)``.

    Parameters
    ----------
    master : int
        Master seed.
    *path : int or str
        Path components.

    Returns
    -------
    seed : int
        A 31-bit nonnegative seed.

    """
    key = random.PRNGKey(master)
    for p in path:
        if isinstance(p, str):
            p = zlib.crc32(p.encode())
        key = random.fold_in(key, int(p) & 0xFFFFFFFF)
    bits = random.bits(key, dtype=jnp.uint32)
    return int(bits) >> 1


def canonical_json(obj):
    """Canonical serialization with sorted keys and compact separators."""
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(',', ':'),
                      allow_nan=False)


def config_hash(obj, length=16):
    """First ``length`` hex digits of the SHA-256 of the canonical serialization."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:length]


def chunk_split(num, chunk_size, *arrays):
    """Split arrays along the leading axis into chunks and a remainder, with the
    remainder preceding the chunks."""
    chunk_size = num if chunk_size is None else min(chunk_size, num)
    remainder_size = num % chunk_size
    chunk_num = num // chunk_size

    remainder = None
    chunks = arrays
    if remainder_size:
        remainder = [x[:remainder_size] for x in arrays]
        chunks = [x[remainder_size:] for x in arrays]

    chunks = [x.reshape(chunk_num, chunk_size, *x.shape[1:]) for x in chunks]

    return remainder, chunks


def as_2d(x, name='array'):
    """Convert to a float64 numpy array of shape (num, dim), promoting 1D to a column.

    Raises
    ------
    ValueError
        If the array is empty or has more than 2 dimensions.

    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f'{name} must be 1D or 2D, got shape {x.shape}')
    if x.shape[0] == 0:
        raise ValueError(f'{name} is empty')
    return x
