"""Binary checkpoint and dataset files with JSON sidecars.

Checkpoint: magic ``b'CWAE'``, u32 format version, then one record per parameter
until the end of file: u32 name length, UTF-8 name, u32 rank, rank u64 dims, and
the f64 payload in row-major order. All integers and floats are little-endian.

Dataset: magic ``b'CWDS'``, u32 format version, u64 N, u64 d_Y, u64 d_X, then the
row-major f64 Y block followed by the X block.

"""

import hashlib
import json
from pathlib import Path

import numpy as np
from jax.tree_util import tree_flatten, tree_unflatten

from cwae.tree_util import tree_named_leaves, to_jsonable


CHECKPOINT_MAGIC = b'CWAE'
DATASET_MAGIC = b'CWDS'
FORMAT_VERSION = 1


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + '.json')


def write_sidecar(path, meta):
    with open(sidecar_path(path), 'w') as f:
        json.dump(to_jsonable(meta), f, indent=2, sort_keys=True)


def read_sidecar(path):
    """Read the JSON sidecar of ``path``, or None if there is none."""
    side = sidecar_path(path)
    if not side.exists():
        return None
    with open(side) as f:
        return json.load(f)


def file_digest(path):
    """SHA-256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            h.update(block)
    return h.hexdigest()


def _u32(n):
    return np.asarray(n, dtype='<u4').tobytes()


def _check_header(buf, magic, path):
    if len(buf) < 8 or buf[:4] != magic:
        raise OSError(f'{path}: not a {magic.decode()} file (bad magic bytes)')
    version = int(np.frombuffer(buf, dtype='<u4', count=1, offset=4)[0])
    if version != FORMAT_VERSION:
        raise OSError(f'{path}: unsupported format version {version}')
    return 8


def write_checkpoint(path, params, meta=None):
    """Write a parameter pytree as a checkpoint, and ``meta`` as its JSON sidecar.

    Record names are the key paths of the leaves, see ``tree_named_leaves``.

    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(_u32(FORMAT_VERSION))
        for name, leaf in tree_named_leaves(params):
            leaf = np.asarray(leaf, dtype='<f8')
            name = name.encode('utf-8')
            f.write(_u32(len(name)))
            f.write(name)
            f.write(_u32(leaf.ndim))
            f.write(np.asarray(leaf.shape, dtype='<u8').tobytes())
            f.write(np.ascontiguousarray(leaf).tobytes())

    if meta is not None:
        write_sidecar(path, meta)


def read_checkpoint(path):
    """Read checkpoint records.

    Returns
    -------
    records : dict of str to numpy.ndarray
        Parameter arrays by name, in file order.

    Raises
    ------
    OSError
        On bad magic bytes, unknown version, or truncated records.

    """
    buf = Path(path).read_bytes()
    offset = _check_header(buf, CHECKPOINT_MAGIC, path)

    records = {}
    try:
        while offset < len(buf):
            name_len = int(np.frombuffer(buf, dtype='<u4', count=1, offset=offset)[0])
            offset += 4
            name = buf[offset:offset+name_len].decode('utf-8')
            offset += name_len
            rank = int(np.frombuffer(buf, dtype='<u4', count=1, offset=offset)[0])
            offset += 4
            shape = tuple(int(s) for s in
                          np.frombuffer(buf, dtype='<u8', count=rank, offset=offset))
            offset += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(buf, dtype='<f8', count=size, offset=offset)
            offset += 8 * size
            records[name] = data.reshape(shape).astype(np.float64)
    except (ValueError, UnicodeDecodeError) as e:
        raise OSError(f'{path}: truncated or corrupt checkpoint record') from e

    return records


def load_params(path, like):
    """Read a checkpoint into a pytree with the structure of ``like``.

    Raises
    ------
    OSError
        If names or shapes in the file do not match ``like``.

    """
    records = read_checkpoint(path)
    _, treedef = tree_flatten(like)

    leaves = []
    for name, leaf in tree_named_leaves(like):
        if name not in records:
            raise OSError(f'{path}: missing parameter {name}')
        if records[name].shape != np.shape(leaf):
            raise OSError(f'{path}: parameter {name} has shape {records[name].shape}, '
                          f'expected {np.shape(leaf)}')
        leaves.append(records[name])
    if len(records) != len(leaves):
        extra = sorted(set(records) - {n for n, _ in tree_named_leaves(like)})
        raise OSError(f'{path}: unexpected parameters {extra}')

    return tree_unflatten(treedef, leaves)


def write_dataset(path, Y, X, meta=None):
    """Write paired (Y, X) rows, and ``meta`` as the JSON sidecar."""
    Y = np.asarray(Y, dtype='<f8')
    X = np.asarray(X, dtype='<f8')
    if Y.ndim != 2 or X.ndim != 2 or len(Y) != len(X):
        raise ValueError(f'Y {Y.shape} and X {X.shape} must be paired 2D arrays')

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, 'wb') as f:
        f.write(DATASET_MAGIC)
        f.write(_u32(FORMAT_VERSION))
        f.write(np.asarray((len(Y), Y.shape[1], X.shape[1]), dtype='<u8').tobytes())
        f.write(np.ascontiguousarray(Y).tobytes())
        f.write(np.ascontiguousarray(X).tobytes())

    if meta is not None:
        write_sidecar(path, meta)


def read_dataset(path):
    """Read a dataset file.

    Returns
    -------
    Y : (N, d_Y) numpy.ndarray
    X : (N, d_X) numpy.ndarray
    meta : dict or None
        Sidecar contents.

    Raises
    ------
    OSError
        On bad magic bytes, unknown version, or a size mismatch.

    """
    buf = Path(path).read_bytes()
    offset = _check_header(buf, DATASET_MAGIC, path)
    if len(buf) < offset + 24:
        raise OSError(f'{path}: truncated dataset header')

    N, d_Y, d_X = (int(n) for n in
                   np.frombuffer(buf, dtype='<u8', count=3, offset=offset))
    offset += 24
    if len(buf) != offset + 8 * N * (d_Y + d_X):
        raise OSError(f'{path}: size {len(buf)} does not match header '
                      f'N={N}, d_Y={d_Y}, d_X={d_X}')

    Y = np.frombuffer(buf, dtype='<f8', count=N * d_Y, offset=offset)
    offset += 8 * N * d_Y
    X = np.frombuffer(buf, dtype='<f8', count=N * d_X, offset=offset)

    Y = Y.reshape(N, d_Y).astype(np.float64)
    X = X.reshape(N, d_X).astype(np.float64)
    return Y, X, read_sidecar(path)
