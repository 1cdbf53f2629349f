import dataclasses
import hashlib
from pprint import pformat

import numpy as np
from jax.tree_util import (register_pytree_node, tree_leaves, tree_flatten_with_path,
                           keystr)


def pytree_dataclass(cls, aux_fields=None, aux_invert=False, **kwargs):
    """Register python dataclasses as custom pytree nodes.

    Network parameters and optimizer moments live in pytree children, so that
    ``jax.grad`` and ``jax.jit`` see them as leaves, while structure (layer
    activations, variant names, dimensions, hyperparameters) lives in aux_data and is
    static under ``jit``.

    Also added are methods that return children and aux_data iterators, a pretty
    string representation, and a method that replaces fields with changes.

    Parameters
    ----------
    cls : type
        Class to be registered, not a python dataclass yet.
    aux_fields : str, sequence of str, or Ellipsis, optional
        Pytree aux_data fields. Default is none; unrecognized ones are ignored;
        ``Ellipsis`` uses all.
    aux_invert : bool, optional
        Whether to invert ``aux_fields`` selections, convenient when most but not all
        fields are aux_data.
    **kwargs
        Keyword arguments to be passed to python dataclass decorator.

    Returns
    -------
    cls : type
        Registered dataclass.

    Raises
    ------
    TypeError
        If cls is already a python dataclass.

    """
    if dataclasses.is_dataclass(cls):
        raise TypeError('cls cannot already be a dataclass')
    cls = dataclasses.dataclass(cls, **kwargs)

    if aux_fields is None:
        aux_fields = ()
    elif isinstance(aux_fields, str):
        aux_fields = (aux_fields,)
    elif aux_fields is Ellipsis:
        aux_fields = [field.name for field in dataclasses.fields(cls)]
    names = [field.name for field in dataclasses.fields(cls)]
    aux_data_names = [name for name in names if name in aux_fields]
    children_names = [name for name in names if name not in aux_fields]

    if aux_invert:
        aux_data_names, children_names = children_names, aux_data_names

    def named_children(self):
        """Return an iterator over pytree children names and values."""
        for name in children_names:
            yield name, getattr(self, name)

    def named_aux_data(self):
        """Return an iterator over pytree aux_data names and values."""
        for name in aux_data_names:
            yield name, getattr(self, name)

    cls.named_children = named_children
    cls.named_aux_data = named_aux_data
    cls.children = lambda self: (value for _, value in self.named_children())
    cls.aux_data = lambda self: (value for _, value in self.named_aux_data())

    def tree_flatten(obj):
        return tuple(obj.children()), tuple(obj.aux_data())

    def tree_unflatten(aux_data, children):
        return cls(**dict(zip(children_names, children)),
                   **dict(zip(aux_data_names, aux_data)))

    register_pytree_node(cls, tree_flatten, tree_unflatten)

    def _is_transforming(self):
        """Whether dataclass fields are pytrees initialized by JAX transformations,
        in which case validation in ``__post_init__`` must be skipped."""
        leaves = tree_leaves(self)
        return bool(leaves) and all(type(x) is object for x in leaves)

    cls._is_transforming = _is_transforming

    def __str__(self):
        return pformat(self)

    cls.__str__ = __str__

    def replace(self, **changes):
        """Create a new object of the same type, replacing fields with changes."""
        return dataclasses.replace(self, **changes)

    cls.replace = replace

    return cls


def tree_named_leaves(tree):
    """Leaves of a pytree paired with stable names built from their key paths.

    Names look like ``phi_y.weights[0]`` and are used as checkpoint record names.

    Returns
    -------
    named : list of (str, jax.Array)

    """
    leaves_with_path, _ = tree_flatten_with_path(tree)
    return [(keystr(path).lstrip('.'), leaf) for path, leaf in leaves_with_path]


def tree_digest(tree):
    """SHA-256 hex digest over the names, shapes and float64 bytes of all leaves."""
    h = hashlib.sha256()
    for name, leaf in tree_named_leaves(tree):
        leaf = np.asarray(leaf, dtype=np.float64)
        h.update(name.encode())
        h.update(np.asarray(leaf.shape, dtype='<u8').tobytes())
        h.update(leaf.astype('<f8').tobytes())
    return h.hexdigest()


def to_jsonable(obj):
    """Convert (nested) config dataclasses, tuples and numpy scalars to plain JSON
    types, recursing into dataclass fields by name."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
