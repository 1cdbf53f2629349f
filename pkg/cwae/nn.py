from functools import partial
import logging
from operator import add
from typing import Tuple

import numpy as np
import jax
from jax import Array, jit, value_and_grad, eval_shape, random
import jax.numpy as jnp
from jax.example_libraries.optimizers import adam, OptimizerState
from jax.tree_util import tree_map, tree_leaves

from cwae.tree_util import pytree_dataclass, tree_named_leaves


logger = logging.getLogger(__name__)


ACTIVATIONS = {
    'tanh': jnp.tanh,
    'relu': jax.nn.relu,
    'identity': lambda x: x,
}


@partial(pytree_dataclass, aux_fields='activations', frozen=True)
class Mlp:
    """Fully connected feed-forward network with identity output activation.

    Weights and biases are pytree children, so the whole network can be passed to
    ``jax.grad`` and optimizers. Activations are static aux data.

    Parameters
    ----------
    weights : tuple of jax.Array
        Layer weights of shapes ``(widths[i], widths[i+1])``.
    biases : tuple of jax.Array
        Layer biases of shapes ``(widths[i+1],)``.
    activations : tuple of str
        Hidden layer activations, one fewer than the number of layers.

    Raises
    ------
    ValueError
        If the layer shapes are inconsistent.

    """

    weights: Tuple[Array, ...]
    biases: Tuple[Array, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        if self._is_transforming():
            return

        object.__setattr__(self, 'weights', tuple(self.weights))
        object.__setattr__(self, 'biases', tuple(self.biases))
        object.__setattr__(self, 'activations', tuple(self.activations))

        if len(self.weights) == 0:
            raise ValueError('Mlp needs at least one layer')
        if not len(self.weights) == len(self.biases) == len(self.activations) + 1:
            raise ValueError(f'{len(self.weights)} weights, {len(self.biases)} biases, '
                             f'and {len(self.activations)} hidden activations')
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f'activation {a!r} not in {tuple(ACTIVATIONS)}')

        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w is None or b is None:
                continue  # e.g. pytrees with None leaves from tree_map
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f'layer {i}: weight shape {w.shape} and bias shape '
                                 f'{b.shape} inconsistent')
            if i > 0 and w.shape[0] != self.weights[i-1].shape[1]:
                raise ValueError(f'layer {i}: input width {w.shape[0]} != previous '
                                 f'output width {self.weights[i-1].shape[1]}')

    @property
    def widths(self):
        """Layer widths, from input to output."""
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    @property
    def param_count(self):
        """Number of scalar parameters, Σ (wᵢ wᵢ₊₁ + wᵢ₊₁)."""
        w = self.widths
        return sum(w[i] * w[i+1] + w[i+1] for i in range(len(w) - 1))


def init_params(widths, seed, activation='tanh', scale=1.):
    """Initialize an Mlp with fan-in-scaled normal weights and zero biases.

    Parameters
    ----------
    widths : sequence of int
        Layer widths from input to output, at least 2.
    seed : int or jax.Array
        Integer seed or PRNG key.
    activation : str or sequence of str, optional
        Hidden activation(s).
    scale : float, optional
        Multiplier of the weight standard deviation ``sqrt(1 / fan_in)``.

    Returns
    -------
    mlp : Mlp

    """
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f'widths={widths} need at least 2 positive entries')

    num_layers = len(widths) - 1
    if isinstance(activation, str):
        activations = (activation,) * (num_layers - 1)
    else:
        activations = tuple(activation)

    key = random.PRNGKey(seed) if jnp.ndim(seed) == 0 else seed
    keys = random.split(key, num=num_layers)

    weights, biases = [], []
    for k, fan_in, fan_out in zip(keys, widths[:-1], widths[1:]):
        std = scale * np.sqrt(1 / fan_in)
        weights.append(std * random.normal(k, shape=(fan_in, fan_out), dtype=jnp.float64))
        biases.append(jnp.zeros(fan_out, dtype=jnp.float64))

    return Mlp(tuple(weights), tuple(biases), activations)


def forward(mlp, x):
    """Evaluate the network on a batch.

    Parameters
    ----------
    mlp : Mlp
    x : (batch, in_dim) ArrayLike

    Returns
    -------
    y : (batch, out_dim) jax.Array

    Raises
    ------
    ValueError
        If the input width does not match the first layer.

    """
    x = jnp.asarray(x)
    if x.ndim != 2 or x.shape[1] != mlp.in_dim:
        raise ValueError(f'input shape {x.shape} does not match Mlp input width '
                         f'{mlp.in_dim}')

    for w, b, a in zip(mlp.weights[:-1], mlp.biases[:-1], mlp.activations):
        x = ACTIVATIONS[a](x @ w + b)
    return x @ mlp.weights[-1] + mlp.biases[-1]


def backward(loss_fn, params, *args, grads=None, has_aux=False):
    """Value and reverse-mode gradients of a scalar loss w.r.t. its first argument.

    Gradients are added to ``grads`` if given, so that repeated calls without a reset
    accumulate.

    Parameters
    ----------
    loss_fn : callable
        ``loss_fn(params, *args)`` returning a scalar, or ``(scalar, aux)`` if
        ``has_aux``.
    params : pytree
    *args
        Other arguments to ``loss_fn``, not differentiated.
    grads : pytree, optional
        Previous gradients to accumulate into.
    has_aux : bool, optional

    Returns
    -------
    value : jax.Array or (jax.Array, pytree)
    grads : pytree
        Same structure as ``params``.

    Raises
    ------
    ValueError
        If the loss is not a scalar.

    """
    out_shape = eval_shape(loss_fn, params, *args)
    loss_shape = out_shape[0] if has_aux else out_shape
    if getattr(loss_shape, 'shape', None) != ():
        raise ValueError(f'loss must be a scalar, got {loss_shape}')

    value, new_grads = value_and_grad(loss_fn, has_aux=has_aux)(params, *args)

    if grads is not None:
        new_grads = tree_map(add, grads, new_grads)

    return value, new_grads


@partial(pytree_dataclass, aux_fields=('lr', 'b1', 'b2', 'eps'), frozen=True)
class AdamState:
    """Adam optimizer state wrapping ``jax.example_libraries.optimizers.adam``.

    Parameters
    ----------
    step : int jax.Array
        Number of updates applied so far.
    opt_state : OptimizerState
        Per-parameter first and second moments.
    lr, b1, b2, eps : float
        Adam hyperparameters.

    """

    step: Array
    opt_state: OptimizerState
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        init, _, _ = adam(lr, b1=b1, b2=b2, eps=eps)
        return cls(jnp.zeros((), dtype=jnp.int64), init(params), lr, b1, b2, eps)


@jit
def _adam_update(state, params, grads):
    _, update, get_params = adam(state.lr, b1=state.b1, b2=state.b2, eps=state.eps)

    # the parameters to update are the given ones, not the copy kept in opt_state
    packed_state, tree_def, subtree_defs = state.opt_state
    packed_state = [[x] + list(s[1:]) for x, s in zip(tree_leaves(params), packed_state)]
    opt_state = OptimizerState(packed_state, tree_def, subtree_defs)

    opt_state = update(state.step, grads, opt_state)
    state = state.replace(step=state.step + 1, opt_state=opt_state)
    return get_params(opt_state), state


def adam_step(state, params, grads):
    """One bias-corrected Adam update.

    Parameters
    ----------
    state : AdamState
    params : pytree
        Parameters with the same structure as those ``state`` was initialized with.
    grads : pytree
        Gradients with the same structure as ``params``.

    Returns
    -------
    params : pytree
        Updated parameters.
    state : AdamState
        Updated state with the step count incremented.

    Raises
    ------
    FloatingPointError
        If any gradient is NaN or infinite, naming the offending parameter.

    """
    bad = [name for name, g in tree_named_leaves(grads)
           if not bool(jnp.isfinite(g).all())]
    if bad:
        raise FloatingPointError(f'non-finite gradients at step {int(state.step)} in '
                                 f'{", ".join(bad)}')

    return _adam_update(state, params, grads)
