from functools import partial
from typing import Tuple

import numpy as np
from jax import Array, jit, core
import jax.numpy as jnp
from jax.lax import stop_gradient
from jax.nn import softplus
from jax.tree_util import tree_map

from cwae.tree_util import pytree_dataclass
from cwae.nn import Mlp, AdamState, init_params, forward, backward, adam_step


@partial(pytree_dataclass, aux_fields='unbiased', frozen=True)
class KernelPenaltyConfig:
    """Multi-scale RBF kernel settings of the MMD² penalty.

    Bandwidths are a pytree child so that they can change between epochs, e.g. by
    the median heuristic, without recompilation.

    Parameters
    ----------
    bandwidths : (num,) ArrayLike
        Positive RBF bandwidths h, for kernels exp(-‖a-b‖² / (2h²)).
    unbiased : bool, optional
        Whether to exclude the diagonal self-similarities.

    Raises
    ------
    ValueError
        If there are no bandwidths or any of them is not positive.

    """

    bandwidths: Array
    unbiased: bool = False

    def __post_init__(self):
        if self._is_transforming() or isinstance(self.bandwidths, core.Tracer):
            return

        bandwidths = jnp.atleast_1d(jnp.asarray(self.bandwidths, dtype=jnp.float64))
        if bandwidths.ndim != 1 or bandwidths.size == 0:
            raise ValueError('need at least one bandwidth')
        if not bool((bandwidths > 0).all()):
            raise ValueError(f'bandwidths {bandwidths} must be positive')
        object.__setattr__(self, 'bandwidths', bandwidths)

    @classmethod
    def from_scales(cls, scales, median, unbiased=False):
        """Bandwidths as multiples of a median pairwise distance."""
        return cls(jnp.asarray(scales, dtype=jnp.float64) * median, unbiased)


def _check_pair(q, p):
    q = jnp.asarray(q)
    p = jnp.asarray(p)
    if q.ndim != 2 or p.ndim != 2 or q.shape[1] != p.shape[1]:
        raise ValueError(f'sample shapes {q.shape} and {p.shape} mismatch')
    return q, p


def sqdist(a, b):
    """Pairwise squared Euclidean distances, (N, d) and (M, d) to (N, M)."""
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def _rbf(d2, bandwidths):
    """RBF kernel averaged over bandwidths."""
    return jnp.exp(- d2[..., None] / (2 * bandwidths ** 2)).mean(axis=-1)


def _self_mean(K, unbiased):
    n = K.shape[0]
    if unbiased:
        if n < 2:
            raise ValueError('unbiased MMD² needs at least 2 samples per set')
        return (K.sum() - jnp.trace(K)) / (n * (n - 1))
    return K.mean()


def mmd2(q, p, cfg):
    """Squared maximum mean discrepancy with a multi-scale RBF kernel.

    Exactly symmetric in its arguments, and exactly zero for identical sample sets
    with the biased estimator.

    Parameters
    ----------
    q : (N, d) ArrayLike
        Samples of one distribution, e.g. encoded latents.
    p : (M, d) ArrayLike
        Samples of the other, e.g. reference draws.
    cfg : KernelPenaltyConfig

    Returns
    -------
    mmd2 : float jax.Array
        The estimate, which can be slightly negative for the unbiased estimator.

    """
    q, p = _check_pair(q, p)
    bw = cfg.bandwidths

    Kqq = _rbf(sqdist(q, q), bw)
    Kpp = _rbf(sqdist(p, p), bw)
    cross = 0.5 * (_rbf(sqdist(q, p), bw).mean() + _rbf(sqdist(p, q), bw).mean())

    return (_self_mean(Kqq, cfg.unbiased) + _self_mean(Kpp, cfg.unbiased)) - 2 * cross


def median_bandwidth(q, p, max_num=512):
    """Median pairwise distance among the pooled samples, 1 if degenerate.

    Only the first ``max_num`` samples of each set are used.

    """
    x = np.concatenate([np.asarray(q)[:max_num], np.asarray(p)[:max_num]], axis=0)
    d2 = np.asarray(sqdist(jnp.asarray(x), jnp.asarray(x)))
    iu = np.triu_indices(len(x), k=1)
    med = float(np.sqrt(np.median(d2[iu]))) if len(x) > 1 else 0.
    if not np.isfinite(med) or med <= 0:
        return 1.
    return med


@partial(pytree_dataclass, frozen=True)
class Discriminator:
    """Latent discriminator of the adversarial Jensen-Shannon penalty.

    Parameters
    ----------
    net : Mlp
        Network mapping (d_Z + d_U) latents to one logit.
    state : AdamState
        Its own optimizer state, separate from the encoders' and decoders'.

    """

    net: Mlp
    state: AdamState

    def __post_init__(self):
        if self._is_transforming():
            return
        if self.net.out_dim != 1:
            raise ValueError(f'discriminator must output 1 logit, not {self.net.out_dim}')

    def logits(self, x):
        return forward(self.net, x)[:, 0]


def init_discriminator(d_latent, widths=(64, 64), lr=1e-3, seed=0, activation='tanh'):
    net = init_params((d_latent,) + tuple(widths) + (1,), seed, activation=activation)
    return Discriminator(net, AdamState.init(net, lr=lr))


def _disc_loss(net, q, p):
    l_q = forward(net, q)[:, 0]
    l_p = forward(net, p)[:, 0]
    return 0.5 * (softplus(- l_p).mean() + softplus(l_q).mean())


def js_penalty(disc, q, p):
    """Adversarial Jensen-Shannon penalty terms.

    Parameters
    ----------
    disc : Discriminator
    q : (N, d) ArrayLike
        Encoded latents, labeled 0.
    p : (N, d) ArrayLike
        Reference draws, labeled 1.

    Returns
    -------
    disc_loss : float jax.Array
        Binary cross-entropy of the discriminator, averaged over the two classes.
        Only the discriminator receives its gradients.
    gen_penalty : float jax.Array
        Non-saturating generator objective, mean -log D(q). Only ``q`` receives its
        gradients.

    Raises
    ------
    ValueError
        If fewer than 2 samples are given, or dimensions mismatch.

    """
    q, p = _check_pair(q, p)
    if q.shape[0] < 2 or p.shape[0] < 2:
        raise ValueError(f'need N >= 2 samples, got {q.shape[0]} and {p.shape[0]}')

    disc_loss = _disc_loss(disc.net, stop_gradient(q), stop_gradient(p))

    net = tree_map(stop_gradient, disc.net)
    gen_penalty = softplus(- forward(net, q)[:, 0]).mean()

    return disc_loss, gen_penalty


@jit
def _disc_grad(net, q, p):
    return backward(_disc_loss, net, q, p)


def disc_step(disc, q, p):
    """One Adam step of the discriminator on its cross-entropy.

    Returns
    -------
    disc : Discriminator
    loss : float
        Cross-entropy before the step.

    """
    q, p = _check_pair(q, p)
    loss, grads = _disc_grad(disc.net, stop_gradient(q), stop_gradient(p))
    net, state = adam_step(disc.state, disc.net, grads)
    return disc.replace(net=net, state=state), float(loss)


def disc_accuracy(disc, q, p):
    """Fraction of samples classified correctly, reference as positive logits."""
    q, p = _check_pair(q, p)
    correct = (disc.logits(q) < 0).sum() + (disc.logits(p) > 0).sum()
    return float(correct) / (q.shape[0] + p.shape[0])


def latent_discrepancy(q, p, critic):
    """D_{Z×U} penalty of encoded latents ``q`` against reference draws ``p``.

    ``critic`` is either a KernelPenaltyConfig for MMD², or a Discriminator for the
    non-saturating Jensen-Shannon generator penalty.

    """
    if isinstance(critic, KernelPenaltyConfig):
        return mmd2(q, p, critic)
    if isinstance(critic, Discriminator):
        return js_penalty(critic, q, p)[1]
    raise TypeError(f'unknown critic type {type(critic).__name__}')
