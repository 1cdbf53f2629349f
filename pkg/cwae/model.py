from functools import partial
from typing import Optional

import numpy as np
from jax import Array, random, vmap
import jax.numpy as jnp

from cwae.tree_util import pytree_dataclass
from cwae.configuration import ModelConfig
from cwae.nn import Mlp, init_params, forward
from cwae.divergence import KernelPenaltyConfig, latent_discrepancy
from cwae.lbm import physics_penalty


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class LatentSpec:
    """Standard normal reference P_Z ⊗ P_U on the joint latent space.

    Parameters
    ----------
    d_Z : int
        Dimension of the observation latent Z.
    d_U : int
        Dimension of the conditional noise U.

    """

    d_Z: int
    d_U: int

    def __post_init__(self):
        if self.d_Z < 1 or self.d_U < 1:
            raise ValueError(f'd_Z = {self.d_Z} and d_U = {self.d_U} must be positive')

    @property
    def dim(self):
        return self.d_Z + self.d_U

    def sample(self, key, num):
        """Independent (z, u) blocks of ``num`` joint reference draws, concatenated."""
        key = random.PRNGKey(key) if jnp.ndim(key) == 0 else key
        z_key, u_key = random.split(key)
        z = random.normal(z_key, shape=(num, self.d_Z), dtype=jnp.float64)
        u = random.normal(u_key, shape=(num, self.d_U), dtype=jnp.float64)
        return jnp.concatenate([z, u], axis=1)


@partial(pytree_dataclass, aux_fields='conf', frozen=True)
class BlockTriangularModel:
    """Encoder and decoder networks of one CWAE variant or WAE-C.

    ====== ======================== ========================
    conf   x_decoder                x_encoder
    ====== ======================== ========================
    cwae1  Ḡ_X(ẑ, û)                Φ̄_X(y, x)
    cwae2  G_X(ŷ, û)                Φ_X(ẑ, x)
    cwae3  Ḡ_X(ẑ, û)                Φ_X(ẑ, x)
    waec   G_X(ŷ, û)                Φ̄_X(y, x)
    ====== ======================== ========================

    with ẑ = Φ_Y(y) and ŷ = G_Y(ẑ) in all variants, so the z-block of the joint
    encoder is deterministic in y alone.

    Parameters
    ----------
    conf : ModelConfig
    phi_y : Mlp
        Observation encoder Φ_Y, d_Y to d_Z.
    g_y : Mlp
        Observation decoder G_Y, d_Z to d_Y.
    x_decoder : Mlp
        State decoder to d_X.
    x_encoder : Mlp
        Noise encoder to d_U.

    Raises
    ------
    ValueError
        If network dimensions do not match the configuration.

    """

    conf: ModelConfig
    phi_y: Mlp
    g_y: Mlp
    x_decoder: Mlp
    x_encoder: Mlp

    def __post_init__(self):
        if self._is_transforming():
            return

        c = self.conf
        expected = {
            'phi_y': (c.d_Y, c.d_Z),
            'g_y': (c.d_Z, c.d_Y),
            'x_decoder': (c.x_decoder_in, c.d_X),
            'x_encoder': (c.x_encoder_in, c.d_U),
        }
        for name, (i, o) in expected.items():
            net = getattr(self, name)
            if (net.in_dim, net.out_dim) != (i, o):
                raise ValueError(f'{c.variant} {name} maps {net.in_dim} to {net.out_dim}, '
                                 f'expected {i} to {o}')

    @property
    def latent(self):
        return LatentSpec(self.conf.d_Z, self.conf.d_U)


def init_model(conf, seed):
    """Initialize the four networks of a variant from one seed."""
    keys = random.split(random.PRNGKey(seed), num=4)
    w = conf.widths
    act = conf.activation
    return BlockTriangularModel(
        conf=conf,
        phi_y=init_params((conf.d_Y,) + w + (conf.d_Z,), keys[0], activation=act),
        g_y=init_params((conf.d_Z,) + w + (conf.d_Y,), keys[1], activation=act),
        x_decoder=init_params((conf.x_decoder_in,) + w + (conf.d_X,), keys[2],
                              activation=act),
        x_encoder=init_params((conf.x_encoder_in,) + w + (conf.d_U,), keys[3],
                              activation=act),
    )


def _check_batch(model, Y, X):
    c = model.conf
    Y = jnp.asarray(Y)
    X = jnp.asarray(X)
    if Y.ndim != 2 or Y.shape[1] != c.d_Y:
        raise ValueError(f'Y shape {Y.shape} does not match d_Y = {c.d_Y}')
    if X.ndim != 2 or X.shape[1] != c.d_X:
        raise ValueError(f'X shape {X.shape} does not match d_X = {c.d_X}')
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f'{Y.shape[0]} observations but {X.shape[0]} states')
    return Y, X


def decode_x(model, z, y, u):
    """Evaluate the state decoder, on z or on y depending on the variant."""
    first = y if model.conf.decodes_from_y else z
    return forward(model.x_decoder, jnp.concatenate([first, u], axis=1))


def encode_u(model, z, y, x):
    """Evaluate the noise encoder, on z or on y depending on the variant."""
    first = y if model.conf.encodes_from_y else z
    return forward(model.x_encoder, jnp.concatenate([first, x], axis=1))


def forward_variant(model, batch):
    """Encode and reconstruct a batch through the variant's wiring.

    Parameters
    ----------
    model : BlockTriangularModel
    batch : 2-tuple of ArrayLike
        Observations Y of shape (N, d_Y) and states X of shape (N, d_X).

    Returns
    -------
    z_hat : (N, d_Z) jax.Array
    y_hat : (N, d_Y) jax.Array
    u_hat : (N, d_U) jax.Array
    x_hat : (N, d_X) jax.Array

    Raises
    ------
    ValueError
        If batch dimensions do not match the model.

    """
    Y, X = _check_batch(model, *batch)

    z_hat = forward(model.phi_y, Y)
    y_hat = forward(model.g_y, z_hat)
    u_hat = encode_u(model, z_hat, Y, X)
    x_hat = decode_x(model, z_hat, y_hat, u_hat)

    return z_hat, y_hat, u_hat, x_hat


def decode(model, z, u):
    """Block-triangular generator G(z, u) = (G_Y(z), G_X(·, u)).

    The first output does not depend on ``u``.

    """
    y = forward(model.g_y, z)
    return y, decode_x(model, z, y, u)


@partial(pytree_dataclass, frozen=True)
class LossBreakdown:
    """Terms of the training objective.

    ``total = recon_x + recon_y + lam * penalty + physics``, where ``physics`` is
    the already weighted sum of the physics terms, or None without them.

    """

    recon_x: Array
    recon_y: Array
    penalty: Array
    lam: Array
    total: Array
    physics: Optional[Array] = None

    def recompute_total(self):
        total = self.recon_x + self.recon_y + self.lam * self.penalty
        if self.physics is not None:
            total = total + self.physics
        return total

    def check_finite(self, context=''):
        """Raise FloatingPointError naming any NaN or infinite term."""
        bad = [name for name, value in self.named_children()
               if value is not None and not np.isfinite(float(value))]
        if bad:
            raise FloatingPointError(f'non-finite loss terms {", ".join(bad)}'
                                     + (f' {context}' if context else ''))

    def to_dict(self):
        return {name: None if value is None else float(value)
                for name, value in self.named_children()}


def _physics(x_hat, cfg):
    m = cfg.physics_grid
    fields = x_hat.reshape(x_hat.shape[0], 2, m, m)
    div, smooth = vmap(physics_penalty)(fields)
    w_div, w_smooth = cfg.physics_weights
    return w_div * div.mean() + w_smooth * smooth.mean()


def _sqnorm_mean(a, b):
    return ((a - b) ** 2).sum(axis=1).mean()


def _default_critic(cfg):
    return KernelPenaltyConfig(jnp.asarray(cfg.penalty.bandwidth_scales),
                               cfg.penalty.unbiased)


def assemble_loss(model, batch, latent_ref, cfg, critic=None):
    """Regularized reconstruction objective on one minibatch.

    Parameters
    ----------
    model : BlockTriangularModel
    batch : 2-tuple of ArrayLike
        (Y, X) data pairs.
    latent_ref : (N, d_Z + d_U) ArrayLike
        Reference draws from N(0, I).
    cfg : TrainConfig
    critic : KernelPenaltyConfig or Discriminator, optional
        Latent discrepancy. Default is the MMD² with unit median bandwidth scales.

    Returns
    -------
    loss : LossBreakdown

    """
    Y, X = _check_batch(model, *batch)
    if critic is None:
        critic = _default_critic(cfg)

    z_hat, y_hat, u_hat, x_hat = forward_variant(model, (Y, X))

    recon_x = _sqnorm_mean(X, x_hat)
    recon_y = _sqnorm_mean(Y, y_hat)
    latents = jnp.concatenate([z_hat, u_hat], axis=1)
    penalty = latent_discrepancy(latents, jnp.asarray(latent_ref), critic)

    physics = None
    if cfg.physics_grid is not None:
        if model.conf.d_X != 2 * cfg.physics_grid ** 2:
            raise ValueError(f'd_X = {model.conf.d_X} is not 2 m² for physics grid '
                             f'm = {cfg.physics_grid}')
        physics = _physics(x_hat, cfg)

    lam = jnp.asarray(cfg.lam, dtype=recon_x.dtype)
    loss = LossBreakdown(recon_x, recon_y, penalty, lam, recon_x, physics)
    return loss.replace(total=loss.recompute_total())


def waec_loss(model, batch, latent_ref, cfg, critic=None):
    """WAE objective on the joint (y, x) space with the additive quadratic cost
    c_Y + c_X and the decoder (G_Y(z), G_X(G_Y(z), u)).

    Raises
    ------
    ValueError
        If the model is not the WAE-C variant.

    """
    if model.conf.variant != 'waec':
        raise ValueError(f'waec_loss needs a waec model, not {model.conf.variant}')
    return assemble_loss(model, batch, latent_ref, cfg, critic=critic)


def wae_loss(encoder, decoder, data, latent_ref, critic, lam):
    """Unconditional WAE objective, e.g. for the observation autoencoder (Φ_Y, G_Y).

    The reconstruction is reported as ``recon_y``, and ``recon_x`` is zero.

    """
    data = jnp.asarray(data)
    z = forward(encoder, data)
    recon = _sqnorm_mean(data, forward(decoder, z))
    penalty = latent_discrepancy(z, jnp.asarray(latent_ref), critic)
    lam = jnp.asarray(lam, dtype=recon.dtype)
    loss = LossBreakdown(jnp.zeros_like(recon), recon, penalty, lam, recon)
    return loss.replace(total=loss.recompute_total())


def conditional_sample(model, y, num, seed):
    """Draw states given one observation.

    u ~ N(0, I) is pushed through Ḡ_X(Φ_Y(y), u) for cwae1 and cwae3, G_X(y, u) for
    cwae2, and G_X(G_Y(Φ_Y(y)), u) for waec.

    Parameters
    ----------
    model : BlockTriangularModel
    y : (d_Y,) ArrayLike
    num : int
    seed : int

    Returns
    -------
    x : (num, d_X) jax.Array

    """
    c = model.conf
    y = jnp.atleast_1d(jnp.asarray(y, dtype=jnp.float64))
    if y.shape != (c.d_Y,):
        raise ValueError(f'y shape {y.shape} does not match d_Y = {c.d_Y}')

    u = random.normal(random.PRNGKey(seed), shape=(num, c.d_U), dtype=jnp.float64)
    Y = jnp.broadcast_to(y, (num, c.d_Y))
    z = forward(model.phi_y, Y)
    if c.variant == 'waec':
        Y = forward(model.g_y, z)

    return decode_x(model, z, Y, u)


def joint_sample(model, num, seed):
    """Joint (y, x) samples of the block-triangular generator from the reference."""
    ref = model.latent.sample(seed, num)
    z, u = ref[:, :model.conf.d_Z], ref[:, model.conf.d_Z:]
    return decode(model, z, u)


def y_marginal_sample(model, num, seed):
    """Samples of G_Y pushed forward from P_Z."""
    z = random.normal(random.PRNGKey(seed), shape=(num, model.conf.d_Z),
                      dtype=jnp.float64)
    return forward(model.g_y, z)


def left_inverse_error(model, Y):
    """Relative observation reconstruction error Σ‖G_Y(Φ_Y(y)) - y‖² / Σ‖y‖².

    Raises
    ------
    ValueError
        If all observations are zero.

    """
    Y = jnp.asarray(Y)
    denom = float((Y ** 2).sum())
    if denom == 0:
        raise ValueError('observations are all zero')
    Y_hat = forward(model.g_y, forward(model.phi_y, Y))
    return float(((Y_hat - Y) ** 2).sum()) / denom


def latent_correlation(model, batch):
    """Largest absolute Pearson correlation between any ẑ and û coordinates.

    Constant coordinates count as uncorrelated.

    """
    z_hat, _, u_hat, _ = forward_variant(model, batch)
    z_hat = np.asarray(z_hat)
    u_hat = np.asarray(u_hat)
    d_Z = z_hat.shape[1]

    with np.errstate(divide='ignore', invalid='ignore'):
        corr = np.corrcoef(np.concatenate([z_hat, u_hat], axis=1), rowvar=False)
    corr = np.atleast_2d(corr)[:d_Z, d_Z:]
    corr = np.nan_to_num(corr, nan=0.)
    return float(np.abs(corr).max())
