import pytest
import numpy as np
import jax.numpy as jnp
import jax.test_util as jtu

from cwae.configuration import ModelConfig, TrainConfig, PenaltyConfig
from cwae.nn import Mlp
from cwae.model import (LatentSpec, BlockTriangularModel, init_model, forward_variant,
                        decode, assemble_loss, waec_loss, wae_loss, conditional_sample,
                        joint_sample, y_marginal_sample, left_inverse_error,
                        latent_correlation)
from cwae.divergence import KernelPenaltyConfig, init_discriminator, latent_discrepancy
from cwae.test_util import gen_batch, check_close, check_eq, zero_like_mlp


def gen_model(variant, d_Y=2, d_X=3, d_Z=2, d_U=3, widths=(8,), seed=0):
    conf = ModelConfig(variant, d_Y, d_X, d_Z, d_U, widths=widths)
    return init_model(conf, seed)


def gen_pairs(num=16, d_Y=2, d_X=3, seed=0):
    return gen_batch(num, d_Y, seed=seed), gen_batch(num, d_X, seed=seed + 1)


def zero_model(model):
    return model.replace(phi_y=zero_like_mlp(model.phi_y), g_y=zero_like_mlp(model.g_y),
                         x_decoder=zero_like_mlp(model.x_decoder),
                         x_encoder=zero_like_mlp(model.x_encoder))


def linear_net(w, b):
    return Mlp((jnp.array(w, dtype=jnp.float64),), (jnp.array(b, dtype=jnp.float64),),
               ())


@pytest.mark.parametrize(
    'variant, decoder_in, encoder_in',
    [
        ('cwae1', 2 + 3, 2 + 3),
        ('cwae2', 2 + 3, 2 + 3),
        ('cwae3', 2 + 3, 2 + 3),
        ('waec',  2 + 3, 2 + 3),
    ],
    ids=ModelConfig.VARIANTS,
)
def test_init_dims(variant, decoder_in, encoder_in):
    model = gen_model(variant)
    assert model.phi_y.widths == (2, 8, 2)
    assert model.g_y.widths == (2, 8, 2)
    assert model.x_decoder.in_dim == decoder_in and model.x_decoder.out_dim == 3
    assert model.x_encoder.in_dim == encoder_in and model.x_encoder.out_dim == 3
    assert model.latent.dim == 5


@pytest.mark.parametrize(
    'variant, decodes_from_y, encodes_from_y',
    [
        ('cwae1', False, True),
        ('cwae2', True,  False),
        ('cwae3', False, False),
        ('waec',  True,  True),
    ],
    ids=ModelConfig.VARIANTS,
)
def test_wiring(variant, decodes_from_y, encodes_from_y):
    conf = ModelConfig(variant, d_Y=4, d_X=6, d_Z=1, d_U=2)
    assert conf.decodes_from_y == decodes_from_y
    assert conf.encodes_from_y == encodes_from_y
    assert conf.x_decoder_in == (4 if decodes_from_y else 1) + 2
    assert conf.x_encoder_in == (4 if encodes_from_y else 1) + 6


@pytest.mark.parametrize(
    'kwargs',
    [
        dict(variant='cwae4'),
        dict(d_U=0),
        dict(widths=(8, 0)),
        dict(activation='sigmoid'),
    ],
    ids=['variant', 'd_U', 'widths', 'activation'],
)
def test_config_invalid(kwargs):
    args = dict(variant='cwae1', d_Y=2, d_X=3, d_Z=2, d_U=3)
    args.update(kwargs)
    with pytest.raises(ValueError):
        ModelConfig(**args)


def test_mismatched_networks():
    model = gen_model('cwae1')
    with pytest.raises(ValueError):
        model.replace(phi_y=model.g_y.replace(weights=(jnp.ones((3, 8)),
                                                       model.g_y.weights[1])))


def test_latent_spec():
    with pytest.raises(ValueError):
        LatentSpec(0, 2)
    ref = LatentSpec(2, 3).sample(0, 7)
    assert ref.shape == (7, 5)
    check_close(ref, LatentSpec(2, 3).sample(0, 7))


@pytest.mark.parametrize('variant', ModelConfig.VARIANTS)
class TestVariant:
    def test_forward_shapes(self, variant):
        model = gen_model(variant)
        z_hat, y_hat, u_hat, x_hat = forward_variant(model, gen_pairs())
        assert z_hat.shape == (16, 2)
        assert y_hat.shape == (16, 2)
        assert u_hat.shape == (16, 3)
        assert x_hat.shape == (16, 3)

    def test_z_block_ignores_x(self, variant):
        model = gen_model(variant)
        Y, X = gen_pairs(seed=0)
        z1 = forward_variant(model, (Y, X))[0]
        z2 = forward_variant(model, (Y, X + 1))[0]
        check_close(z1, z2)

    def test_decode_y_ignores_u(self, variant):
        model = gen_model(variant)
        z = gen_batch(5, 2, seed=3)
        y1, _ = decode(model, z, gen_batch(5, 3, seed=4))
        y2, _ = decode(model, z, gen_batch(5, 3, seed=5))
        check_close(y1, y2)

    def test_conditional_sample(self, variant):
        model = gen_model(variant)
        x = conditional_sample(model, jnp.array([0.5, -1.]), 11, seed=2)
        assert x.shape == (11, 3)
        check_close(x, conditional_sample(model, jnp.array([0.5, -1.]), 11, seed=2))
        with pytest.raises(ValueError):
            conditional_sample(model, jnp.zeros(3), 11, seed=2)

    def test_loss_total(self, variant):
        model = gen_model(variant)
        ref = LatentSpec(2, 3).sample(1, 16)
        cfg = TrainConfig(penalty=PenaltyConfig(lam=0.7))
        loss = assemble_loss(model, gen_pairs(), ref, cfg)
        check_close(loss.total, loss.recon_x + loss.recon_y + 0.7 * loss.penalty)
        assert loss.physics is None
        assert set(loss.to_dict()) == {'recon_x', 'recon_y', 'penalty', 'lam', 'total',
                                       'physics'}

    def test_loss_grads(self, variant):
        model = gen_model(variant, widths=(4,))
        ref = LatentSpec(2, 3).sample(1, 8)
        batch = gen_pairs(8)
        cfg = TrainConfig()
        jtu.check_grads(lambda m: assemble_loss(m, batch, ref, cfg).total, (model,),
                        order=1, modes=['rev'], atol=1e-4, rtol=1e-4)


def test_lambda_zero_is_reconstruction():
    model = gen_model('cwae2')
    ref = LatentSpec(2, 3).sample(1, 16)
    cfg = TrainConfig(penalty=PenaltyConfig(lam=0.))
    loss = assemble_loss(model, gen_pairs(), ref, cfg)
    check_close(loss.total, loss.recon_x + loss.recon_y)


def test_js_critic():
    model = gen_model('cwae3')
    ref = LatentSpec(2, 3).sample(1, 16)
    disc = init_discriminator(5, widths=(4,))
    loss = assemble_loss(model, gen_pairs(), ref, TrainConfig(), critic=disc)
    assert np.isfinite(float(loss.total))
    assert float(loss.penalty) > 0


def test_physics_grid_mismatch():
    model = gen_model('cwae1')
    ref = LatentSpec(2, 3).sample(1, 16)
    with pytest.raises(ValueError):
        assemble_loss(model, gen_pairs(), ref, TrainConfig(physics_grid=3))


def test_physics_term():
    model = gen_model('cwae1', d_X=18)
    ref = LatentSpec(2, 3).sample(1, 16)
    loss = assemble_loss(model, gen_pairs(d_X=18), ref, TrainConfig(physics_grid=3))
    assert float(loss.physics) >= 0
    check_close(loss.total,
                loss.recon_x + loss.recon_y + loss.lam * loss.penalty + loss.physics)


def test_batch_mismatch():
    model = gen_model('cwae1')
    Y, X = gen_pairs()
    with pytest.raises(ValueError):
        forward_variant(model, (Y, X[:, :2]))
    with pytest.raises(ValueError):
        forward_variant(model, (Y[:4], X))


def test_waec_loss_needs_waec():
    ref = LatentSpec(2, 3).sample(1, 16)
    with pytest.raises(ValueError):
        waec_loss(gen_model('cwae1'), gen_pairs(), ref, TrainConfig())
    loss = waec_loss(gen_model('waec'), gen_pairs(), ref, TrainConfig())
    assert np.isfinite(float(loss.total))


def test_wae_loss():
    model = gen_model('cwae1')
    Y, _ = gen_pairs()
    cfg = TrainConfig()
    critic = KernelPenaltyConfig(jnp.asarray(cfg.penalty.bandwidth_scales))
    loss = wae_loss(model.phi_y, model.g_y, Y, gen_batch(16, 2, seed=9), critic, 2.)
    assert float(loss.recon_x) == 0
    check_close(loss.total, loss.recon_y + 2. * loss.penalty)


def test_joint_sample():
    y, x = joint_sample(gen_model('cwae3'), 9, seed=0)
    assert y.shape == (9, 2) and x.shape == (9, 3)


def test_diagnostics():
    model = gen_model('cwae1')
    Y, X = gen_pairs()
    assert left_inverse_error(model, Y) >= 0
    with pytest.raises(ValueError):
        left_inverse_error(model, jnp.zeros((4, 2)))
    assert 0 <= latent_correlation(model, (Y, X)) <= 1 + 1e-12


@pytest.mark.parametrize('variant', ModelConfig.VARIANTS)
def test_zero_networks(variant):
    model = zero_model(gen_model(variant))
    for out in forward_variant(model, gen_pairs()):
        check_eq(out, jnp.zeros_like(out))
    x = conditional_sample(model, jnp.array([0.5, -1.]), 7, seed=0)
    check_eq(x, jnp.zeros((7, 3)))


@pytest.mark.parametrize(
    'variant, x_changes',
    [
        ('cwae1', False),
        ('cwae2', True),
        ('cwae3', False),
        ('waec',  True),
    ],
    ids=ModelConfig.VARIANTS,
)
def test_observation_decoder_feeds_state_decoder(variant, x_changes):
    model = gen_model(variant)
    g_y = model.g_y
    perturbed = model.replace(g_y=g_y.replace(
        weights=tuple(w + 0.5 for w in g_y.weights)))

    batch = gen_pairs()
    z1, y1, u1, x1 = forward_variant(model, batch)
    z2, y2, u2, x2 = forward_variant(perturbed, batch)
    check_eq(z1, z2)
    check_eq(u1, u2)
    assert not np.allclose(y1, y2)
    assert (not np.allclose(x1, x2)) == x_changes


@pytest.mark.parametrize(
    'variant, encoder_first, decoder_first',
    [
        ('cwae1', 'y', 'z'),
        ('cwae2', 'z', 'y_hat'),
        ('cwae3', 'z', 'z'),
        ('waec',  'y', 'y_hat'),
    ],
    ids=ModelConfig.VARIANTS,
)
def test_scalar_linear_composition(variant, encoder_first, decoder_first):
    conf = ModelConfig(variant, d_Y=1, d_X=1, d_Z=1, d_U=1, widths=())
    model = BlockTriangularModel(
        conf,
        phi_y=linear_net([[2.]], [0.5]),
        g_y=linear_net([[-1.]], [1.]),
        x_decoder=linear_net([[0.5], [2.]], [-1.]),
        x_encoder=linear_net([[3.], [-1.]], [0.1]),
    )
    y = np.array([[1.], [-2.]])
    x = np.array([[0.5], [3.]])

    z = 2 * y + 0.5
    y_hat = - z + 1
    first = {'y': y, 'z': z, 'y_hat': y_hat}
    u = 3 * first[encoder_first] - x + 0.1
    x_hat = 0.5 * first[decoder_first] + 2 * u - 1

    out = forward_variant(model, (jnp.asarray(y), jnp.asarray(x)))
    for got, expected in zip(out, (z, y_hat, u, x_hat)):
        check_close(got, expected, atol=1e-14)


def test_decoder_ignoring_noise():
    model = gen_model('cwae3')
    dec = model.x_decoder
    w0 = dec.weights[0].at[-model.conf.d_U:].set(0)
    model = model.replace(x_decoder=dec.replace(weights=(w0,) + dec.weights[1:]))
    x = np.asarray(conditional_sample(model, jnp.array([0.3, 0.2]), 9, seed=4))
    np.testing.assert_allclose(x, np.broadcast_to(x[0], x.shape), atol=1e-14)


def test_waec_zero_networks():
    model = zero_model(gen_model('waec'))
    Y, X = gen_pairs()
    ref = LatentSpec(2, 3).sample(1, 16)
    cfg = TrainConfig()
    critic = KernelPenaltyConfig(jnp.asarray(cfg.penalty.bandwidth_scales))

    loss = waec_loss(model, (Y, X), ref, cfg, critic=critic)
    recon = float((X ** 2).sum(axis=1).mean() + (Y ** 2).sum(axis=1).mean())
    assert float(loss.recon_x + loss.recon_y) == pytest.approx(recon, rel=1e-12)
    origin = latent_discrepancy(jnp.zeros_like(ref), ref, critic)
    assert float(loss.penalty) == pytest.approx(float(origin), rel=1e-12)
    assert float(loss.penalty) > 0


def test_y_marginal_sample():
    model = gen_model('cwae1')
    y = y_marginal_sample(model, 6, seed=1)
    assert y.shape == (6, 2)
    check_eq(y, y_marginal_sample(model, 6, seed=1))

    g_y = zero_like_mlp(model.g_y)
    g_y = g_y.replace(biases=g_y.biases[:-1] + (jnp.array([1., -2.]),))
    y = y_marginal_sample(model.replace(g_y=g_y), 6, seed=1)
    check_eq(y, jnp.broadcast_to(jnp.array([1., -2.]), (6, 2)))
