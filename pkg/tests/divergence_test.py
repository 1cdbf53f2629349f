import pytest
import numpy as np
import jax
import jax.numpy as jnp

from cwae.divergence import (KernelPenaltyConfig, mmd2, median_bandwidth,
                             init_discriminator, js_penalty, disc_step, disc_accuracy,
                             latent_discrepancy)
from cwae.test_util import gen_gaussian_pair


@pytest.mark.parametrize('unbiased', [False, True], ids=['biased', 'unbiased'])
def test_mmd2_symmetric(unbiased):
    q, p = gen_gaussian_pair(64, 3, shift=1., seed=0)
    cfg = KernelPenaltyConfig.from_scales((0.5, 1., 2.), 1., unbiased=unbiased)
    assert float(mmd2(q, p, cfg)) == float(mmd2(p, q, cfg))


def test_mmd2_identical_zero():
    q, _ = gen_gaussian_pair(50, 2, seed=1)
    cfg = KernelPenaltyConfig(jnp.array([1., 2.]))
    assert abs(float(mmd2(q, q, cfg))) < 1e-12


def test_mmd2_grows_with_shift():
    cfg = KernelPenaltyConfig(jnp.array([1.]))
    values = []
    for shift in (0., 1., 3.):
        q, p = gen_gaussian_pair(200, 2, shift=shift, seed=2)
        values.append(float(mmd2(q, p, cfg)))
    assert values[0] < values[1] < values[2]
    assert values[0] < 0.02


@pytest.mark.parametrize(
    'bandwidths',
    [[], [1., 0.], [-1.]],
    ids=['empty', 'zero', 'negative'],
)
def test_bandwidths_invalid(bandwidths):
    with pytest.raises(ValueError):
        KernelPenaltyConfig(jnp.asarray(bandwidths))


def test_unbiased_needs_two():
    cfg = KernelPenaltyConfig(jnp.array([1.]), unbiased=True)
    with pytest.raises(ValueError):
        mmd2(jnp.ones((1, 2)), jnp.ones((1, 2)), cfg)


def test_mmd2_dim_mismatch():
    cfg = KernelPenaltyConfig(jnp.array([1.]))
    with pytest.raises(ValueError):
        mmd2(jnp.ones((4, 2)), jnp.ones((4, 3)), cfg)


def test_median_bandwidth():
    q = np.zeros((5, 2))
    assert median_bandwidth(q, q) == 1.

    q = np.array([[0., 0.], [3., 4.]])
    assert median_bandwidth(q[:1], q[1:]) == pytest.approx(5.)


class TestDiscriminator:
    def test_gradient_split(self):
        q, p = gen_gaussian_pair(16, 2, shift=1., seed=3)
        q, p = jnp.asarray(q), jnp.asarray(p)
        disc = init_discriminator(2, widths=(8,), seed=0)

        dq = jax.grad(lambda q: js_penalty(disc, q, p)[0])(q)
        assert not np.asarray(dq).any()

        dnet = jax.grad(lambda net: js_penalty(disc.replace(net=net), q, p)[1])(disc.net)
        assert not any(np.asarray(g).any() for g in jax.tree_util.tree_leaves(dnet))

    def test_training_separates(self):
        q, p = gen_gaussian_pair(128, 2, shift=6., seed=4)
        disc = init_discriminator(2, widths=(16,), lr=1e-2, seed=1)
        _, first = disc_step(disc, q, p)
        for _ in range(300):
            disc, loss = disc_step(disc, q, p)
        assert loss < first
        assert disc_accuracy(disc, q, p) > 0.95

    def test_too_few(self):
        disc = init_discriminator(2, widths=(4,))
        with pytest.raises(ValueError):
            js_penalty(disc, jnp.ones((1, 2)), jnp.ones((1, 2)))


def test_latent_discrepancy_dispatch():
    q, p = gen_gaussian_pair(32, 2, shift=1., seed=5)
    cfg = KernelPenaltyConfig(jnp.array([1.]))
    assert float(latent_discrepancy(q, p, cfg)) == float(mmd2(q, p, cfg))

    disc = init_discriminator(2, widths=(4,))
    assert float(latent_discrepancy(q, p, disc)) == pytest.approx(
        float(js_penalty(disc, q, p)[1]))

    with pytest.raises(TypeError):
        latent_discrepancy(q, p, 'mmd')
