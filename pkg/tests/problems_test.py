import pytest
import numpy as np
import jax.numpy as jnp
from jax import jacfwd

from cwae.problems import (Dataset, ManifoldProblem, SphericalProblem, ManifoldDX10,
                           ManifoldDX20, ManifoldDX30, SphericalFigure, gen_manifold,
                           gen_spherical, problem_from_dict, generate)
from cwae.lbm import FlowProblem
from cwae.test_util import check_close


@pytest.mark.parametrize(
    'preset, d_X, d_Y',
    [
        (ManifoldDX10, 10, 4),
        (ManifoldDX20, 20, 8),
        (ManifoldDX30, 30, 12),
        (SphericalFigure, 2, 1),
    ],
    ids=['dx10', 'dx20', 'dx30', 'spherical'],
)
def test_presets(preset, d_X, d_Y):
    p = preset()
    assert (p.d_X, p.d_Y) == (d_X, d_Y)
    data = generate(p, 7, seed=1)
    assert data.X.shape == (7, d_X) and data.Y.shape == (7, d_Y)
    assert data.provenance['problem'] == p.to_dict()


class TestManifold:
    def test_psi_standardized(self):
        p = ManifoldProblem(3)
        v = np.random.default_rng(0).standard_normal((40_000, 3))
        psi = np.asarray(p.psi(jnp.asarray(v)))
        np.testing.assert_allclose(psi.mean(axis=0), 0, atol=0.05)
        np.testing.assert_allclose(psi.var(axis=0), 1, atol=0.15)

    def test_observation_noise(self):
        p = ManifoldDX10()
        data = gen_manifold(p, 5000)
        resid = data.Y - np.asarray(p.h(jnp.asarray(data.X)))
        assert resid.std() == pytest.approx(p.sigma, rel=0.05)

    def test_near_manifold(self):
        p = ManifoldDX10(gamma=0.)
        data = gen_manifold(p, 100)
        v = jnp.asarray(data.X[:, :p.d_U])
        check_close(data.X[:, p.d_U:], p.psi(v), atol=1e-12)

    def test_seeds(self):
        p = ManifoldDX10()
        a, b = gen_manifold(p, 10, seed=3), gen_manifold(p, 10, seed=3)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Y, b.Y)
        assert not np.array_equal(a.X, gen_manifold(p, 10, seed=4).X)

    def test_embedding_seed(self):
        a = ManifoldProblem(2, seed=0).psi_coeffs()[0]
        b = ManifoldProblem(2, seed=1).psi_coeffs()[0]
        assert not np.allclose(a, b)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ManifoldProblem(0)
        with pytest.raises(ValueError):
            ManifoldProblem(2, sigma=-1.)
        with pytest.raises(ValueError):
            gen_manifold(ManifoldDX10(), 0)


class TestSpherical:
    def test_observation(self):
        p = SphericalFigure()
        data = gen_spherical(p, 4000)
        resid = data.Y[:, 0] - (data.X ** 2).sum(axis=1)
        assert resid.mean() == pytest.approx(0., abs=0.02)
        assert resid.std() == pytest.approx(0.2, rel=0.05)

    @pytest.mark.parametrize('d_X', [1, 2, 5])
    def test_dims(self, d_X):
        p = SphericalProblem(d_X)
        assert p.d_Y == 1
        assert p.prior.dim == d_X


@pytest.mark.parametrize(
    'problem',
    [ManifoldDX20(), SphericalProblem(3), FlowProblem(grid=6, obs_grid=2)],
    ids=['manifold', 'spherical', 'flow'],
)
def test_jacobian(problem):
    x = jnp.asarray(np.random.default_rng(0).standard_normal(problem.d_X))
    expected = jacfwd(lambda x: problem.h(x[None])[0])(x)
    check_close(problem.jacobian(x), expected)


@pytest.mark.parametrize(
    'problem',
    [ManifoldDX30(gamma=0.1), SphericalProblem(4, sigma=0.1, seed=5),
     FlowProblem(grid=6, obs_grid=3, reynolds=100.)],
    ids=['manifold', 'spherical', 'flow'],
)
def test_from_dict(problem):
    assert problem_from_dict(problem.to_dict()) == problem


@pytest.mark.parametrize(
    'd',
    [{'kind': 'heat'}, {'d_U': 2}, {'kind': 'manifold', 'd_U': 2, 'beta': 1.}],
    ids=['kind', 'no_kind', 'key'],
)
def test_from_dict_invalid(d):
    with pytest.raises(ValueError):
        problem_from_dict(d)


class TestDataset:
    def test_invalid(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 1)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 1)), np.array([[0.], [np.inf]]))
        with pytest.raises(ValueError):
            Dataset(np.zeros(2), np.zeros((2, 1)))

    def test_split(self):
        data = gen_spherical(SphericalFigure(), 20)
        train, test = data.split(0.25, seed=0)
        assert (len(train), len(test)) == (15, 5)
        rows = np.concatenate([train.X, test.X])
        np.testing.assert_array_equal(np.sort(rows[:, 0]), np.sort(data.X[:, 0]))

    def test_split_keeps_one(self):
        data = gen_spherical(SphericalFigure(), 3)
        train, test = data.split(0., seed=0)
        assert (len(train), len(test)) == (2, 1)
        with pytest.raises(ValueError):
            data.subset(slice(0, 1)).split(0.5, seed=0)

    def test_save_load(self, tmp_path):
        data = gen_manifold(ManifoldDX10(), 12)
        data.save(tmp_path / 'd.cwds')
        loaded = Dataset.load(tmp_path / 'd.cwds')
        np.testing.assert_array_equal(loaded.Y, data.Y)
        np.testing.assert_array_equal(loaded.X, data.X)
        assert loaded.provenance == data.provenance
