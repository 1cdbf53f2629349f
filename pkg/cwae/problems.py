"""Joint (Y, X) data generators of the manifold and spherical experiments, and the
Dataset container shared by all problems."""

from functools import partial
from typing import Any, ClassVar, Dict, Optional

import numpy as np
from jax import Array, random
import jax.numpy as jnp

from cwae.tree_util import pytree_dataclass, to_jsonable
from cwae.enkf import ObservationModel
from cwae.sir import GaussianPushforward
from cwae.io_util import write_dataset, read_dataset


@partial(pytree_dataclass, aux_fields='provenance', frozen=True)
class Dataset:
    """Paired joint draws from P_{Y,X}.

    Parameters
    ----------
    Y : (N, d_Y) ArrayLike
    X : (N, d_X) ArrayLike
    provenance : dict, optional
        Problem configuration and seed.

    Raises
    ------
    ValueError
        If the arrays are not paired 2D arrays, or contain non-finite values.

    """

    Y: Array
    X: Array
    provenance: Optional[Dict[str, Any]] = None

    def __post_init__(self):
        if self._is_transforming():
            return

        Y = np.asarray(self.Y, dtype=np.float64)
        X = np.asarray(self.X, dtype=np.float64)
        if Y.ndim != 2 or X.ndim != 2 or len(Y) != len(X):
            raise ValueError(f'Y {Y.shape} and X {X.shape} must be paired 2D arrays')
        if not (np.isfinite(Y).all() and np.isfinite(X).all()):
            raise ValueError('dataset contains non-finite values')
        object.__setattr__(self, 'Y', Y)
        object.__setattr__(self, 'X', X)

    def __len__(self):
        return len(self.Y)

    @property
    def d_Y(self):
        return self.Y.shape[1]

    @property
    def d_X(self):
        return self.X.shape[1]

    def subset(self, idx):
        return self.replace(Y=self.Y[idx], X=self.X[idx])

    def split(self, test_fraction, seed):
        """Random (train, test) split, with at least one row in each part."""
        n = len(self)
        if n < 2:
            raise ValueError('cannot split a dataset with fewer than 2 rows')
        n_test = min(max(1, int(round(test_fraction * n))), n - 1)
        perm = np.random.default_rng(seed).permutation(n)
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))

    def save(self, path):
        write_dataset(path, self.Y, self.X, meta=self.provenance)

    @classmethod
    def load(cls, path):
        Y, X, meta = read_dataset(path)
        return cls(Y, X, meta)


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class ManifoldProblem:
    """States on a d_U-dimensional manifold observed through an element-wise cube.

    X = [V; ψ(V)] + γ W with V ~ N(0, I_{d_U}), W ~ N(0, I_{d_X}), and
    Y = X_{1:d_Y}³ + σ ε with ε ~ N(0, I_{d_Y}), where d_X = 5 d_U and d_Y = 2 d_U.

    The embedding ψ_j(v) = (sin(a_j·v) + (b_j·v)² - ‖b_j‖²) / s_j has unit variance
    under v ~ N(0, I), with coefficients a_j, b_j fixed by ``seed``.

    Parameters
    ----------
    d_U : int
        Intrinsic dimension.
    gamma : float, optional
        State noise level γ.
    sigma : float, optional
        Observation noise level σ.
    seed : int, optional
        Seed of the embedding coefficients and the default seed of data draws.

    """

    d_U: int
    gamma: float = 1e-2
    sigma: float = 4e-1
    seed: int = 0

    kind: ClassVar[str] = 'manifold'

    def __post_init__(self):
        if self.d_U < 1:
            raise ValueError(f'd_U = {self.d_U} < 1')
        if self.gamma < 0 or self.sigma < 0:
            raise ValueError(f'gamma = {self.gamma} and sigma = {self.sigma} must be '
                             'nonnegative')

    @property
    def d_X(self):
        return 5 * self.d_U

    @property
    def d_Y(self):
        return 2 * self.d_U

    @property
    def prior_dim(self):
        return self.d_U + self.d_X

    def psi_coeffs(self):
        """Embedding coefficients a, b of shape (d_X - d_U, d_U)."""
        key = random.fold_in(random.PRNGKey(self.seed), 0x9517)
        a_key, b_key = random.split(key)
        shape = (self.d_X - self.d_U, self.d_U)
        a = random.normal(a_key, shape=shape, dtype=jnp.float64) / np.sqrt(self.d_U)
        b = random.normal(b_key, shape=shape, dtype=jnp.float64) / np.sqrt(2 * self.d_U)
        return a, b

    def psi(self, v):
        """Smooth embedding, (N, d_U) to (N, d_X - d_U)."""
        a, b = self.psi_coeffs()
        a2 = (a ** 2).sum(axis=1)
        b2 = (b ** 2).sum(axis=1)
        scale = jnp.sqrt((1 - jnp.exp(-2 * a2)) / 2 + 2 * b2 ** 2)
        return (jnp.sin(v @ a.T) + (v @ b.T) ** 2 - b2) / scale

    def prior_map(self, xi):
        """States from standard normal noise ξ = [V; W] of dimension d_U + d_X."""
        v, w = xi[:, :self.d_U], xi[:, self.d_U:]
        return jnp.concatenate([v, self.psi(v)], axis=1) + self.gamma * w

    @property
    def prior(self):
        return GaussianPushforward(self.prior_map, self.prior_dim)

    def h(self, x):
        return x[:, :self.d_Y] ** 3

    def jacobian(self, x):
        """Jacobian of ``h`` at one state, (d_Y, d_X)."""
        diag = jnp.diag(3 * x[:self.d_Y] ** 2)
        return jnp.concatenate(
            [diag, jnp.zeros((self.d_Y, self.d_X - self.d_Y), dtype=diag.dtype)], axis=1)

    def obs_model(self):
        return ObservationModel(self.h, self.jacobian, self.sigma)

    def to_dict(self):
        return {'kind': self.kind, **to_jsonable(self)}


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class SphericalProblem:
    """Y = ‖X‖² + σ ε with X ~ N(0, I_{d_X}), so the posterior at y concentrates near
    the sphere of radius √y.

    Parameters
    ----------
    d_X : int, optional
    sigma : float, optional
    seed : int, optional
        Default seed of data draws.

    """

    d_X: int = 2
    sigma: float = 2e-1
    seed: int = 0

    kind: ClassVar[str] = 'spherical'

    def __post_init__(self):
        if self.d_X < 1:
            raise ValueError(f'd_X = {self.d_X} < 1')
        if self.sigma < 0:
            raise ValueError(f'sigma = {self.sigma} < 0')

    @property
    def d_Y(self):
        return 1

    @property
    def prior_dim(self):
        return self.d_X

    def prior_map(self, xi):
        return xi

    @property
    def prior(self):
        return GaussianPushforward(self.prior_map, self.prior_dim)

    def h(self, x):
        return (x ** 2).sum(axis=1, keepdims=True)

    def jacobian(self, x):
        return 2 * x[None, :]

    def obs_model(self):
        return ObservationModel(self.h, self.jacobian, self.sigma)

    def to_dict(self):
        return {'kind': self.kind, **to_jsonable(self)}


ManifoldDX10 = partial(ManifoldProblem, 2)
ManifoldDX10.__doc__ = 'Manifold problem with d_X = 10, d_Y = 4, d_U = 2.'

ManifoldDX20 = partial(ManifoldProblem, 4)
ManifoldDX20.__doc__ = 'Manifold problem with d_X = 20, d_Y = 8, d_U = 4.'

ManifoldDX30 = partial(ManifoldProblem, 6)
ManifoldDX30.__doc__ = 'Manifold problem with d_X = 30, d_Y = 12, d_U = 6.'

SphericalFigure = partial(SphericalProblem, 2, 2e-1)
SphericalFigure.__doc__ = 'Spherical problem in the plane with σ = 0.2.'


def _check_num(N):
    if N < 1:
        raise ValueError(f'N = {N} < 1')


def _provenance(p, seed, N):
    return {'problem': p.to_dict(), 'seed': int(seed), 'N': int(N)}


def gen_manifold(p, N, seed=None):
    """Draw N joint samples of a ManifoldProblem, with ``p.seed`` unless given."""
    _check_num(N)
    seed = p.seed if seed is None else seed
    xi_key, eps_key = random.split(random.PRNGKey(seed))

    xi = random.normal(xi_key, shape=(N, p.prior_dim), dtype=jnp.float64)
    X = p.prior_map(xi)
    Y = p.h(X) + p.sigma * random.normal(eps_key, shape=(N, p.d_Y), dtype=jnp.float64)

    return Dataset(Y, X, _provenance(p, seed, N))


def gen_spherical(p, N, seed=None):
    """Draw N joint samples of a SphericalProblem, with ``p.seed`` unless given."""
    _check_num(N)
    seed = p.seed if seed is None else seed
    x_key, eps_key = random.split(random.PRNGKey(seed))

    X = random.normal(x_key, shape=(N, p.d_X), dtype=jnp.float64)
    Y = p.h(X) + p.sigma * random.normal(eps_key, shape=(N, 1), dtype=jnp.float64)

    return Dataset(Y, X, _provenance(p, seed, N))


def problem_from_dict(d):
    """Build a problem from its ``to_dict`` form, dispatching on 'kind'."""
    from cwae.lbm import FlowProblem

    d = dict(d)
    kind = d.pop('kind', None)
    classes = {cls.kind: cls for cls in (ManifoldProblem, SphericalProblem, FlowProblem)}
    if kind not in classes:
        raise ValueError(f'unknown problem kind {kind!r}, not in {tuple(classes)}')
    cls = classes[kind]
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValueError(f'unknown {kind} problem keys: {sorted(unknown)}')
    return cls(**d)


def generate(p, N, seed=None):
    """Dispatch to the generator of the problem kind."""
    from cwae.lbm import gen_flow

    gens = {'manifold': gen_manifold, 'spherical': gen_spherical, 'flow': gen_flow}
    return gens[p.kind](p, N, seed=seed)
