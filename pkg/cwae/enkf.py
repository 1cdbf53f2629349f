from functools import partial
import logging
from typing import Callable, Optional

import numpy as np
from jax import Array, jit, jacfwd, vmap, random, lax
import jax.numpy as jnp

from cwae.tree_util import pytree_dataclass
from cwae.util import chunk_split


logger = logging.getLogger(__name__)


RIDGE = 1e-8
COND_MAX = 1e12


@partial(pytree_dataclass, aux_fields=('seed', 'generation'), frozen=True)
class Ensemble:
    """State ensemble.

    Parameters
    ----------
    members : (N, d_X) ArrayLike
        Ensemble members, N >= 2, all finite.
    seed : int or None, optional
        Seed of the update that produced this ensemble.
    generation : int, optional
        Number of updates applied since the prior.

    Raises
    ------
    ValueError
        If there are fewer than 2 members or any entry is not finite.

    """

    members: Array
    seed: Optional[int] = None
    generation: int = 0

    def __post_init__(self):
        if self._is_transforming():
            return

        members = jnp.asarray(self.members, dtype=jnp.float64)
        if members.ndim == 1:
            members = members[:, None]
        if members.ndim != 2 or members.shape[0] < 2:
            raise ValueError(f'ensemble needs shape (N >= 2, d_X), got {members.shape}')
        if not bool(jnp.isfinite(members).all()):
            raise ValueError('ensemble members must be finite')
        object.__setattr__(self, 'members', members)

    @property
    def size(self):
        return self.members.shape[0]

    @property
    def dim(self):
        return self.members.shape[1]

    def mean(self):
        return self.members.mean(axis=0)

    def cov(self):
        A = self.members - self.mean()
        return A.T @ A / (self.size - 1)


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class ObservationModel:
    """Observation y = h(x) + σ ε with ε ~ N(0, I).

    Parameters
    ----------
    h : callable
        Batched forward map, (N, d_X) to (N, d_Y).
    jacobian : callable or None
        Jacobian of h at one state, (d_X,) to (d_Y, d_X).
    noise_std : float
        Observation noise standard deviation σ > 0.

    """

    h: Callable
    jacobian: Optional[Callable]
    noise_std: float

    def __post_init__(self):
        if not self.noise_std > 0:
            raise ValueError(f'noise_std = {self.noise_std} must be positive')

    @classmethod
    def from_function(cls, h, noise_std):
        """With the Jacobian by forward-mode autodiff of ``h``."""
        def jacobian(x):
            return jacfwd(lambda x: h(x[None])[0])(x)
        return cls(h, jacobian, noise_std)

    def sample(self, x, key):
        """Noisy observations of states ``x``."""
        hx = self.h(jnp.asarray(x))
        return hx + self.noise_std * random.normal(key, shape=hx.shape, dtype=hx.dtype)


def _check_obs(prior, obs_model, y):
    y = jnp.atleast_1d(jnp.asarray(y, dtype=jnp.float64))
    hx = obs_model.h(prior.members[:1])
    if y.shape != hx.shape[1:]:
        raise ValueError(f'y shape {y.shape} does not match h output {hx.shape[1:]}')
    return y


def _solve_innovation(C, rhs):
    """Solve C w = rhs, adding a ridge to an ill-conditioned C."""
    cond = float(jnp.linalg.cond(C))
    if not np.isfinite(cond) or cond > COND_MAX:
        logger.warning('innovation covariance ill-conditioned (cond = %.3g), adding '
                       'ridge %g', cond, RIDGE)
        C = C + RIDGE * jnp.eye(C.shape[0], dtype=C.dtype)
    return jnp.linalg.solve(C, rhs)


def _perturbed_update(X, HX, obs, C_extra):
    """Perturbed-observation EnKF increments of states X from predicted observations
    HX and perturbed observations obs, with C = cov(HX) + C_extra."""
    N = X.shape[0]
    A = X - X.mean(axis=0)
    B = HX - HX.mean(axis=0)
    C = B.T @ B / (N - 1) + C_extra
    cross = A.T @ B / (N - 1)
    W = _solve_innovation(C, (obs - HX).T)
    return (cross @ W).T


def enkf_update(prior, obs_model, y, seed):
    """Stochastic ensemble Kalman update with perturbed observations.

    Parameters
    ----------
    prior : Ensemble
    obs_model : ObservationModel
    y : (d_Y,) ArrayLike
        Observation to condition on.
    seed : int
        Seed of the observation perturbations.

    Returns
    -------
    posterior : Ensemble
        Same size as the prior.

    """
    y = _check_obs(prior, obs_model, y)
    X = prior.members
    HX = obs_model.h(X)
    sigma = obs_model.noise_std

    eps = random.normal(random.PRNGKey(seed), shape=HX.shape, dtype=HX.dtype)
    obs = y + sigma * eps
    C_extra = sigma**2 * jnp.eye(HX.shape[1], dtype=HX.dtype)

    X = X + _perturbed_update(X, HX, obs, C_extra)
    return Ensemble(X, seed=seed, generation=prior.generation + 1)


def psd_sqrt(cov):
    """Symmetric square root and its pseudo-inverse of a PSD matrix."""
    lam, Q = jnp.linalg.eigh(cov)
    tol = lam.max() * cov.shape[0] * jnp.finfo(cov.dtype).eps
    lam = jnp.where(lam > tol, lam, 0)
    sqrt = (Q * jnp.sqrt(lam)) @ Q.T
    inv_sqrt = (Q * jnp.where(lam > 0, 1 / jnp.sqrt(jnp.where(lam > 0, lam, 1)), 0)) @ Q.T
    return sqrt, inv_sqrt


@partial(jit, static_argnums=(0, 4))
def _lis_hessians(jacobian, X, Lx, sigma, chunk_size):
    """Ensemble averages of GᵀG and GGᵀ, G = J(x) Lx / σ, accumulated in chunks."""
    N, d_X = X.shape
    remainder, chunks = chunk_split(N, chunk_size, X)

    def accumulate(carry, Xc):
        HX, HY = carry
        G = vmap(jacobian)(Xc) @ Lx / sigma
        HX = HX + jnp.einsum('nij,nik->jk', G, G)
        HY = HY + jnp.einsum('nij,nkj->ik', G, G)
        return (HX, HY), None

    d_Y = jacobian(X[0]).shape[0]
    carry = (jnp.zeros((d_X, d_X), dtype=X.dtype), jnp.zeros((d_Y, d_Y), dtype=X.dtype))
    if remainder is not None:
        carry, _ = accumulate(carry, remainder[0])
    carry, _ = lax.scan(accumulate, carry, chunks[0])

    HX, HY = carry
    return HX / N, HY / N


def _top_eigvecs(H, r):
    lam, V = jnp.linalg.eigh(H)
    return V[:, ::-1][:, :r]


def lrenkf_update(prior, obs_model, y, rank, seed, chunk_size=64):
    """Low-rank ensemble Kalman update in a likelihood-informed subspace.

    The state is whitened by the prior ensemble covariance, the observation by the
    noise level. The ensemble average of the whitened Jacobian outer products gives
    the top-``rank`` state and observation directions, and the perturbed-observation
    update is computed in these reduced coordinates and lifted back.

    Parameters
    ----------
    prior : Ensemble
    obs_model : ObservationModel
        Must have a Jacobian.
    y : (d_Y,) ArrayLike
    rank : int
        Subspace dimension r, clamped to min(d_X, d_Y).
    seed : int
        Seed of the observation perturbations, same policy as ``enkf_update``.
    chunk_size : int or None, optional
        Ensemble members per chunk of Jacobian evaluations.

    Returns
    -------
    posterior : Ensemble

    Raises
    ------
    ValueError
        If the observation model has no Jacobian or rank < 1.

    """
    if obs_model.jacobian is None:
        raise ValueError('lrenkf_update needs an observation model with a Jacobian')
    if rank < 1:
        raise ValueError(f'rank = {rank} < 1')

    y = _check_obs(prior, obs_model, y)
    X = prior.members
    HX = obs_model.h(X)
    sigma = obs_model.noise_std
    d_X, d_Y = X.shape[1], HX.shape[1]

    r_max = min(d_X, d_Y)
    if rank > r_max:
        logger.warning('rank %d clamped to min(d_X, d_Y) = %d', rank, r_max)
        rank = r_max

    Lx, Lx_inv = psd_sqrt(prior.cov())
    HXX, HYY = _lis_hessians(obs_model.jacobian, X, Lx, sigma, chunk_size)
    V = _top_eigvecs(HXX, rank)
    U = _top_eigvecs(HYY, rank)

    xi = (X - X.mean(axis=0)) @ Lx_inv @ V
    omega = HX / sigma @ U
    eps = random.normal(random.PRNGKey(seed), shape=HX.shape, dtype=HX.dtype)
    obs = (y / sigma + eps) @ U

    dxi = _perturbed_update(xi, omega, obs, jnp.eye(rank, dtype=X.dtype))
    X = X + dxi @ (Lx @ V).T

    logger.debug('lrenkf rank %d, subspace spectrum %s', rank,
                 np.asarray(jnp.linalg.eigvalsh(HXX)[::-1][:rank]))
    return Ensemble(X, seed=seed, generation=prior.generation + 1)
