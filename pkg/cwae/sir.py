from functools import partial
import logging
from typing import Callable

import numpy as np
from jax import random
import jax.numpy as jnp
from jax.scipy.special import logsumexp

from cwae.tree_util import pytree_dataclass


logger = logging.getLogger(__name__)


class DegeneratePosteriorError(FloatingPointError):
    """Importance weights collapsed onto fewer than ``MIN_ESS`` effective particles."""


MIN_ESS = 10


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class SirConfig:
    """Sequential importance resampling settings.

    Parameters
    ----------
    n_particles : int, optional
        Number of particles, at least 100.
    seed : int, optional
    resample_threshold : float, optional
        Resample when the effective sample size drops below this fraction of
        ``n_particles``, in (0, 1].
    tempering : bool, optional
        Whether to assimilate the likelihood in adaptive tempering stages with
        rejuvenation moves, or in one importance step.
    n_moves : int, optional
        Crank-Nicolson moves per tempering stage.
    pcn_step : float, optional
        Initial Crank-Nicolson step size in (0, 1].
    target_ess : float, optional
        Effective sample size fraction that tempering stages aim at.

    """

    n_particles: int = 100_000
    seed: int = 0
    resample_threshold: float = 0.5
    tempering: bool = True
    n_moves: int = 5
    pcn_step: float = 0.5
    target_ess: float = 0.5

    def __post_init__(self):
        if self.n_particles < 100:
            raise ValueError(f'n_particles = {self.n_particles} < 100')
        if not 0 < self.resample_threshold <= 1:
            raise ValueError(f'resample_threshold = {self.resample_threshold} not in '
                             '(0, 1]')
        if not 0 < self.pcn_step <= 1:
            raise ValueError(f'pcn_step = {self.pcn_step} not in (0, 1]')
        if not 0 < self.target_ess < 1:
            raise ValueError(f'target_ess = {self.target_ess} not in (0, 1)')
        if self.n_moves < 0:
            raise ValueError(f'n_moves = {self.n_moves} < 0')


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class GaussianPushforward:
    """Prior given as the pushforward of N(0, I) on ℝ^dim by ``prior_map``.

    Parameters
    ----------
    prior_map : callable
        Batched map from (N, dim) standard normal draws to (N, d_X) states.
    dim : int
        Dimension of the standard normal noise.

    """

    prior_map: Callable
    dim: int

    def sample(self, key, num):
        xi = random.normal(key, shape=(num, self.dim), dtype=jnp.float64)
        return self.prior_map(xi)


def normalize(logw):
    """Normalized weights from log-weights, rescaled by the maximum first."""
    logw = logw - logw.max()
    w = jnp.exp(logw)
    return w / w.sum()


def ess(w):
    """Effective sample size 1 / Σ w², in [1, N] for normalized weights."""
    return float(1 / (w ** 2).sum())


def multinomial_resample(key, w, num):
    """Indices of ``num`` multinomial draws with probabilities ``w``."""
    return random.choice(key, w.shape[0], shape=(num,), replace=True, p=w)


def _loglik(obs_model, y, x):
    r = y - obs_model.h(x)
    return - (r ** 2).sum(axis=1) / (2 * obs_model.noise_std ** 2)


def _check_ess(w, stage):
    n_eff = ess(w)
    if not np.isfinite(n_eff) or n_eff < MIN_ESS:
        raise DegeneratePosteriorError(f'effective sample size {n_eff:.3g} < {MIN_ESS} '
                                       f'at {stage}')
    return n_eff


def _temper_increment(ll, logw, beta, target):
    """Largest tempering increment keeping the ESS fraction at ``target``."""
    N = ll.shape[0]

    def ess_frac(delta):
        lw = logw + delta * ll
        return float(jnp.exp(2 * logsumexp(lw) - logsumexp(2 * lw))) / N

    hi = 1 - beta
    if ess_frac(hi) >= target:
        return hi
    lo = 0.
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ess_frac(mid) >= target:
            lo = mid
        else:
            hi = mid
    return max(lo, 1e-12)


def _pcn_moves(key, xi, ll, beta, prior, obs_model, y, step, n_moves):
    """Preconditioned Crank-Nicolson moves invariant for N(0, I) L(ξ)^β."""
    rho = np.sqrt(1 - step ** 2)
    for _ in range(n_moves):
        key, prop_key, acc_key = random.split(key, num=3)
        prop = rho * xi + step * random.normal(prop_key, shape=xi.shape, dtype=xi.dtype)
        ll_prop = _loglik(obs_model, y, prior.prior_map(prop))
        accept = jnp.log(random.uniform(acc_key, shape=ll.shape)) < beta * (ll_prop - ll)
        xi = jnp.where(accept[:, None], prop, xi)
        ll = jnp.where(accept, ll_prop, ll)

        rate = float(accept.mean())
        if rate < 0.2:
            step *= 0.7
            rho = np.sqrt(1 - step ** 2)
        elif rate > 0.5 and step < 1:
            step = min(1., step * 1.3)
            rho = np.sqrt(1 - step ** 2)
    return xi, ll, step


def sir_sample(prior, obs_model, y, cfg, num_samples=None, max_stages=1000):
    """Posterior samples by (tempered) sequential importance resampling.

    Importance weights are ∝ exp(-‖y - h(x)‖² / (2σ²)). With tempering, the
    likelihood is introduced in stages chosen by bisection on the effective sample
    size, particles are resampled multinomially when the ESS drops below
    ``resample_threshold``, and rejuvenated by Crank-Nicolson moves on the standard
    normal noise of the prior. The final weighted particles are resampled to equal
    weights.

    Parameters
    ----------
    prior : GaussianPushforward
    obs_model : ObservationModel
    y : (d_Y,) ArrayLike
    cfg : SirConfig
    num_samples : int, optional
        Number of returned draws. Default is ``cfg.n_particles``.
    max_stages : int, optional
        Maximum number of tempering stages.

    Returns
    -------
    samples : (num_samples, d_X) jax.Array

    Raises
    ------
    DegeneratePosteriorError
        If the effective sample size falls below 10.

    """
    N = cfg.n_particles
    M = N if num_samples is None else num_samples
    y = jnp.atleast_1d(jnp.asarray(y, dtype=jnp.float64))

    key = random.PRNGKey(cfg.seed)
    key, xi_key = random.split(key)
    xi = random.normal(xi_key, shape=(N, prior.dim), dtype=jnp.float64)
    ll = _loglik(obs_model, y, prior.prior_map(xi))

    if not cfg.tempering:
        w = normalize(ll)
        n_eff = _check_ess(w, 'importance step')
        logger.info('SIR ESS %.1f of %d', n_eff, N)
        idx = multinomial_resample(key, w, M)
        return prior.prior_map(xi[idx])

    beta = 0.
    logw = jnp.zeros(N, dtype=jnp.float64)
    step = cfg.pcn_step
    stage = 0
    while beta < 1:
        stage += 1
        if stage > max_stages:
            raise DegeneratePosteriorError(f'tempering did not reach β = 1 in '
                                           f'{max_stages} stages (β = {beta:.3g})')

        delta = _temper_increment(ll, logw, beta, cfg.target_ess)
        beta = min(1., beta + delta)
        logw = logw + delta * ll
        w = normalize(logw)
        n_eff = _check_ess(w, f'tempering stage {stage}, β = {beta:.4g}')

        key, res_key, move_key = random.split(key, num=3)
        if n_eff < cfg.resample_threshold * N:
            idx = multinomial_resample(res_key, w, N)
            xi, ll = xi[idx], ll[idx]
            logw = jnp.zeros(N, dtype=jnp.float64)

        xi, ll, step = _pcn_moves(move_key, xi, ll, beta, prior, obs_model, y, step,
                                  cfg.n_moves)
        logger.debug('SIR stage %d: β = %.4g, ESS = %.1f, pCN step = %.3g',
                     stage, beta, n_eff, step)

    logger.info('SIR reached β = 1 in %d stages', stage)
    w = normalize(logw)
    _check_ess(w, 'final resampling')
    idx = multinomial_resample(key, w, M)
    return prior.prior_map(xi[idx])
