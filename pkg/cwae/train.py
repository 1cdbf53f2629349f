from functools import partial
import logging
import time

import numpy as np
from jax import jit, random
import jax.numpy as jnp

from cwae.nn import AdamState, forward, backward, adam_step
from cwae.divergence import (KernelPenaltyConfig, median_bandwidth, init_discriminator,
                             disc_step)
from cwae.model import assemble_loss, wae_loss, forward_variant
from cwae.tree_util import tree_digest
from cwae.io_util import write_checkpoint
from cwae.util import split_seed


logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    """Training loss became non-finite or exceeded the divergence threshold.

    Attributes
    ----------
    history : list of dict
        Per-epoch loss records up to the failure.

    """

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


STAGES = ('joint', 'observation', 'conditional')


def trainable(model, stage):
    """Networks updated in a training stage."""
    if stage == 'joint':
        return model
    if stage == 'observation':
        return model.phi_y, model.g_y
    if stage == 'conditional':
        return model.x_decoder, model.x_encoder
    raise ValueError(f'stage={stage!r} not in {STAGES}')


def merge(model, params, stage):
    if stage == 'joint':
        return params
    if stage == 'observation':
        return model.replace(phi_y=params[0], g_y=params[1])
    return model.replace(x_decoder=params[0], x_encoder=params[1])


def stage_loss(params, model, Y, X, ref, cfg, critic, stage='joint'):
    """Objective of a stage as a function of its trainable networks.

    The observation stage fits (Φ_Y, G_Y) as an unconditional WAE with reference
    P_Z; the other stages minimize the joint regularized objective.

    """
    model = merge(model, params, stage)
    if stage == 'observation':
        loss = wae_loss(model.phi_y, model.g_y, Y, ref[:, :model.conf.d_Z], critic,
                        cfg.lam)
    else:
        loss = assemble_loss(model, (Y, X), ref, cfg, critic=critic)
    return loss.total, loss


@partial(jit, static_argnames='stage')
def _stage_grad(params, model, Y, X, ref, cfg, critic, stage):
    return backward(partial(stage_loss, stage=stage), params, model, Y, X, ref, cfg,
                    critic, has_aux=True)


def stage_latents(model, Y, X, stage):
    """Encoded latents that the stage penalizes."""
    if stage == 'observation':
        return forward(model.phi_y, Y)
    z_hat, _, u_hat, _ = forward_variant(model, (Y, X))
    return jnp.concatenate([z_hat, u_hat], axis=1)


def _check_divergence(loss, cfg, history, where):
    total = float(loss.total)
    if not np.isfinite(total) or total > cfg.diverge_threshold:
        raise TrainingDivergedError(f'training diverged at {where}: total loss '
                                    f'{total:.4g}', history)


def _mean_records(records):
    keys = records[0].keys()
    return {k: (None if records[0][k] is None else float(np.mean([r[k] for r in records])))
            for k in keys}


def _run_stage(model, dataset, cfg, stage, history):
    N = len(dataset)
    if N < 2:
        raise ValueError(f'need at least 2 data pairs, got {N}')
    B = min(cfg.batch_size, N)
    num_batches = N // B

    Y_all = jnp.asarray(dataset.Y)
    X_all = jnp.asarray(dataset.X)
    d_ref = model.conf.d_Z if stage == 'observation' else model.latent.dim

    shuffle_key = random.PRNGKey(split_seed(cfg.seed, stage, 'shuffle'))
    ref_key = random.PRNGKey(split_seed(cfg.seed, stage, 'reference'))

    params = trainable(model, stage)
    opt = AdamState.init(params, lr=cfg.lr)

    pen = cfg.penalty
    disc = None
    if pen.kind == 'js':
        disc = init_discriminator(d_ref, widths=pen.disc_widths, lr=pen.disc_lr,
                                  seed=split_seed(cfg.seed, stage, 'discriminator'),
                                  activation=model.conf.activation)

    for epoch in range(cfg.epochs):
        if pen.kind == 'mmd':
            head = slice(0, min(N, 512))
            q = stage_latents(model, Y_all[head], X_all[head], stage)
            p = model.latent.sample(random.fold_in(ref_key, 2**31 - 1 - epoch),
                                    q.shape[0])[:, :d_ref]
            critic = KernelPenaltyConfig.from_scales(
                pen.bandwidth_scales, median_bandwidth(q, p), unbiased=pen.unbiased)

        perm = random.permutation(random.fold_in(shuffle_key, epoch), N)
        records = []
        for b in range(num_batches):
            idx = perm[b * B:(b + 1) * B]
            Y, X = Y_all[idx], X_all[idx]
            ref = model.latent.sample(random.fold_in(ref_key, epoch * num_batches + b), B)

            disc_loss = None
            if disc is not None:
                q = stage_latents(model, Y, X, stage)
                for _ in range(pen.disc_steps):
                    disc, disc_loss = disc_step(disc, q, ref[:, :d_ref])
                critic = disc

            (_, loss), grads = _stage_grad(params, model, Y, X, ref, cfg, critic,
                                           stage=stage)
            _check_divergence(loss, cfg, history, f'{stage} epoch {epoch} batch {b}')

            try:
                params, opt = adam_step(opt, params, grads)
            except FloatingPointError as e:
                raise TrainingDivergedError(str(e), history) from e
            model = merge(model, params, stage)

            record = loss.to_dict()
            record['disc_loss'] = disc_loss
            records.append(record)

        record = {'stage': stage, 'epoch': epoch, **_mean_records(records)}
        history.append(record)
        logger.info('%s epoch %d: total %.5g, recon_x %.4g, recon_y %.4g, penalty %.4g'
                    '%s', stage, epoch, record['total'], record['recon_x'],
                    record['recon_y'], record['penalty'],
                    '' if record['physics'] is None else
                    f', physics {record["physics"]:.4g}')

    return model


def train(model, dataset, cfg, checkpoint=None):
    """Fit a model by minibatch Adam on the regularized reconstruction objective.

    Each epoch visits a fresh permutation of the data in full minibatches, with fresh
    reference draws per minibatch. For the MMD penalty the kernel bandwidths are
    rescaled by the median heuristic once per epoch; for the Jensen-Shannon penalty,
    the discriminator takes ``disc_steps`` steps before every generator step. The
    'sequential' schedule runs ``cfg.epochs`` epochs of the observation stage, then
    as many of the conditional stage.

    Parameters
    ----------
    model : BlockTriangularModel
        Initial model.
    dataset : Dataset
        Training pairs.
    cfg : TrainConfig
    checkpoint : str or Path, optional
        Where to write the final parameters, with a JSON sidecar of the variant,
        dimensions, configuration and loss history.

    Returns
    -------
    model : BlockTriangularModel
    history : list of dict
        Per-epoch mean loss terms.
    report : dict
        Final loss terms, wall time, and parameter hash of the run.

    Raises
    ------
    TrainingDivergedError
        If the loss exceeds ``cfg.diverge_threshold`` or becomes non-finite.
    ValueError
        If the dataset does not match the model.

    """
    conf = model.conf
    if (dataset.d_Y, dataset.d_X) != (conf.d_Y, conf.d_X):
        raise ValueError(f'dataset dims (d_Y, d_X) = {(dataset.d_Y, dataset.d_X)} do not '
                         f'match model {(conf.d_Y, conf.d_X)}')

    tic = time.perf_counter()
    history = []
    stages = ('joint',) if cfg.schedule == 'joint' else ('observation', 'conditional')
    for stage in stages:
        model = _run_stage(model, dataset, cfg, stage, history)
    wall_time = time.perf_counter() - tic

    digest = tree_digest(model)
    report = {
        'variant': conf.variant,
        'epochs': cfg.epochs,
        'seed': cfg.seed,
        'wall_time': wall_time,
        'param_hash': digest,
        'final': history[-1] if history else None,
    }

    if checkpoint is not None:
        meta = {
            'model': conf.to_dict(),
            'train': cfg.to_dict(),
            'seed': cfg.seed,
            'param_hash': digest,
            'loss_history': history,
        }
        write_checkpoint(checkpoint, model, meta=meta)
        logger.info('checkpoint written to %s', checkpoint)

    return model, history, report
