"""Train, sample and score methods on a problem, over seeds and conditioning values.

Each seed draws its own train/test data. Oracle references are computed once per
(seed, conditioning value) and shared by all methods. Independent jobs run on a
thread pool; rows are collected and sorted, so the report does not depend on the
scheduling.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import time
from typing import Any, Dict, List, Optional

import numpy as np

from cwae.configuration import ModelConfig, TrainConfig, PenaltyConfig
from cwae.model import init_model, conditional_sample
from cwae.train import train
from cwae.enkf import Ensemble, enkf_update, lrenkf_update
from cwae.sir import SirConfig, sir_sample
from cwae.metrics import w2_exact, w2_sliced, mse_rel
from cwae.problems import generate, ManifoldProblem, SphericalFigure
from cwae.lbm import FlowProblem
from cwae.report import (RunConfig, ModelSpec, EvalConfig, ExperimentReport, ReportRow,
                         default_rank)
from cwae.util import split_seed


logger = logging.getLogger(__name__)


TABLES = ('table1', 'table2', 'spherical-figure')


@dataclass
class SeedContext:
    """Data, conditioning values and oracle references of one seed."""

    seed: int
    train: Any
    test: Any
    ys: np.ndarray
    truths: Optional[np.ndarray]
    references: List[np.ndarray]


@dataclass
class ExperimentResult:
    """Report of a run, plus the samples of its first seed for plotting."""

    config: RunConfig
    report: ExperimentReport
    contexts: Dict[int, SeedContext] = field(default_factory=dict)
    samples: Dict[str, List[np.ndarray]] = field(default_factory=dict)


def split_data(cfg, seed):
    """Training and held-out pairs of one seed."""
    ev = cfg.eval
    data = generate(cfg.problem, ev.num_train + ev.num_test, seed=split_seed(seed, 'data'))
    return data.subset(slice(0, ev.num_train)), data.subset(slice(ev.num_train, None))


def conditioning_values(cfg, test):
    """Conditioning values and, for held-out ones, the paired true states."""
    if cfg.eval.conditioning is not None:
        ys = np.asarray(cfg.eval.conditioning, dtype=np.float64)
        if ys.shape[1] != cfg.problem.d_Y:
            raise ValueError(f'conditioning values of dimension {ys.shape[1]} do not '
                             f'match d_Y = {cfg.problem.d_Y}')
        return ys, None
    n = min(cfg.eval.num_conditioning, len(test))
    return test.Y[:n], test.X[:n]


def _check_oracle(cfg, method):
    if not hasattr(cfg.problem, 'prior'):
        raise ValueError(f'{method} needs a problem prior, which {cfg.problem.kind} '
                         'problems do not have')


def oracle_samples(cfg, y, seed, num):
    """SIR posterior samples at ``y``."""
    _check_oracle(cfg, 'sir')
    ev = cfg.eval
    sir_cfg = SirConfig(n_particles=ev.sir_particles, seed=seed,
                        tempering=ev.sir_tempering)
    return np.asarray(sir_sample(cfg.problem.prior, cfg.problem.obs_model(), y, sir_cfg,
                                 num_samples=num))


def prepare(cfg, seed, data=None):
    """Data, conditioning values and references of one seed.

    With ``data``, its first ``num_train`` rows are the training pairs and the rest
    are held out, instead of drawing fresh data for the seed.

    """
    tic = time.perf_counter()
    if data is None:
        train_data, test = split_data(cfg, seed)
    else:
        n = cfg.eval.num_train
        if (data.d_Y, data.d_X) != (cfg.problem.d_Y, cfg.problem.d_X):
            raise ValueError(f'dataset dims {(data.d_Y, data.d_X)} do not match the '
                             f'problem {(cfg.problem.d_Y, cfg.problem.d_X)}')
        if len(data) <= n:
            raise ValueError(f'dataset of {len(data)} rows leaves none held out after '
                             f'{n} training rows')
        train_data, test = data.subset(slice(0, n)), data.subset(slice(n, None))
    ys, truths = conditioning_values(cfg, test)

    if cfg.eval.reference == 'sir':
        references = [oracle_samples(cfg, y, split_seed(seed, 'reference', j),
                                     cfg.eval.num_samples)
                      for j, y in enumerate(ys)]
    else:
        if truths is None:
            raise ValueError('truth reference needs held-out conditioning values')
        references = [x[None] for x in truths]

    logger.info('seed %d: data and %d references ready in %.1f s', seed, len(ys),
                time.perf_counter() - tic)
    return SeedContext(seed, train_data, test, ys, truths, references)


def fit(cfg, method, train_data, seed, checkpoint=None):
    """Train a CWAE variant; baselines need no fitting and give None."""
    if method not in ModelConfig.VARIANTS:
        return None
    conf = cfg.model.model_config(method, cfg.problem)
    model = init_model(conf, split_seed(seed, method, 'init'))
    tcfg = cfg.train.replace(seed=split_seed(seed, method, 'train'))
    model, _, _ = train(model, train_data, tcfg, checkpoint=checkpoint)
    return model


def sample(cfg, method, fitted, train_data, y, seed):
    """Draws of one method given ``y``."""
    num = cfg.eval.num_samples
    obs_model = cfg.problem.obs_model()

    if method in ModelConfig.VARIANTS:
        return np.asarray(conditional_sample(fitted, y, num, seed))
    if method == 'enkf':
        return np.asarray(enkf_update(Ensemble(train_data.X), obs_model, y, seed).members)
    if method == 'lrenkf':
        rank = default_rank(cfg.problem) if cfg.eval.rank is None else cfg.eval.rank
        post = lrenkf_update(Ensemble(train_data.X), obs_model, y, rank, seed)
        return np.asarray(post.members)
    if method == 'sir':
        return oracle_samples(cfg, y, seed, num)
    raise ValueError(f'unknown method {method!r}')


def radial_error(samples, y):
    """Mean |‖x‖ - √y| of samples against the circle of a scalar observation."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape != (1,) or y[0] < 0:
        raise ValueError(f'radial error needs a nonnegative scalar y, got {y}')
    return float(np.abs(np.linalg.norm(samples, axis=1) - np.sqrt(y[0])).mean())


def score(cfg, metric, samples, reference, y, seed):
    if metric == 'w2':
        return w2_exact(samples, reference)
    if metric == 'w2_sliced':
        return w2_sliced(samples, reference, n_projections=cfg.eval.n_projections,
                         seed=seed)
    if metric == 'mse_rel_x':
        return mse_rel(samples, reference, phi='identity')
    if metric == 'mse_rel_x2':
        return mse_rel(samples, reference, phi='square')
    if metric == 'radial_error':
        return radial_error(samples, y)
    raise ValueError(f'unknown metric {metric!r}')


def run_method(cfg, ctx, method, config_hash, fitted=None):
    """Fit, sample and score one method on one seed.

    Returns
    -------
    rows : list of ReportRow
        One row per metric, averaged over conditioning values.
    samples : list of numpy.ndarray
        Draws per conditioning value.

    """
    tic = time.perf_counter()
    if fitted is None:
        fitted = fit(cfg, method, ctx.train, ctx.seed)

    samples, scores = [], {m: [] for m in cfg.eval.metrics}
    for j, (y, ref) in enumerate(zip(ctx.ys, ctx.references)):
        x = sample(cfg, method, fitted, ctx.train, y,
                   split_seed(ctx.seed, method, 'sample', j))
        samples.append(x)
        for m in cfg.eval.metrics:
            scores[m].append(score(cfg, m, x, ref, y, split_seed(ctx.seed, m, j)))

    wall_time = time.perf_counter() - tic
    p = cfg.problem
    rows = [ReportRow(method, p.kind, p.d_X, ctx.seed, m, float(np.mean(v)), config_hash,
                      wall_time=wall_time)
            for m, v in scores.items()]
    logger.info('%s seed %d: %s (%.1f s)', method, ctx.seed,
                ', '.join(f'{r.metric} {r.value:.4g}' for r in rows), wall_time)
    return rows, samples


def run_experiment(cfg, jobs=1, strict=False, fitted=None, data=None):
    """Evaluate all methods of a run configuration over its seeds.

    Parameters
    ----------
    cfg : RunConfig
    jobs : int, optional
        Worker threads.
    strict : bool, optional
        Whether a failing job raises, or is recorded as a failure row.
    fitted : dict of str to BlockTriangularModel, optional
        Pretrained models by method, used instead of training.
    data : Dataset, optional
        Fixed data shared by all seeds, see ``prepare``.

    Returns
    -------
    result : ExperimentResult

    """
    fitted = {} if fitted is None else fitted
    config_hash = cfg.hash()
    p = cfg.problem
    report = ExperimentReport()
    result = ExperimentResult(cfg, report)

    for method in cfg.eval.methods:
        if method == 'sir' or cfg.eval.reference == 'sir':
            _check_oracle(cfg, method)

    def guarded(method, seed, fn, *args):
        try:
            return fn(*args)
        except Exception as e:
            if strict:
                raise
            logger.error('%s seed %d failed: %s', method, seed, e)
            report.failure(method, p.kind, p.d_X, seed, config_hash, e)
            return None

    with ThreadPoolExecutor(max_workers=jobs) as ex:
        futs = {seed: ex.submit(guarded, 'reference', seed, prepare, cfg, seed, data)
                for seed in cfg.seeds}
        for seed, f in futs.items():
            ctx = f.result()
            if ctx is not None:
                result.contexts[seed] = ctx

        futs = {(seed, method): ex.submit(guarded, method, seed, run_method, cfg, ctx,
                                          method, config_hash, fitted.get(method))
                for seed, ctx in result.contexts.items()
                for method in cfg.eval.methods}
        for (seed, method), f in futs.items():
            out = f.result()
            if out is None:
                continue
            rows, samples = out
            report.extend(rows)
            if seed == cfg.seeds[0]:
                result.samples[method] = samples

    return result


def table_configs(table, master_seed=0, num_seeds=None, dims=None, quick=False,
                  out='out'):
    """Run configurations of a reproduction target.

    Parameters
    ----------
    table : {'table1', 'table2', 'spherical-figure'}
    master_seed : int, optional
        Seed from which the per-repetition seeds are derived.
    num_seeds : int, optional
        Repetitions. Default is 10 for the tables and 1 for the figure.
    dims : sequence of int, optional
        State dimensions of the table-1 manifold problems, from (10, 20, 30).
    quick : bool, optional
        Shrink training, data and oracle budgets for smoke runs.

    Returns
    -------
    configs : list of RunConfig

    """
    if table not in TABLES:
        raise ValueError(f'table={table!r} not in {TABLES}')
    if num_seeds is None:
        num_seeds = 1 if table == 'spherical-figure' else 10
    seeds = tuple(split_seed(master_seed, table, i) for i in range(num_seeds))

    penalty = PenaltyConfig(kind='mmd', lam=1.)
    if table == 'table1':
        dims = (10, 20, 30) if dims is None else tuple(dims)
        bad = set(dims) - {10, 20, 30}
        if bad:
            raise ValueError(f'table1 dims {sorted(bad)} not in (10, 20, 30)')
        problems = [ManifoldProblem(d // 5) for d in dims]
        train_cfg = TrainConfig(epochs=200, batch_size=128, lr=1e-3, penalty=penalty)
        eval_cfg = EvalConfig(methods=('cwae1', 'cwae2', 'cwae3', 'lrenkf'),
                              metrics=('w2',), num_conditioning=5, num_samples=1000,
                              num_train=1000, num_test=100, reference='sir',
                              sir_particles=100_000)
    elif table == 'table2':
        problems = [FlowProblem()]
        m = problems[0].grid
        train_cfg = TrainConfig(epochs=100, batch_size=128, lr=1e-3, penalty=penalty,
                                physics_grid=m)
        eval_cfg = EvalConfig(methods=('cwae1', 'cwae2', 'cwae3', 'lrenkf'),
                              metrics=('mse_rel_x', 'mse_rel_x2'), num_conditioning=20,
                              num_samples=1000, num_train=5000, num_test=100,
                              reference='truth')
    else:
        problems = [SphericalFigure()]
        train_cfg = TrainConfig(epochs=300, batch_size=128, lr=1e-3, penalty=penalty)
        eval_cfg = EvalConfig(methods=('cwae1', 'cwae2', 'cwae3', 'lrenkf', 'sir'),
                              metrics=('radial_error', 'w2'),
                              conditioning=((1.,), (2.,)), num_samples=1000,
                              num_train=1000, num_test=100, reference='sir',
                              sir_particles=100_000)

    if quick:
        train_cfg = train_cfg.replace(epochs=max(1, train_cfg.epochs // 10))
        eval_cfg = eval_cfg.replace(
            num_samples=min(eval_cfg.num_samples, 200),
            num_train=min(eval_cfg.num_train, 500),
            num_test=min(eval_cfg.num_test, 20),
            num_conditioning=min(eval_cfg.num_conditioning, 2),
            sir_particles=min(eval_cfg.sir_particles, 10_000),
        )

    return [RunConfig(p, model=ModelSpec(), train=train_cfg, eval=eval_cfg, out=out,
                      seeds=seeds)
            for p in problems]
