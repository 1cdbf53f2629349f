"""Command-line interface: ``cwae <subcommand>`` or ``python -m cwae <subcommand>``.

Exit codes are 0 on success, 2 on validation errors, 3 on numerical failures, and 4
on IO errors.
"""

import argparse
import csv
import itertools
import logging
from pathlib import Path
import sys

import numpy as np

from cwae.configuration import ModelConfig
from cwae.problems import (ManifoldDX10, ManifoldDX20, ManifoldDX30, SphericalFigure,
                           Dataset, generate)
from cwae.lbm import FlowProblem, full_scale
from cwae.model import init_model, conditional_sample
from cwae.train import train
from cwae.io_util import file_digest, load_params, read_sidecar
from cwae.report import RunConfig, ExperimentReport, METHODS, METRICS
from cwae.experiment import TABLES, run_experiment, table_configs, split_data
from cwae.tree_util import tree_digest
from cwae.util import split_seed, canonical_json


logger = logging.getLogger('cwae')


PRESETS = {
    'manifold-dx10': ManifoldDX10,
    'manifold-dx20': ManifoldDX20,
    'manifold-dx30': ManifoldDX30,
    'spherical': SphericalFigure,
    'flow': FlowProblem,
    'flow-full': full_scale,
}

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

# sweep cells train for epochs // SWEEP_EPOCH_DIVISOR unless --epochs is given
SWEEP_EPOCH_DIVISOR = 10


def load_config(args):
    """Run configuration from ``--config``, else from ``--preset``, with ``--out``
    and ``--seed`` applied."""
    if args.config is not None:
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig(PRESETS[args.preset]())
    if args.out is not None:
        cfg = cfg.replace(out=str(args.out))
    if args.seed is not None:
        cfg = cfg.replace(seeds=(args.seed,))
    return cfg


def out_dir(args, cfg):
    path = Path(cfg.out if args.out is None else args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_dataset(args, cfg, seed):
    if args.data is not None:
        return Dataset.load(args.data)
    return split_data(cfg, seed)[0]


def load_model(path):
    """Model from a checkpoint and the configuration in its sidecar."""
    meta = read_sidecar(path)
    if meta is None or 'model' not in meta:
        raise OSError(f'{path}: missing checkpoint sidecar with the model configuration')
    conf = ModelConfig.from_dict(meta['model'])
    return load_params(path, init_model(conf, 0))


def write_history(path, history):
    fields = ('stage', 'epoch', 'recon_x', 'recon_y', 'penalty', 'physics', 'total',
              'disc_loss')
    with open(path, 'w', encoding='utf-8', newline='') as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator='\n')
        w.writeheader()
        for record in history:
            w.writerow({k: '' if record.get(k) is None else record[k] for k in fields})


def cmd_generate(args):
    cfg = load_config(args)
    seed = cfg.seeds[0]
    N = cfg.eval.num_train + cfg.eval.num_test if args.n is None else args.n

    data = generate(cfg.problem, N, seed=seed)
    path = out_dir(args, cfg) / (args.name or f'{cfg.problem.kind}_dX{cfg.problem.d_X}_'
                                              f'seed{seed}.cwds')
    data.save(path)

    digest = file_digest(path)
    logger.info('wrote %d pairs (d_Y = %d, d_X = %d) to %s', len(data), data.d_Y,
                data.d_X, path)
    print(path, digest)
    return path, digest


def cmd_train(args):
    cfg = load_config(args)
    seed = cfg.seeds[0]
    data = _load_dataset(args, cfg, seed)

    conf = cfg.model.model_config(args.variant, cfg.problem)
    model = init_model(conf, split_seed(seed, args.variant, 'init'))
    tcfg = cfg.train.replace(seed=split_seed(seed, args.variant, 'train'))
    if args.epochs is not None:
        tcfg = tcfg.replace(epochs=args.epochs)

    stem = out_dir(args, cfg) / f'{args.variant}_seed{seed}'
    checkpoint = stem.with_suffix('.ckpt')
    model, history, report = train(model, data, tcfg, checkpoint=checkpoint)
    write_history(stem.with_name(stem.name + '_loss.csv'), history)

    print(checkpoint, report['param_hash'])
    return checkpoint, report


def _parse_y(values):
    return np.asarray([float(v) for v in ','.join(values).split(',') if v.strip()])


def cmd_sample(args):
    model = load_model(args.checkpoint)
    y = _parse_y(args.y)
    seed = 0 if args.seed is None else args.seed

    x = np.asarray(conditional_sample(model, y, args.n, seed))
    path = Path('.' if args.out is None else args.out)
    path.mkdir(parents=True, exist_ok=True)
    path = path / 'samples.npy'
    np.save(path, x)

    logger.info('wrote %d samples at y = %s to %s', len(x), y, path)
    print(path)
    return path


def cmd_evaluate(args):
    cfg = load_config(args)

    fitted = {}
    for ckpt in args.checkpoint or ():
        model = load_model(ckpt)
        fitted[model.conf.variant] = model
        logger.info('loaded %s from %s (%s)', model.conf.variant, ckpt,
                    tree_digest(model)[:16])

    ev = cfg.eval
    methods = tuple(fitted) + tuple(args.method or ())
    if methods:
        ev = ev.replace(methods=methods)
    if args.metrics:
        ev = ev.replace(metrics=tuple(args.metrics))
    if args.y:
        ev = ev.replace(conditioning=tuple(tuple(_parse_y([v])) for v in args.y))
    cfg = cfg.replace(eval=ev)

    data = None if args.data is None else Dataset.load(args.data)
    result = run_experiment(cfg, jobs=args.jobs, strict=True, fitted=fitted, data=data)

    out = out_dir(args, cfg)
    result.report.write(out, args.name)
    cfg.save(out / f'{args.name}_config.json')
    print(out / f'{args.name}.csv')
    return result


def _plots(table, results, out):
    from cwae.vis_util import savefig, spherical_panels, bar_chart, flow_panels

    report = ExperimentReport([r for res in results for r in res.report.rows])
    summary = report.aggregate()

    paths = []
    if table == 'spherical-figure':
        res = results[0]
        ctx = next(iter(res.contexts.values()), None)
        if ctx is not None and res.samples:
            ys = [float(y[0]) for y in ctx.ys]
            fig, _ = spherical_panels(res.samples, ys, reference=ctx.references)
            paths.append(savefig(fig, out / 'spherical.svg'))
        return paths

    for metric in sorted({r['metric'] for r in summary}):
        fig, _ = bar_chart(summary, metric)
        paths.append(savefig(fig, out / f'{table}_{metric}.svg'))

    if table == 'table2':
        res = results[0]
        ctx = next(iter(res.contexts.values()), None)
        if ctx is not None and ctx.truths is not None and res.samples:
            m = res.config.problem.grid
            means = {method: s[0].mean(axis=0).reshape(2, m, m)
                     for method, s in sorted(res.samples.items())}
            fig, _ = flow_panels(ctx.truths[0].reshape(2, m, m), means)
            paths.append(savefig(fig, out / f'{table}_fields.svg'))

    return paths


def cmd_reproduce(args):
    master = 0 if args.seed is None else args.seed
    out = Path('out' if args.out is None else args.out)
    configs = table_configs(args.table, master_seed=master, num_seeds=args.num_seeds,
                            dims=args.dims, quick=args.quick, out=str(out))

    results = []
    for cfg in configs:
        logger.info('%s: %s problem, d_X = %d, %d seeds, config %s', args.table,
                    cfg.problem.kind, cfg.problem.d_X, len(cfg.seeds), cfg.hash())
        cfg.save(out / f'{args.table}_dX{cfg.problem.d_X}_config.json')
        results.append(run_experiment(cfg, jobs=args.jobs, strict=False))

    report = ExperimentReport([r for res in results for r in res.report.rows])
    report.write(out, args.table)
    _plots(args.table, results, out)

    print(out / f'{args.table}.csv')
    return report


def sweep_grid(cfg, lams=None, lrs=None, widths=None, epochs=None):
    """Run configurations of all (λ, learning rate, widths) cells.

    Unset axes keep the value of ``cfg``, and so does the epoch budget of every cell
    unless ``epochs`` is given.

    Raises
    ------
    ValueError
        If the grid is empty.

    """
    lams = [cfg.train.lam] if lams is None else list(lams)
    lrs = [cfg.train.lr] if lrs is None else list(lrs)
    widths = [cfg.model.widths] if widths is None else [tuple(w) for w in widths]

    cells = []
    for lam, lr, w in itertools.product(lams, lrs, widths):
        train_cfg = cfg.train.replace(lr=lr, penalty=cfg.train.penalty.replace(lam=lam))
        if epochs is not None:
            train_cfg = train_cfg.replace(epochs=epochs)
        cells.append(cfg.replace(train=train_cfg, model=cfg.model.replace(widths=w)))
    if not cells:
        raise ValueError('empty sweep grid')
    return cells


def _parse_widths(s):
    return tuple(int(w) for w in s.split(','))


def cmd_sweep(args):
    cfg = load_config(args)
    cfg = cfg.replace(eval=cfg.eval.replace(methods=(args.variant,)))
    metric = cfg.eval.metrics[0]
    data = None if args.data is None else Dataset.load(args.data)

    epochs = args.epochs
    if epochs is None:
        epochs = max(1, cfg.train.epochs // SWEEP_EPOCH_DIVISOR)
    cells = sweep_grid(cfg, args.lam, args.lr, args.widths, epochs=epochs)
    logger.info('sweeping %d cells with %d epochs each', len(cells), epochs)
    scored = []
    for i, cell in enumerate(cells):
        result = run_experiment(cell, jobs=args.jobs, strict=False, data=data)
        values = [r.value for r in result.report.rows
                  if r.metric == metric and np.isfinite(r.value)]
        value = float(np.mean(values)) if values else float('inf')
        logger.info('cell %d/%d: lam %g, lr %g, widths %s: %s %.4g', i + 1, len(cells),
                    cell.train.lam, cell.train.lr, cell.model.widths, metric, value)
        scored.append((value, i, cell))
    scored.sort(key=lambda t: (t[0], t[1]))

    out = out_dir(args, cfg)
    fields = ('rank', 'lam', 'lr', 'widths', 'epochs', 'metric', 'value', 'config_hash')
    with open(out / 'sweep.csv', 'w', encoding='utf-8', newline='') as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator='\n')
        w.writeheader()
        for rank, (value, _, cell) in enumerate(scored, start=1):
            w.writerow({'rank': rank, 'lam': cell.train.lam, 'lr': cell.train.lr,
                        'widths': canonical_json(cell.model.widths),
                        'epochs': cell.train.epochs, 'metric': metric,
                        'value': repr(value), 'config_hash': cell.hash()})

    # the winner is persisted with the full epoch budget
    best = scored[0][2]
    best = best.replace(train=best.train.replace(epochs=cfg.train.epochs))
    best.save(out / 'best_config.json')
    print(out / 'sweep.csv')
    return scored


def _common():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=None,
                        help='run configuration JSON')
    common.add_argument('--preset', choices=sorted(PRESETS), default='manifold-dx10',
                        help='problem preset when no --config is given')
    common.add_argument('--seed', type=int, default=None,
                        help='seed, or master seed of reproduce')
    common.add_argument('--out', type=Path, default=None, help='output directory')
    common.add_argument('--jobs', type=int, default=1, help='worker threads')
    common.add_argument('--quiet', action='store_true', help='only log warnings')
    return common


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(
        prog='cwae', description='Conditional Wasserstein autoencoders and baselines.')
    sub = parser.add_subparsers(dest='cmd', required=True)

    p = sub.add_parser('generate', parents=[common], help='write a dataset file')
    p.add_argument('--n', type=int, default=None, help='number of pairs')
    p.add_argument('--name', default=None, help='dataset file name')
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser('train', parents=[common], help='train a CWAE variant')
    p.add_argument('--data', type=Path, default=None, help='dataset file')
    p.add_argument('--variant', choices=ModelConfig.VARIANTS, default='cwae2')
    p.add_argument('--epochs', type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('sample', parents=[common], help='conditional samples')
    p.add_argument('--checkpoint', type=Path, required=True)
    p.add_argument('--y', nargs='+', required=True,
                   help='conditioning value, comma or space separated')
    p.add_argument('--n', type=int, default=1000)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser('evaluate', parents=[common], help='score methods')
    p.add_argument('--data', type=Path, default=None, help='dataset file')
    p.add_argument('--checkpoint', type=Path, nargs='+', default=None)
    p.add_argument('--method', nargs='+', choices=METHODS, default=None)
    p.add_argument('--metrics', nargs='+', choices=METRICS, default=None)
    p.add_argument('--y', action='append', default=None,
                   help='comma separated conditioning value, repeatable')
    p.add_argument('--name', default='evaluate', help='report file stem')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('reproduce', parents=[common], help='reproduce a table or figure')
    p.add_argument('table', choices=TABLES)
    p.add_argument('--dims', type=int, nargs='+', default=None,
                   help='table1 state dimensions')
    p.add_argument('--num-seeds', type=int, default=None)
    p.add_argument('--quick', action='store_true', help='reduced budgets')
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser('sweep', parents=[common], help='grid search')
    p.add_argument('--data', type=Path, default=None, help='dataset file')
    p.add_argument('--variant', choices=ModelConfig.VARIANTS, default='cwae2')
    p.add_argument('--lam', type=float, nargs='+', default=None)
    p.add_argument('--lr', type=float, nargs='+', default=None)
    p.add_argument('--widths', type=_parse_widths, nargs='+', default=None,
                   help='comma separated hidden widths per cell')
    p.add_argument('--epochs', type=int, default=None,
                   help='epochs per cell, default a tenth of the configured epochs')
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format='%(asctime)s %(name)s %(levelname)s: %(message)s')

    try:
        args.func(args)
    except ValueError as e:
        logger.error('invalid input: %s', e)
        return EXIT_INVALID
    except FloatingPointError as e:
        logger.error('numerical failure: %s', e)
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error('IO error: %s', e)
        return EXIT_IO
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
