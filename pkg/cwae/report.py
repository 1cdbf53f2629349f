"""Run configuration and experiment reports.

A RunConfig is one JSON document identifying a run by the hash of its canonical
serialization. An ExperimentReport collects metric rows tagged with that hash and
writes them as CSV, with wall times kept in a separate file so that the metric CSV
is byte-identical across reruns with the same seed.
"""

import csv
from dataclasses import dataclass, field
from functools import partial
import json
import logging
import math
from pathlib import Path
from typing import Any, ClassVar, Optional, Tuple

import numpy as np

from cwae.tree_util import pytree_dataclass, to_jsonable
from cwae.configuration import ModelConfig, TrainConfig, _from_dict
from cwae.problems import problem_from_dict
from cwae.util import config_hash


logger = logging.getLogger(__name__)


METHODS = ('cwae1', 'cwae2', 'cwae3', 'waec', 'enkf', 'lrenkf', 'sir')
METRICS = ('w2', 'w2_sliced', 'mse_rel_x', 'mse_rel_x2', 'radial_error')


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class ModelSpec:
    """Architecture shared by the CWAE variants of a run; dimensions d_Y and d_X come
    from the problem.

    Parameters
    ----------
    d_Z : int or None, optional
        Observation latent dimension. Default depends on the problem, see
        ``default_d_Z``.
    d_U : int or None, optional
        Conditional noise dimension. Default is the problem's intrinsic dimension.
    widths : tuple of int, optional
    activation : str, optional

    """

    d_Z: Optional[int] = None
    d_U: Optional[int] = None
    widths: Tuple[int, ...] = (64, 64)
    activation: str = 'tanh'

    def __post_init__(self):
        object.__setattr__(self, 'widths', tuple(int(w) for w in self.widths))

    def model_config(self, variant, problem):
        d_Z = default_d_Z(problem) if self.d_Z is None else self.d_Z
        d_U = default_d_U(problem) if self.d_U is None else self.d_U
        return ModelConfig(variant, problem.d_Y, problem.d_X, d_Z, d_U,
                           widths=self.widths, activation=self.activation)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


def default_d_Z(problem):
    """Intrinsic dimension for the manifold problem, 1 for the spherical one, and 8
    for flow windows."""
    if problem.kind == 'manifold':
        return problem.d_U
    if problem.kind == 'spherical':
        return 1
    return 8


def default_d_U(problem):
    """Intrinsic dimension for the manifold problem, d_X for the spherical one, and
    16 for flow windows."""
    if problem.kind == 'manifold':
        return problem.d_U
    if problem.kind == 'spherical':
        return problem.d_X
    return 16


def default_rank(problem):
    """Low-rank EnKF subspace dimension."""
    if problem.kind == 'manifold':
        return problem.d_U
    if problem.kind == 'spherical':
        return 1
    return min(64, problem.d_Y)


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class EvalConfig:
    """Evaluation settings.

    Parameters
    ----------
    methods : tuple of str, optional
        Methods to evaluate, from ``METHODS``.
    metrics : tuple of str, optional
        Metrics to compute, from ``METRICS``.
    conditioning : tuple of tuple of float or None, optional
        Conditioning values y. Default is the first ``num_conditioning`` held-out
        observations.
    num_conditioning : int, optional
    num_samples : int, optional
        Samples per method and conditioning value.
    num_train : int, optional
        Training pairs, also the EnKF ensemble.
    num_test : int, optional
        Held-out pairs.
    reference : str, optional
        'sir' compares against SIR oracle samples, 'truth' against the held-out
        state paired with each conditioning value.
    sir_particles : int, optional
    sir_tempering : bool, optional
    rank : int or None, optional
        LREnKF rank. Default depends on the problem, see ``default_rank``.
    n_projections : int, optional
        Directions of the sliced W₂.

    """

    methods: Tuple[str, ...] = ('cwae1', 'cwae2', 'cwae3', 'lrenkf')
    metrics: Tuple[str, ...] = ('w2',)
    conditioning: Optional[Tuple[Tuple[float, ...], ...]] = None
    num_conditioning: int = 5
    num_samples: int = 1000
    num_train: int = 1000
    num_test: int = 100
    reference: str = 'sir'
    sir_particles: int = 100_000
    sir_tempering: bool = True
    rank: Optional[int] = None
    n_projections: int = 512

    REFERENCES: ClassVar[Tuple[str, ...]] = ('sir', 'truth')

    def __post_init__(self):
        object.__setattr__(self, 'methods', tuple(self.methods))
        object.__setattr__(self, 'metrics', tuple(self.metrics))
        if self.conditioning is not None:
            object.__setattr__(self, 'conditioning',
                               tuple(tuple(float(v) for v in np.atleast_1d(y))
                                     for y in self.conditioning))

        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f'methods {sorted(bad)} not in {METHODS}')
        bad = set(self.metrics) - set(METRICS)
        if bad or not self.metrics:
            raise ValueError(f'metrics {sorted(bad)} not in {METRICS}')
        if self.reference not in self.REFERENCES:
            raise ValueError(f'reference={self.reference!r} not in {self.REFERENCES}')
        if self.reference == 'truth' and self.conditioning is not None:
            raise ValueError('truth reference needs held-out conditioning values')
        if min(self.num_samples, self.num_train, self.num_test,
               self.num_conditioning) < 1:
            raise ValueError('sample counts must be positive')
        if self.rank is not None and self.rank < 1:
            raise ValueError(f'rank = {self.rank} < 1')

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class RunConfig:
    """Everything that determines a run.

    Parameters
    ----------
    problem : ManifoldProblem, SphericalProblem, or FlowProblem
    model : ModelSpec, optional
    train : TrainConfig, optional
    eval : EvalConfig, optional
    out : str, optional
        Output directory.
    seeds : tuple of int, optional
        One seed per independent repetition.

    """

    problem: Any
    model: ModelSpec = ModelSpec()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()
    out: str = 'out'
    seeds: Tuple[int, ...] = tuple(range(10))

    def __post_init__(self):
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ValueError('need at least one seed')

    def to_dict(self):
        return {
            'problem': self.problem.to_dict(),
            'model': to_jsonable(self.model),
            'train': self.train.to_dict(),
            'eval': to_jsonable(self.eval),
            'out': self.out,
            'seeds': list(self.seeds),
        }

    @classmethod
    def from_dict(cls, d):
        if 'problem' not in d:
            raise ValueError('run configuration needs a problem')
        return _from_dict(cls, d, problem=problem_from_dict, model=ModelSpec.from_dict,
                          train=TrainConfig.from_dict, eval=EvalConfig.from_dict)

    def hash(self):
        """First 16 hex digits of the SHA-256 of the canonical JSON, without the
        output directory."""
        d = self.to_dict()
        del d['out']
        return config_hash(d)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n')

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ReportRow:
    method: str
    problem: str
    d_X: int
    seed: int
    metric: str
    value: float
    config_hash: str
    wall_time: float = field(default=math.nan, compare=False)
    error: str = ''

    FIELDS: ClassVar[Tuple[str, ...]] = ('method', 'problem', 'd_X', 'seed', 'metric',
                                         'value', 'config_hash', 'error')
    TIMING_FIELDS: ClassVar[Tuple[str, ...]] = ('method', 'problem', 'd_X', 'seed',
                                                'metric', 'wall_time', 'config_hash')

    @property
    def failed(self):
        return bool(self.error)

    def sort_key(self):
        return (self.problem, self.d_X, self.method, self.metric, self.seed)


def _format(value):
    return repr(float(value))


def _write_csv(path, fieldnames, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='') as f:
        w = csv.DictWriter(f, fieldnames=fieldnames, lineterminator='\n')
        w.writeheader()
        for row in rows:
            w.writerow(row)


class ExperimentReport:
    """Metric rows of one or more runs."""

    def __init__(self, rows=()):
        self.rows = list(rows)

    def __len__(self):
        return len(self.rows)

    def add(self, row):
        self.rows.append(row)

    def extend(self, rows):
        self.rows.extend(rows)

    def failure(self, method, problem, d_X, seed, config_hash, error):
        """Record a failed stage as a row with a NaN value."""
        self.add(ReportRow(method, problem, d_X, seed, 'failed', math.nan, config_hash,
                           error=f'{type(error).__name__}: {error}'))

    def sorted_rows(self):
        return sorted(self.rows, key=ReportRow.sort_key)

    def aggregate(self):
        """Mean over seeds of the finite values of each (problem, d_X, method, metric).

        Returns
        -------
        summary : list of dict
            With keys problem, d_X, method, metric, mean, std, count.

        """
        groups = {}
        for row in self.rows:
            if row.failed or not np.isfinite(row.value):
                continue
            key = (row.problem, row.d_X, row.method, row.metric)
            groups.setdefault(key, []).append(row.value)

        summary = []
        for key in sorted(groups):
            values = np.asarray(groups[key], dtype=np.float64)
            summary.append(dict(zip(('problem', 'd_X', 'method', 'metric'), key),
                                mean=float(values.mean()), std=float(values.std()),
                                count=len(values)))
        return summary

    def write_csv(self, path):
        """Metric rows in sorted order, without wall times."""
        rows = []
        for r in self.sorted_rows():
            d = {k: getattr(r, k) for k in ReportRow.FIELDS}
            d['value'] = _format(r.value)
            rows.append(d)
        _write_csv(path, ReportRow.FIELDS, rows)

    def write_timing_csv(self, path):
        rows = [{k: getattr(r, k) for k in ReportRow.TIMING_FIELDS}
                for r in self.sorted_rows()]
        for d in rows:
            d['wall_time'] = f'{d["wall_time"]:.3f}'
        _write_csv(path, ReportRow.TIMING_FIELDS, rows)

    def write_summary_csv(self, path):
        fields = ('problem', 'd_X', 'method', 'metric', 'mean', 'std', 'count')
        rows = self.aggregate()
        for d in rows:
            d['mean'] = _format(d['mean'])
            d['std'] = _format(d['std'])
        _write_csv(path, fields, rows)

    def write(self, out_dir, name):
        """Write ``name``.csv, ``name``_timing.csv and ``name``_summary.csv."""
        out_dir = Path(out_dir)
        self.write_csv(out_dir / f'{name}.csv')
        self.write_timing_csv(out_dir / f'{name}_timing.csv')
        self.write_summary_csv(out_dir / f'{name}_summary.csv')
        logger.info('report with %d rows written to %s/%s*.csv', len(self), out_dir, name)

    @classmethod
    def read_csv(cls, path):
        with Path(path).open(encoding='utf-8', newline='') as f:
            rows = [ReportRow(method=d['method'], problem=d['problem'],
                              d_X=int(d['d_X']), seed=int(d['seed']),
                              metric=d['metric'], value=float(d['value']),
                              config_hash=d['config_hash'], error=d.get('error', ''))
                    for d in csv.DictReader(f)]
        return cls(rows)
