from functools import partial
import logging

import numpy as np
from jax import Array
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import coo_matrix, vstack
from scipy.spatial.distance import cdist

from cwae.tree_util import pytree_dataclass
from cwae.util import as_2d


logger = logging.getLogger(__name__)


MAX_COST_ENTRIES = 4_000_000

LP_OPTIONS = {'primal_feasibility_tolerance': 1e-10,
              'dual_feasibility_tolerance': 1e-10}


@partial(pytree_dataclass, frozen=True)
class EmpiricalDistribution:
    """Weighted point cloud.

    Parameters
    ----------
    points : (N, d) or (N,) ArrayLike
        Support points; 1D input is a cloud in one dimension.
    weights : (N,) ArrayLike, optional
        Nonnegative weights summing to 1. Default is uniform.

    Raises
    ------
    ValueError
        If weights are negative, do not sum to 1 within 1e-12, or mismatch points.

    """

    points: Array
    weights: Array = None

    def __post_init__(self):
        if self._is_transforming():
            return

        points = as_2d(self.points, name='points')
        if self.weights is None:
            weights = np.full(len(points), 1 / len(points))
        else:
            weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (len(points),):
            raise ValueError(f'weights shape {weights.shape} does not match '
                             f'{len(points)} points')
        if (weights < 0).any():
            raise ValueError('weights must be nonnegative')
        if abs(weights.sum() - 1) > 1e-12:
            raise ValueError(f'weights sum to {weights.sum()}, not 1')

        object.__setattr__(self, 'points', points)
        object.__setattr__(self, 'weights', weights)

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def is_uniform(self):
        return np.array_equal(self.weights, np.full(self.size, 1 / self.size))


def _as_dist(a):
    return a if isinstance(a, EmpiricalDistribution) else EmpiricalDistribution(a)


def ot_cost(a_weights, b_weights, cost):
    """Minimum transport cost between discrete measures by the HiGHS dual simplex.

    Parameters
    ----------
    a_weights : (N,) ArrayLike
    b_weights : (M,) ArrayLike
        Marginals with equal total mass.
    cost : (N, M) ArrayLike
        Ground cost matrix.

    Returns
    -------
    cost : float
    plan : (N, M) numpy.ndarray

    Raises
    ------
    ValueError
        If the LP solver fails.

    """
    a = np.asarray(a_weights, dtype=np.float64)
    b = np.asarray(b_weights, dtype=np.float64)
    C = np.asarray(cost, dtype=np.float64)
    N, M = C.shape

    # row sums (N constraints) and column sums (M constraints) of the row-major plan
    idx = np.arange(N * M)
    rows = coo_matrix((np.ones(N * M), (idx // M, idx)), shape=(N, N * M))
    cols = coo_matrix((np.ones(N * M), (idx % M, idx)), shape=(M, N * M))
    A_eq = vstack([rows, cols]).tocsr()
    b_eq = np.concatenate([a, b])

    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None),
                  method='highs-ds', options=LP_OPTIONS)
    if res.status != 0:
        raise ValueError(f'transport LP failed: {res.message}')
    return float(res.fun), res.x.reshape(N, M)


def _check_dims(a, b):
    if a.dim != b.dim:
        raise ValueError(f'dimension mismatch, {a.dim} != {b.dim}')


def w2_exact(a, b):
    """Exact 2-Wasserstein distance between empirical distributions.

    An assignment problem for equal sizes and uniform weights, a transport LP
    otherwise.

    Parameters
    ----------
    a, b : EmpiricalDistribution or (N, d) ArrayLike

    Returns
    -------
    w2 : float

    Raises
    ------
    ValueError
        If dimensions mismatch, or the cost matrix would exceed 4×10⁶ entries, in
        which case ``w2_sliced`` should be used.

    """
    a, b = _as_dist(a), _as_dist(b)
    _check_dims(a, b)
    if a.size * b.size > MAX_COST_ENTRIES:
        raise ValueError(f'{a.size}×{b.size} cost matrix exceeds {MAX_COST_ENTRIES} '
                         'entries, use w2_sliced instead')

    C = cdist(a.points, b.points, 'sqeuclidean')
    if a.size == b.size and a.is_uniform and b.is_uniform:
        row, col = linear_sum_assignment(C)
        cost = C[row, col].mean()
    else:
        cost, _ = ot_cost(a.weights, b.weights, C)

    return float(np.sqrt(max(cost, 0.)))


def _quantile_w2sq(x, wx, y, wy):
    """Squared 1D W₂ by integrating the squared quantile difference exactly."""
    ix, iy = np.argsort(x, kind='stable'), np.argsort(y, kind='stable')
    x, wx, y, wy = x[ix], wx[ix], y[iy], wy[iy]
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.

    levels = np.union1d(cx, cy)
    dt = np.diff(levels, prepend=0.)
    # quantile functions are right-continuous steps; evaluate on each level interval
    qx = x[np.minimum(np.searchsorted(cx, levels, side='left'), len(x) - 1)]
    qy = y[np.minimum(np.searchsorted(cy, levels, side='left'), len(y) - 1)]
    return float((dt * (qx - qy) ** 2).sum())


def w2_1d(x, y, wx=None, wy=None):
    """Exact 1D 2-Wasserstein distance by monotone rearrangement."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if wx is None and wy is None and len(x) == len(y):
        return float(np.sqrt(((np.sort(x) - np.sort(y)) ** 2).mean()))
    wx = np.full(len(x), 1 / len(x)) if wx is None else np.asarray(wx)
    wy = np.full(len(y), 1 / len(y)) if wy is None else np.asarray(wy)
    return float(np.sqrt(_quantile_w2sq(x, wx, y, wy)))


def w2_sliced(a, b, n_projections=512, seed=0):
    """Sliced 2-Wasserstein distance, root-mean of squared 1D distances over
    uniformly random unit directions.

    Parameters
    ----------
    a, b : EmpiricalDistribution or (N, d) ArrayLike
    n_projections : int, optional
    seed : int, optional
        Seed of the directions.

    Returns
    -------
    sw2 : float

    """
    a, b = _as_dist(a), _as_dist(b)
    _check_dims(a, b)

    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((n_projections, a.dim))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)

    pa = a.points @ theta.T
    pb = b.points @ theta.T

    if a.size == b.size and a.is_uniform and b.is_uniform:
        w2sq = ((np.sort(pa, axis=0) - np.sort(pb, axis=0)) ** 2).mean(axis=0)
    else:
        w2sq = np.array([_quantile_w2sq(pa[:, i], a.weights, pb[:, i], b.weights)
                         for i in range(n_projections)])

    return float(np.sqrt(w2sq.mean()))


PHI = {
    'identity': lambda x: x,
    'square': np.square,
}


def mse_rel(samples, truth_samples, phi='identity'):
    """Relative mean squared error of the sample mean of φ against truth draws,
    E[‖(1/N) Σ φ(X^i) - φ(X)‖² / ‖φ(X)‖²] over truth draws X.

    Parameters
    ----------
    samples : (N, d) ArrayLike
        Generated samples.
    truth_samples : (M, d) ArrayLike
        Truth draws; a single row gives ‖m - φ(t)‖² / ‖φ(t)‖².
    phi : {'identity', 'square'}, optional
        Element-wise test function.

    Raises
    ------
    ValueError
        If inputs are empty or mismatch, or ‖φ(X)‖ = 0 for a truth draw.

    """
    if phi not in PHI:
        raise ValueError(f'phi={phi!r} not in {tuple(PHI)}')
    samples = as_2d(samples, name='samples')
    truth = as_2d(truth_samples, name='truth_samples')
    if samples.shape[1] != truth.shape[1]:
        raise ValueError(f'dimension mismatch, {samples.shape[1]} != {truth.shape[1]}')

    mean = PHI[phi](samples).mean(axis=0)
    target = PHI[phi](truth)

    denom = (target ** 2).sum(axis=1)
    if (denom == 0).any():
        raise ValueError('relative MSE undefined, ‖φ(X)‖ = 0')
    return float((((mean - target) ** 2).sum(axis=1) / denom).mean())
