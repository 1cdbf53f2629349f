"""Conditional transport costs on finite instances.

For a joint pmf of (Y, X), an encoder Φ_Y from Y labels to Z labels, and a generator
Ḡ_X tabulated on Z labels × a quantile grid of U ~ N(0, 1), this module computes

* R_Y = Σ_y P_Y(y) W_c(P_{X|Y=y}, Ḡ_X(Φ_Y(y), ·)#P_U),
* R_Z = Σ_z P_Z(z) W_c(P_{X|Z=z}, Ḡ_X(z, ·)#P_U) with Z = Φ_Y(Y),
* E(Φ_Y) = Σ_y P_Y(y) W_c(P_{X|Y=y}, P_{X|Z=Φ_Y(y)}),

by exact transport LPs. For a metric ground cost, R_Z ≤ R_Y ≤ R_Z + E(Φ_Y).
"""

from functools import partial
import logging

import numpy as np
from jax import Array
from scipy.spatial.distance import cdist
from scipy.stats import norm

from cwae.tree_util import pytree_dataclass
from cwae.metrics import ot_cost


logger = logging.getLogger(__name__)


U_GRID_SIZE = 33


def u_grid(num=U_GRID_SIZE):
    """Midpoint quantiles of the standard normal, each carrying mass 1/num."""
    return norm.ppf((np.arange(num) + 0.5) / num)


@partial(pytree_dataclass, aux_fields='cost_power', frozen=True)
class DiscreteConditionalInstance:
    """Finite instance of the conditional transport problem.

    Parameters
    ----------
    joint : (n_Y, n_X) ArrayLike
        Joint pmf of Y labels and X support points.
    x_support : (n_X, d) ArrayLike
        X support points.
    encoder : (n_Y,) ArrayLike of int
        Φ_Y as the Z label of each Y label.
    gen : (n_Z, n_U, d) ArrayLike
        Ḡ_X(z, u_k) on the U grid, each grid point with mass 1/n_U.
    y_support : (n_Y, d_Y) ArrayLike, optional
        Y support points, only used by ``joint_cost``. Default is the labels.
    cost_power : float, optional
        Ground cost c_X(a, b) = ‖a - b‖^p, with p in (0, 1] so that c_X is a metric.

    Raises
    ------
    ValueError
        If the pmf is negative or not normalized within 1e-12, the encoder is not
        total on the Z labels of ``gen``, or shapes mismatch.

    """

    joint: Array
    x_support: Array
    encoder: Array
    gen: Array
    y_support: Array = None
    cost_power: float = 1.

    def __post_init__(self):
        if self._is_transforming():
            return

        joint = np.asarray(self.joint, dtype=np.float64)
        x_support = np.asarray(self.x_support, dtype=np.float64)
        encoder = np.asarray(self.encoder)
        gen = np.asarray(self.gen, dtype=np.float64)

        if joint.ndim != 2:
            raise ValueError(f'joint pmf must be 2D, got shape {joint.shape}')
        n_Y, n_X = joint.shape
        if (joint < 0).any():
            raise ValueError('joint pmf must be nonnegative')
        if abs(joint.sum() - 1) > 1e-12:
            raise ValueError(f'joint pmf sums to {joint.sum()}, not 1')

        if x_support.ndim == 1:
            x_support = x_support[:, None]
        if x_support.shape[0] != n_X:
            raise ValueError(f'{x_support.shape[0]} X support points for {n_X} pmf '
                             'columns')
        if gen.ndim == 2:
            gen = gen[..., None]
        if gen.ndim != 3 or gen.shape[2] != x_support.shape[1]:
            raise ValueError(f'gen shape {gen.shape} does not match X dimension '
                             f'{x_support.shape[1]}')

        if encoder.shape != (n_Y,) or not np.issubdtype(encoder.dtype, np.integer):
            raise ValueError(f'encoder must be {n_Y} integer labels')
        if encoder.min() < 0 or encoder.max() >= gen.shape[0]:
            raise ValueError(f'encoder labels must be in [0, {gen.shape[0]})')

        if self.y_support is None:
            y_support = np.arange(n_Y, dtype=np.float64)[:, None]
        else:
            y_support = np.asarray(self.y_support, dtype=np.float64)
            if y_support.ndim == 1:
                y_support = y_support[:, None]
            if y_support.shape[0] != n_Y:
                raise ValueError(f'{y_support.shape[0]} Y support points for {n_Y} pmf '
                                 'rows')

        if not 0 < self.cost_power <= 1:
            raise ValueError(f'cost_power = {self.cost_power} not in (0, 1]')

        object.__setattr__(self, 'joint', joint)
        object.__setattr__(self, 'x_support', x_support)
        object.__setattr__(self, 'encoder', encoder)
        object.__setattr__(self, 'gen', gen)
        object.__setattr__(self, 'y_support', y_support)

    @property
    def n_Y(self):
        return self.joint.shape[0]

    @property
    def n_X(self):
        return self.joint.shape[1]

    @property
    def n_Z(self):
        return self.gen.shape[0]

    @property
    def n_U(self):
        return self.gen.shape[1]

    @property
    def p_Y(self):
        return self.joint.sum(axis=1)

    @property
    def p_Z(self):
        return np.bincount(self.encoder, weights=self.p_Y, minlength=self.n_Z)

    def cost(self, a, b):
        return cdist(a, b) ** self.cost_power

    def x_given_y(self, y):
        return self.joint[y] / self.p_Y[y]

    def x_given_z(self, z):
        mass = self.joint[self.encoder == z].sum(axis=0)
        return mass / mass.sum()


def _w_to_gen(inst, pmf, z):
    u_mass = np.full(inst.n_U, 1 / inst.n_U)
    cost, _ = ot_cost(pmf, u_mass, inst.cost(inst.x_support, inst.gen[z]))
    return cost


def _w_between(inst, p, q):
    if np.array_equal(p, q):
        return 0.
    cost, _ = ot_cost(p, q, inst.cost(inst.x_support, inst.x_support))
    return cost


def latent_conditional_cost(inst):
    """Latent cost R_Z, conditional cost R_Y and representation error E(Φ_Y).

    Parameters
    ----------
    inst : DiscreteConditionalInstance

    Returns
    -------
    R_Z, R_Y, E : float

    Raises
    ------
    ValueError
        If the instance exceeds 1000 support points.

    """
    if inst.n_Y + inst.n_X + inst.n_Z * inst.n_U > 1000:
        raise ValueError('instance exceeds 1000 total support points')

    p_Y, p_Z = inst.p_Y, inst.p_Z
    R_Y, E = 0., 0.
    for y in range(inst.n_Y):
        if p_Y[y] == 0:
            continue
        z = inst.encoder[y]
        cond = inst.x_given_y(y)
        R_Y += p_Y[y] * _w_to_gen(inst, cond, z)
        E += p_Y[y] * _w_between(inst, cond, inst.x_given_z(z))

    R_Z = 0.
    for z in range(inst.n_Z):
        if p_Z[z] == 0:
            continue
        R_Z += p_Z[z] * _w_to_gen(inst, inst.x_given_z(z), z)

    logger.debug('R_Z = %.6g, R_Y = %.6g, E = %.6g', R_Z, R_Y, E)
    return R_Z, R_Y, E


def joint_cost(inst, y_weight=1.):
    """Joint transport cost between P_{Y,X} and the law of (Y, Ḡ_X(Φ_Y(Y), U)).

    The ground cost is ``y_weight`` c(y, y') + c_X(x, x'). Couplings that keep y
    fixed cost R_Y, so the joint cost never exceeds R_Y, and it equals R_Y once
    ``y_weight`` is large enough to forbid moving mass across Y labels.

    """
    n_Y, n_X, n_U = inst.n_Y, inst.n_X, inst.n_U

    # data side: (y, x_j), generator side: (y, gen[Φ(y), k]), both y-major
    a = inst.joint.ravel()
    b = np.repeat(inst.p_Y / n_U, n_U)

    c_Y = inst.cost(inst.y_support, inst.y_support)
    gen_pts = inst.gen[inst.encoder].reshape(n_Y * n_U, -1)
    c_X = inst.cost(inst.x_support, gen_pts).reshape(n_X, n_Y, n_U)

    C = y_weight * c_Y[:, None, :, None] + c_X[None]
    C = C.reshape(n_Y * n_X, n_Y * n_U)

    cost, _ = ot_cost(a, b, C)
    return cost


def random_instance(seed, n_Y=3, n_X=3, n_Z=3, d=2, n_U=U_GRID_SIZE, injective=False):
    """Random instance with Dirichlet pmf, Gaussian supports, and affine-in-u
    generators Ḡ_X(z, u) = m_z + s_z u.

    With ``injective``, the encoder assigns distinct Z labels to all Y labels, which
    needs n_Z >= n_Y.

    """
    rng = np.random.default_rng(seed)

    joint = rng.dirichlet(np.ones(n_Y * n_X)).reshape(n_Y, n_X)
    joint /= joint.sum()
    x_support = rng.standard_normal((n_X, d))
    y_support = rng.standard_normal((n_Y, 1))

    if injective:
        if n_Z < n_Y:
            raise ValueError(f'injective encoder needs n_Z = {n_Z} >= n_Y = {n_Y}')
        encoder = rng.permutation(n_Z)[:n_Y]
    else:
        encoder = rng.integers(n_Z, size=n_Y)

    m = rng.standard_normal((n_Z, 1, d))
    s = 0.5 * rng.standard_normal((n_Z, 1, d))
    gen = m + s * u_grid(n_U)[None, :, None]

    return DiscreteConditionalInstance(joint, x_support, encoder, gen, y_support)
