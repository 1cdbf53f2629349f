from functools import partial
from typing import ClassVar, Dict, Optional, Tuple

import jax
import jax.numpy as jnp

from cwae.tree_util import pytree_dataclass, to_jsonable


jax.config.update("jax_enable_x64", True)


jnp.set_printoptions(precision=4, edgeitems=2, linewidth=128)


def _from_dict(cls, d, **nested):
    """Build a config dataclass from a JSON-like dict, converting lists to tuples and
    nested dicts with the ``nested`` constructors."""
    d = dict(d)
    known = set(cls.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValueError(f'unknown {cls.__name__} keys: {sorted(unknown)}')
    for key, value in d.items():
        if key in nested and isinstance(value, dict):
            d[key] = nested[key](value)
        elif isinstance(value, list):
            d[key] = tuple(value)
    return cls(**d)


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class ModelConfig:
    """Architecture of one block-triangular encoder/decoder set, "immutable" as a
    frozen dataclass.

    Parameters
    ----------
    variant : str
        One of ``VARIANTS``: 'cwae1', 'cwae2', 'cwae3' or 'waec'.
    d_Y : int
        Observation dimension.
    d_X : int
        State dimension.
    d_Z : int
        Latent dimension encoding the observation.
    d_U : int
        Latent dimension of the conditional noise.
    widths : tuple of int, optional
        Hidden layer widths shared by all four networks.
    activation : str, optional
        Hidden activation, one of 'tanh', 'relu' or 'identity'.

    Raises
    ------
    ValueError
        Incorrect or inconsistent parameter values.

    """

    variant: str
    d_Y: int
    d_X: int
    d_Z: int
    d_U: int

    widths: Tuple[int, ...] = (64, 64)
    activation: str = 'tanh'

    VARIANTS: ClassVar[Tuple[str, ...]] = ('cwae1', 'cwae2', 'cwae3', 'waec')
    ACTIVATIONS: ClassVar[Tuple[str, ...]] = ('tanh', 'relu', 'identity')

    def __post_init__(self):
        object.__setattr__(self, 'widths', tuple(int(w) for w in self.widths))

        if self.variant not in self.VARIANTS:
            raise ValueError(f'variant={self.variant!r} not in {self.VARIANTS}')
        if self.activation not in self.ACTIVATIONS:
            raise ValueError(f'activation={self.activation!r} not in {self.ACTIVATIONS}')
        for name in ('d_Y', 'd_X', 'd_Z', 'd_U'):
            if getattr(self, name) < 1:
                raise ValueError(f'{name} = {getattr(self, name)} < 1')
        if any(w < 1 for w in self.widths):
            raise ValueError(f'widths={self.widths} must be positive')

    @property
    def d_latent(self):
        """Joint latent dimension d_Z + d_U."""
        return self.d_Z + self.d_U

    @property
    def decodes_from_y(self):
        """Whether the x-decoder is G_X(y, u) rather than Ḡ_X(z, u)."""
        return self.variant in ('cwae2', 'waec')

    @property
    def encodes_from_y(self):
        """Whether the x-encoder is Φ̄_X(y, x) rather than Φ_X(z, x)."""
        return self.variant in ('cwae1', 'waec')

    @property
    def x_decoder_in(self):
        return (self.d_Y if self.decodes_from_y else self.d_Z) + self.d_U

    @property
    def x_encoder_in(self):
        return (self.d_Y if self.encodes_from_y else self.d_Z) + self.d_X

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)

    def to_dict(self):
        return to_jsonable(self)


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class PenaltyConfig:
    """Latent discrepancy D_{Z×U} settings.

    Parameters
    ----------
    kind : str, optional
        'mmd' for the multi-scale kernel penalty, or 'js' for the adversarial
        Jensen-Shannon penalty.
    lam : float, optional
        Penalty weight λ. Zero turns the penalty off.
    bandwidth_scales : tuple of float, optional
        RBF bandwidths in units of the median pairwise distance.
    unbiased : bool, optional
        Whether to use the unbiased MMD² estimator.
    disc_widths : tuple of int, optional
        Discriminator hidden widths.
    disc_lr : float, optional
        Discriminator Adam learning rate.
    disc_steps : int, optional
        Discriminator steps per generator step.

    """

    kind: str = 'mmd'
    lam: float = 1.0
    bandwidth_scales: Tuple[float, ...] = (0.25, 0.5, 1., 2., 4.)
    unbiased: bool = False
    disc_widths: Tuple[int, ...] = (64, 64)
    disc_lr: float = 1e-3
    disc_steps: int = 1

    KINDS: ClassVar[Tuple[str, ...]] = ('mmd', 'js')
    KEYS: ClassVar[Dict[str, str]] = {'lambda': 'lam', 'bandwidths': 'bandwidth_scales'}

    def __post_init__(self):
        object.__setattr__(self, 'bandwidth_scales',
                           tuple(float(s) for s in self.bandwidth_scales))
        object.__setattr__(self, 'disc_widths', tuple(int(w) for w in self.disc_widths))

        if self.kind not in self.KINDS:
            raise ValueError(f'penalty kind={self.kind!r} not in {self.KINDS}')
        if self.lam < 0:
            raise ValueError(f'penalty lam = {self.lam} < 0')
        if not self.bandwidth_scales or any(s <= 0 for s in self.bandwidth_scales):
            raise ValueError(f'bandwidth_scales={self.bandwidth_scales} must be '
                             'nonempty and positive')
        if self.disc_lr <= 0 or self.disc_steps < 1:
            raise ValueError('disc_lr and disc_steps must be positive')

    @classmethod
    def from_dict(cls, d):
        """Build from a JSON dict, where 'lambda' and 'bandwidths' name ``lam`` and
        ``bandwidth_scales``."""
        d = dict(d)
        for key, name in cls.KEYS.items():
            if key in d:
                if name in d:
                    raise ValueError(f'penalty keys {key!r} and {name!r} both given')
                d[name] = d.pop(key)
        return _from_dict(cls, d)

    def to_dict(self):
        d = to_jsonable(self)
        for key, name in self.KEYS.items():
            d[key] = d.pop(name)
        return d


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class TrainConfig:
    """Training run parameters, fully determining a run given a dataset.

    Parameters
    ----------
    epochs : int, optional
        Number of passes over the dataset; 0 leaves the model untouched.
    batch_size : int, optional
        Minibatch size, clipped to the dataset size.
    lr : float, optional
        Adam learning rate of the four networks.
    seed : int, optional
        Seed of minibatch shuffling and reference draws.
    penalty : PenaltyConfig, optional
    schedule : str, optional
        'joint' minimizes the summed objective; 'sequential' first fits the
        observation autoencoder on its own, then the conditional part.
    physics_grid : int or None, optional
        Side m of the 2×m×m velocity window; enables the physics penalties.
    physics_weights : 2-tuple of float, optional
        Weights of the divergence and smoothness penalties.
    diverge_threshold : float, optional
        Total loss above which training aborts.

    """

    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    penalty: PenaltyConfig = PenaltyConfig()
    schedule: str = 'joint'
    physics_grid: Optional[int] = None
    physics_weights: Tuple[float, float] = (1e-2, 1e-2)
    diverge_threshold: float = 1e6

    SCHEDULES: ClassVar[Tuple[str, ...]] = ('joint', 'sequential')

    def __post_init__(self):
        object.__setattr__(self, 'physics_weights',
                           tuple(float(w) for w in self.physics_weights))

        if self.epochs < 0:
            raise ValueError(f'epochs = {self.epochs} < 0')
        if self.batch_size < 2:
            raise ValueError(f'batch_size = {self.batch_size} < 2')
        if self.lr <= 0:
            raise ValueError(f'lr = {self.lr} <= 0')
        if self.seed < 0:
            raise ValueError(f'seed = {self.seed} < 0')
        if self.schedule not in self.SCHEDULES:
            raise ValueError(f'schedule={self.schedule!r} not in {self.SCHEDULES}')
        if self.physics_grid is not None and self.physics_grid < 3:
            raise ValueError(f'physics_grid = {self.physics_grid} < 3')
        if len(self.physics_weights) != 2 or any(w < 0 for w in self.physics_weights):
            raise ValueError(f'physics_weights={self.physics_weights} invalid')

    @property
    def lam(self):
        """Penalty weight λ."""
        return self.penalty.lam

    @classmethod
    def from_dict(cls, d):
        """Build from a JSON dict; a top-level 'lambda' sets the penalty weight."""
        d = dict(d)
        if 'lambda' in d:
            penalty = dict(d.get('penalty', {}))
            if 'lambda' in penalty or 'lam' in penalty:
                raise ValueError('lambda given both at top level and in penalty')
            penalty['lambda'] = d.pop('lambda')
            d['penalty'] = penalty
        return _from_dict(cls, d, penalty=PenaltyConfig.from_dict)

    def to_dict(self):
        d = to_jsonable(self)
        d['penalty'] = self.penalty.to_dict()
        return d
