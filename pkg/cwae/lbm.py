"""D2Q9 lattice Boltzmann flow past a cylinder, wake-window snapshots, and physics
penalties of velocity fields."""

from functools import partial
import logging
from typing import ClassVar

import numpy as np
from jax import Array, jit, lax, random
import jax.numpy as jnp

from cwae.tree_util import pytree_dataclass, to_jsonable
from cwae.enkf import ObservationModel
from cwae.problems import Dataset


logger = logging.getLogger(__name__)


class SimulationDivergedError(FloatingPointError):
    """Lattice velocity exceeded the lattice sound speed, or became non-finite."""


SOUND_SPEED = 1 / np.sqrt(3)

# lattice velocities, weights, and opposite directions
CX = np.array([0, 0, 1, 1, 1, 0, -1, -1, -1])
CY = np.array([0, 1, 1, 0, -1, -1, -1, 0, 1])
WEIGHTS = np.array([4/9, 1/9, 1/36, 1/9, 1/36, 1/9, 1/36, 1/9, 1/36])
OPPOSITE = np.array([0, 5, 6, 7, 8, 1, 2, 3, 4])


@partial(pytree_dataclass, aux_fields=Ellipsis, frozen=True)
class FlowProblem:
    """Velocity snapshots in the wake of a cylinder observed on a coarse pixel grid.

    The channel is ``length`` by ``width`` cylinder diameters, periodic across, with
    an equilibrium inflow at ``inflow`` lattice speed on the left and a zero-gradient
    outflow on the right. The state X is the (u_x, u_y) pair on an m×m window of
    every ``stride``-th node one diameter behind the cylinder, plus γ noise, and the
    observation Y selects both components on a uniform k×k pixel grid of the window,
    plus σ noise.

    Parameters
    ----------
    grid : int, optional
        Window side m, d_X = 2 m².
    obs_grid : int, optional
        Observation pixel grid side k, d_Y = 2 k².
    reynolds : float, optional
        Reynolds number of the cylinder diameter and inflow speed.
    diameter : int, optional
        Cylinder diameter in lattice nodes.
    inflow : float, optional
        Inflow speed in lattice units.
    length : float, optional
        Channel length in diameters.
    width : float, optional
        Channel width in diameters.
    stride : int, optional
        Window node spacing.
    gamma : float, optional
        State noise level γ.
    sigma : float, optional
        Observation noise level σ.
    num_frames : int, optional
        Snapshots recorded, one per half vortex period at a random phase.
    spinup_periods : float, optional
        Vortex periods simulated before the first snapshot.
    obstacle : bool, optional
        Whether the cylinder is present.
    periodic : bool, optional
        Whether the channel is also periodic along the flow, without inflow and
        outflow boundaries.
    seed : int, optional
        Default seed of snapshot phases and noise.

    Raises
    ------
    ValueError
        If the relaxation time is not above 1/2, or the window does not fit.

    """

    grid: int = 24
    obs_grid: int = 5
    reynolds: float = 281.
    diameter: int = 32
    inflow: float = 0.1
    length: float = 11.
    width: float = 5.
    stride: int = 2
    gamma: float = 1e-1
    sigma: float = 2e-1
    num_frames: int = 64
    spinup_periods: float = 6.
    obstacle: bool = True
    periodic: bool = False
    seed: int = 0

    kind: ClassVar[str] = 'flow'
    strouhal_guess: ClassVar[float] = 0.2

    def __post_init__(self):
        if self.grid < 3:
            raise ValueError(f'grid = {self.grid} < 3')
        if not 1 <= self.obs_grid <= self.grid:
            raise ValueError(f'obs_grid = {self.obs_grid} not in [1, {self.grid}]')
        if self.tau <= 0.5:
            raise ValueError(f'relaxation time {self.tau} <= 1/2, unstable')
        if not 0 < self.inflow < SOUND_SPEED:
            raise ValueError(f'inflow = {self.inflow} not in (0, {SOUND_SPEED:.4f})')
        x0, y0 = self.window_origin
        extent = self.stride * (self.grid - 1) + 1
        if x0 + extent > self.nx or y0 < 0 or y0 + extent > self.ny:
            raise ValueError(f'{self.grid}×{self.grid} window with stride {self.stride} '
                             f'does not fit the {self.nx}×{self.ny} channel')
        if self.num_frames < 1:
            raise ValueError(f'num_frames = {self.num_frames} < 1')

    @property
    def nx(self):
        return int(round(self.length * self.diameter))

    @property
    def ny(self):
        return int(round(self.width * self.diameter))

    @property
    def viscosity(self):
        return self.inflow * self.diameter / self.reynolds

    @property
    def tau(self):
        """BGK relaxation time."""
        return 3 * self.viscosity + 0.5

    @property
    def center(self):
        """Cylinder center, 2.5 diameters downstream, slightly off the mid-line to
        break the symmetry."""
        return 2.5 * self.diameter, self.ny / 2 + 0.5

    @property
    def window_origin(self):
        cx, _ = self.center
        x0 = int(round(cx + self.diameter))
        y0 = (self.ny - (self.stride * (self.grid - 1) + 1)) // 2
        return x0, y0

    @property
    def d_X(self):
        return 2 * self.grid ** 2

    @property
    def d_Y(self):
        return 2 * self.obs_grid ** 2

    @property
    def period_steps(self):
        """Estimated vortex shedding period in steps."""
        return self.diameter / (self.strouhal_guess * self.inflow)

    @property
    def half_period_steps(self):
        return max(1, int(round(self.period_steps / 2)))

    @property
    def spinup_steps(self):
        return int(round(self.spinup_periods * self.period_steps))

    def cylinder_mask(self):
        X, Y = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        if not self.obstacle:
            return np.zeros((self.ny, self.nx), dtype=bool)
        cx, cy = self.center
        return (X - cx) ** 2 + (Y - cy) ** 2 < (self.diameter / 2) ** 2

    def obs_index(self):
        """Window indices of the k uniformly spaced observed pixels along each axis."""
        k, m = self.obs_grid, self.grid
        return ((np.arange(k) + 0.5) * m / k).astype(int)

    def h(self, x):
        """Select both velocity components at the observed pixels."""
        idx = self.obs_index()
        fields = x.reshape(x.shape[0], 2, self.grid, self.grid)
        return fields[:, :, idx][:, :, :, idx].reshape(x.shape[0], -1)

    def obs_matrix(self):
        """Observation as a (d_Y, d_X) selection matrix."""
        return np.asarray(self.h(jnp.eye(self.d_X))).T

    def jacobian(self, x):
        return jnp.asarray(self.obs_matrix(), dtype=x.dtype)

    def obs_model(self):
        return ObservationModel(self.h, self.jacobian, self.sigma)

    def to_dict(self):
        return {'kind': self.kind, **to_jsonable(self)}


full_scale = partial(FlowProblem, grid=48, obs_grid=9, diameter=48)
full_scale.__doc__ = 'Flow problem on the 48×48 window with a 9×9 pixel grid.'


def equilibrium(rho, ux, uy):
    """Second-order equilibrium distributions, (..., 9)."""
    cu = ux[..., None] * CX + uy[..., None] * CY
    usq = (ux ** 2 + uy ** 2)[..., None]
    return rho[..., None] * WEIGHTS * (1 + 3 * cu + 4.5 * cu ** 2 - 1.5 * usq)


def macroscopic(f):
    """Density and velocity of distributions f of shape (ny, nx, 9)."""
    rho = f.sum(axis=-1)
    ux = (f * CX).sum(axis=-1) / rho
    uy = (f * CY).sum(axis=-1) / rho
    return rho, ux, uy


@partial(pytree_dataclass, aux_fields='problem', frozen=True)
class LbmState:
    """Lattice distributions and step count."""

    f: Array
    step: Array
    problem: FlowProblem

    def velocity(self):
        _, ux, uy = macroscopic(self.f)
        mask = self.problem.cylinder_mask()
        return jnp.where(mask, 0, ux), jnp.where(mask, 0, uy)

    def mass(self):
        return self.f.sum()


@partial(jit, static_argnums=0)
def lbm_init(problem):
    """Uniform flow at the inflow speed with a small transverse perturbation, at rest
    inside the cylinder."""
    Y = jnp.arange(problem.ny, dtype=jnp.float64)
    X = jnp.arange(problem.nx, dtype=jnp.float64)
    Y, X = jnp.meshgrid(Y, X, indexing='ij')
    mask = problem.cylinder_mask()

    ux = jnp.full_like(X, problem.inflow)
    uy = 1e-2 * problem.inflow * jnp.sin(2 * np.pi * Y / problem.ny) \
         * jnp.exp(- ((X - problem.center[0]) / problem.diameter) ** 2)
    if not problem.obstacle:
        uy = jnp.zeros_like(X)
    ux = jnp.where(mask, 0, ux)
    uy = jnp.where(mask, 0, uy)

    f = equilibrium(jnp.ones_like(X), ux, uy)
    return LbmState(f, jnp.zeros((), dtype=jnp.int64), problem)


def _stream(f):
    return jnp.stack([jnp.roll(jnp.roll(f[..., i], CX[i], axis=1), CY[i], axis=0)
                      for i in range(9)], axis=-1)


def _step(f, problem):
    mask = jnp.asarray(problem.cylinder_mask())[..., None]

    f = _stream(f)

    # full-way bounce-back inside the cylinder
    bounced = f[..., OPPOSITE]

    rho, ux, uy = macroscopic(f)
    f = f - (f - equilibrium(rho, ux, uy)) / problem.tau

    f = jnp.where(mask, bounced, f)

    if not problem.periodic:
        ny = problem.ny
        inflow = equilibrium(jnp.ones(ny), jnp.full(ny, problem.inflow), jnp.zeros(ny))
        f = f.at[:, 0].set(inflow)
        f = f.at[:, -1].set(f[:, -2])

    return f


@jit
def lbm_run(state, num_steps):
    """Advance ``num_steps`` lattice steps, traced so that step counts do not
    trigger recompilation."""
    problem = state.problem
    f = lax.fori_loop(0, num_steps, lambda _, f: _step(f, problem), state.f)
    return state.replace(f=f, step=state.step + num_steps)


def lbm_step(state):
    """One streaming, collision, and boundary step.

    Raises
    ------
    SimulationDivergedError
        If any speed reaches the lattice sound speed after the step.

    """
    state = lbm_run(state, 1)
    check_stable(state)
    return state


def check_stable(state):
    """Raise SimulationDivergedError if any speed reaches the lattice sound speed."""
    _, ux, uy = macroscopic(state.f)
    speed = float(jnp.sqrt(ux ** 2 + uy ** 2).max())
    if not np.isfinite(speed) or speed > SOUND_SPEED:
        raise SimulationDivergedError(f'max lattice speed {speed:.4g} above sound speed '
                                      f'{SOUND_SPEED:.4f} at step {int(state.step)}')
    return speed


def lbm_advance(state, num_steps, check_every=1000):
    """Advance with stability checks every ``check_every`` steps."""
    while num_steps > 0:
        n = min(num_steps, check_every)
        state = lbm_run(state, n)
        check_stable(state)
        num_steps -= n
    return state


def window(state):
    """(2, m, m) velocity on the wake window."""
    p = state.problem
    ux, uy = state.velocity()
    x0, y0 = p.window_origin
    extent = p.stride * (p.grid - 1) + 1
    rows = slice(y0, y0 + extent, p.stride)
    cols = slice(x0, x0 + extent, p.stride)
    return jnp.stack([ux[rows, cols], uy[rows, cols]])


def simulate_frames(problem, seed=None):
    """Snapshots of the wake window, one per half vortex period at a random phase.

    Returns
    -------
    frames : (num_frames, 2, m, m) numpy.ndarray

    Raises
    ------
    SimulationDivergedError
        If the simulation becomes unstable.

    """
    seed = problem.seed if seed is None else seed
    half = problem.half_period_steps
    rng = np.random.default_rng(seed)
    times = problem.spinup_steps + half * np.arange(problem.num_frames) \
            + rng.integers(0, half, size=problem.num_frames)

    state = lbm_init(problem)
    frames = []
    for t in times:
        state = lbm_advance(state, int(t - state.step))
        frames.append(np.asarray(window(state)))
    logger.info('recorded %d frames over %d lattice steps', len(frames), int(state.step))
    return np.stack(frames)


def gen_flow(p, N, seed=None):
    """Draw N joint samples of a FlowProblem.

    Frames are drawn uniformly with replacement from the recorded snapshots, flattened
    to X with γ noise added, and observed with σ noise.

    """
    if N < 1:
        raise ValueError(f'N = {N} < 1')
    seed = p.seed if seed is None else seed
    frames = simulate_frames(p, seed=seed)

    idx_key, x_key, y_key = random.split(random.PRNGKey(seed), num=3)
    idx = random.randint(idx_key, (N,), 0, len(frames))
    X = jnp.asarray(frames.reshape(len(frames), -1))[idx]
    X = X + p.gamma * random.normal(x_key, shape=X.shape, dtype=jnp.float64)
    Y = p.h(X)
    Y = Y + p.sigma * random.normal(y_key, shape=Y.shape, dtype=jnp.float64)

    provenance = {'problem': p.to_dict(), 'seed': int(seed), 'N': int(N),
                  'tau': p.tau, 'nx': p.nx, 'ny': p.ny,
                  'window_origin': list(p.window_origin)}
    return Dataset(Y, X, provenance)


def physics_penalty(field):
    """Divergence and smoothness penalties of a velocity field on a unit grid.

    Parameters
    ----------
    field : (2, m, m) ArrayLike
        Components (u_x, u_y), rows along y and columns along x.

    Returns
    -------
    divergence : float jax.Array
        Mean of (∂u_x/∂x + ∂u_y/∂y)² by central differences on interior nodes.
    smoothness : float jax.Array
        Mean over both components of the squared forward-difference gradient norm.

    Raises
    ------
    ValueError
        If m < 3.

    """
    field = jnp.asarray(field)
    if field.ndim != 3 or field.shape[0] != 2 or field.shape[1] != field.shape[2]:
        raise ValueError(f'field shape {field.shape} is not (2, m, m)')
    if field.shape[1] < 3:
        raise ValueError(f'grid m = {field.shape[1]} < 3')

    ux, uy = field
    dux_dx = (ux[1:-1, 2:] - ux[1:-1, :-2]) / 2
    duy_dy = (uy[2:, 1:-1] - uy[:-2, 1:-1]) / 2
    divergence = ((dux_dx + duy_dy) ** 2).mean()

    gx = field[:, :-1, 1:] - field[:, :-1, :-1]
    gy = field[:, 1:, :-1] - field[:, :-1, :-1]
    smoothness = (gx ** 2 + gy ** 2).mean()

    return divergence, smoothness


def lift_signal(problem, num_steps, sample_every=10, sensor=(2., 0.)):
    """Transverse velocity at a wake sensor point, sampled after the spin-up.

    The sensor is given in diameters downstream of and across from the cylinder
    center.

    Returns
    -------
    signal : (num_steps // sample_every,) numpy.ndarray
    dt : int
        Lattice steps between samples.

    """
    cx, cy = problem.center
    px = int(round(cx + sensor[0] * problem.diameter))
    py = int(round(cy + sensor[1] * problem.diameter))

    state = lbm_advance(lbm_init(problem), problem.spinup_steps)
    signal = []
    for _ in range(num_steps // sample_every):
        state = lbm_run(state, sample_every)
        _, _, uy = macroscopic(state.f[py, px])
        signal.append(float(uy))
    check_stable(state)
    return np.array(signal), sample_every


def strouhal_number(signal, dt, diameter, velocity):
    """Dimensionless shedding frequency f D / U at the FFT peak of a lift proxy.

    Raises
    ------
    ValueError
        If the signal is too short or has no oscillation.

    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or len(signal) < 4:
        raise ValueError(f'signal of shape {signal.shape} too short')

    signal = signal - signal.mean()
    power = np.abs(np.fft.rfft(signal * np.hanning(len(signal)))) ** 2
    freq = np.fft.rfftfreq(len(signal), d=dt)
    if not power[1:].max() > 0:
        raise ValueError('signal has no oscillation')
    peak = 1 + np.argmax(power[1:])
    return freq[peak] * diameter / velocity
