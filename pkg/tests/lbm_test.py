import pytest
import numpy as np
import jax.numpy as jnp

from cwae.lbm import (SOUND_SPEED, SimulationDivergedError, FlowProblem, full_scale,
                      LbmState, equilibrium, macroscopic, lbm_init, lbm_step, lbm_run,
                      lbm_advance, check_stable, window, gen_flow, physics_penalty,
                      lift_signal, strouhal_number)


def small_problem(**kwargs):
    kwargs = {'grid': 4, 'obs_grid': 2, 'diameter': 8, 'reynolds': 20., 'num_frames': 3,
              'spinup_periods': 0.5, **kwargs}
    return FlowProblem(**kwargs)


def test_dims():
    p = FlowProblem()
    assert (p.d_X, p.d_Y) == (2 * 24 ** 2, 2 * 5 ** 2)
    p = full_scale()
    assert (p.d_X, p.d_Y) == (2 * 48 ** 2, 2 * 9 ** 2)
    assert p.tau > 0.5


@pytest.mark.parametrize(
    'kwargs',
    [dict(grid=2), dict(obs_grid=5), dict(inflow=0.7), dict(grid=200),
     dict(num_frames=0)],
    ids=['grid', 'obs_grid', 'inflow', 'window', 'frames'],
)
def test_invalid(kwargs):
    with pytest.raises(ValueError):
        small_problem(**kwargs)


def test_observation():
    p = small_problem(grid=6, obs_grid=3)
    x = jnp.arange(2 * p.d_X, dtype=jnp.float64).reshape(2, p.d_X)
    y = p.h(x)
    assert y.shape == (2, p.d_Y)
    check = np.asarray(x).reshape(2, 2, 6, 6)[:, :, [1, 3, 5]][:, :, :, [1, 3, 5]]
    np.testing.assert_array_equal(np.asarray(y), check.reshape(2, -1))
    np.testing.assert_array_equal(np.asarray(x) @ p.obs_matrix().T, np.asarray(y))


def test_equilibrium_moments():
    rho = jnp.array([1., 1.2])
    ux = jnp.array([0.05, -0.02])
    uy = jnp.array([0., 0.03])
    r, u, v = macroscopic(equilibrium(rho, ux, uy))
    np.testing.assert_allclose(r, rho, rtol=1e-12)
    np.testing.assert_allclose(u, ux, atol=1e-12)
    np.testing.assert_allclose(v, uy, atol=1e-12)


class TestPeriodic:
    def test_mass_conserved(self):
        p = small_problem(periodic=True, obstacle=False)
        state = lbm_init(p)
        mass = float(state.mass())
        state = lbm_run(state, 50)
        assert int(state.step) == 50
        assert float(state.mass()) == pytest.approx(mass, rel=1e-12)

    def test_uniform_flow_steady(self):
        p = small_problem(periodic=True, obstacle=False)
        state = lbm_step(lbm_init(p))
        ux, uy = state.velocity()
        np.testing.assert_allclose(ux, p.inflow, atol=1e-12)
        np.testing.assert_allclose(uy, 0, atol=1e-12)


def test_cylinder_at_rest():
    p = small_problem()
    state = lbm_advance(lbm_init(p), 20, check_every=10)
    ux, uy = state.velocity()
    mask = p.cylinder_mask()
    assert mask.any()
    assert not np.asarray(ux)[mask].any() and not np.asarray(uy)[mask].any()
    assert window(state).shape == (2, p.grid, p.grid)


def test_check_stable():
    p = small_problem()
    shape = (p.ny, p.nx)
    f = equilibrium(jnp.ones(shape), jnp.full(shape, 0.9), jnp.zeros(shape))
    state = LbmState(f, jnp.zeros((), dtype=jnp.int64), p)
    with pytest.raises(SimulationDivergedError) as excinfo:
        check_stable(state)
    assert isinstance(excinfo.value, FloatingPointError)
    assert check_stable(lbm_init(p)) < SOUND_SPEED


def test_gen_flow():
    p = small_problem()
    data = gen_flow(p, 10, seed=2)
    assert data.X.shape == (10, p.d_X) and data.Y.shape == (10, p.d_Y)
    assert data.provenance['tau'] == p.tau
    again = gen_flow(p, 10, seed=2)
    np.testing.assert_array_equal(data.X, again.X)


class TestPhysicsPenalty:
    def test_constant(self):
        div, smooth = physics_penalty(jnp.ones((2, 5, 5)))
        assert float(div) == 0 and float(smooth) == 0

    def test_shear_divergence_free(self):
        m = 6
        rows, cols = np.meshgrid(np.arange(m), np.arange(m), indexing='ij')
        field = np.stack([np.sin(rows), np.cos(cols)]).astype(np.float64)
        div, smooth = physics_penalty(field)
        assert float(div) == pytest.approx(0., abs=1e-14)
        assert float(smooth) > 0

    def test_linear(self):
        m = 5
        _, cols = np.meshgrid(np.arange(m), np.arange(m), indexing='ij')
        field = np.stack([cols, np.zeros_like(cols)]).astype(np.float64)
        div, smooth = physics_penalty(field)
        assert float(div) == pytest.approx(1.)
        assert float(smooth) == pytest.approx(0.5)

    @pytest.mark.parametrize('shape', [(2, 2, 2), (3, 4, 4), (2, 4, 5)],
                             ids=['small', 'components', 'rectangular'])
    def test_invalid(self, shape):
        with pytest.raises(ValueError):
            physics_penalty(jnp.zeros(shape))


def test_strouhal_number():
    n, dt = 1000, 10
    t = np.arange(n) * dt
    freq = 50 / (n * dt)
    signal = np.sin(2 * np.pi * freq * t)
    St = strouhal_number(signal, dt, diameter=32, velocity=0.1)
    assert St == pytest.approx(freq * 32 / 0.1)

    with pytest.raises(ValueError):
        strouhal_number(np.ones(100), dt, 32, 0.1)
    with pytest.raises(ValueError):
        strouhal_number(np.ones(3), dt, 32, 0.1)


def test_lbm_step_diverged():
    p = small_problem()
    shape = (p.ny, p.nx)
    f = equilibrium(jnp.ones(shape), jnp.full(shape, 0.9), jnp.zeros(shape))
    state = LbmState(f, jnp.zeros((), dtype=jnp.int64), p)
    with pytest.raises(SimulationDivergedError, match='step 1'):
        lbm_step(state)


def test_cylinder_wake_strouhal():
    p = FlowProblem()
    assert p.reynolds == 281.
    signal, dt = lift_signal(p, num_steps=10 * int(p.period_steps), sample_every=20)
    assert np.isfinite(signal).all()
    assert np.ptp(signal) > 1e-3 * p.inflow
    St = strouhal_number(signal, dt, p.diameter, p.inflow)
    assert 0.15 <= St <= 0.25
