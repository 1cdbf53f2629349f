import pytest
from jax import random

from cwae.configuration import ModelConfig, TrainConfig
from cwae.model import init_model, _default_critic
from cwae.train import _stage_grad
from cwae.lbm import FlowProblem, lbm_init, lbm_run
from cwae.metrics import w2_exact, w2_sliced
from cwae.test_util import gen_gaussian_pair


@pytest.mark.benchmark(min_rounds=1)
@pytest.mark.parametrize('variant', ModelConfig.VARIANTS)
class TestBenchmarkTrainStep:
    def test_benchmark_train_step(self, benchmark, variant):
        args = self.setup_train_step(variant)
        benchmark(self.run_train_step, *args)

    def setup_train_step(self, variant):
        conf = ModelConfig(variant, 12, 30, 12, 6, widths=(64, 64))
        model = init_model(conf, 0)
        cfg = TrainConfig(batch_size=128)
        key_y, key_x, key_r = random.split(random.PRNGKey(0), 3)
        Y = random.normal(key_y, (128, conf.d_Y))
        X = random.normal(key_x, (128, conf.d_X))
        ref = model.latent.sample(key_r, 128)
        critic = _default_critic(cfg)
        self.run_train_step(model, Y, X, ref, cfg, critic)  # compile
        return model, Y, X, ref, cfg, critic

    def run_train_step(self, model, Y, X, ref, cfg, critic):
        (total, _), grads = _stage_grad(model, model, Y, X, ref, cfg, critic,
                                        stage='joint')
        total.block_until_ready()  # wait for async ops to complete


@pytest.mark.benchmark(min_rounds=1)
@pytest.mark.parametrize('grid', [24, 48])
class TestBenchmarkLbm:
    def test_benchmark_lbm_run(self, benchmark, grid):
        state = lbm_init(FlowProblem(grid=grid, diameter=grid))
        lbm_run(state, 100).f.block_until_ready()  # compile
        benchmark(self.run_lbm, state)

    def run_lbm(self, state):
        lbm_run(state, 100).f.block_until_ready()


@pytest.mark.benchmark(min_rounds=1)
@pytest.mark.parametrize('num', [250, 1000])
class TestBenchmarkW2:
    def test_benchmark_w2_exact(self, benchmark, num):
        a, b = gen_gaussian_pair(num, 10, shift=1.)
        benchmark(w2_exact, a, b)

    def test_benchmark_w2_sliced(self, benchmark, num):
        a, b = gen_gaussian_pair(num, 10, shift=1.)
        benchmark(w2_sliced, a, b)
