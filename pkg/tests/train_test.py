import pytest
import numpy as np

from cwae.configuration import ModelConfig, TrainConfig, PenaltyConfig
from cwae.model import init_model, conditional_sample
from cwae.problems import SphericalFigure, gen_spherical
from cwae.train import TrainingDivergedError, train, trainable, merge
from cwae.tree_util import tree_digest
from cwae.io_util import load_params, read_sidecar
from cwae.test_util import gen_linear_dataset, check_close


def gen_setup(variant='cwae2', num=128, epochs=3, widths=(8,), **train_kwargs):
    data, _ = gen_linear_dataset(num, d_X=2, d_Y=1, seed=0)
    conf = ModelConfig(variant, d_Y=1, d_X=2, d_Z=1, d_U=2, widths=widths)
    model = init_model(conf, 0)
    cfg = TrainConfig(epochs=epochs, batch_size=32, lr=1e-2, seed=1, **train_kwargs)
    return model, data, cfg


def test_zero_epochs():
    model, data, cfg = gen_setup(epochs=0)
    trained, history, report = train(model, data, cfg)
    assert history == []
    assert report['final'] is None
    assert tree_digest(trained) == tree_digest(model)


def test_loss_decreases():
    model, data, cfg = gen_setup(epochs=40)
    _, history, report = train(model, data, cfg)
    assert len(history) == 40
    assert history[-1]['total'] < history[0]['total']
    assert report['final'] == history[-1]
    assert report['variant'] == 'cwae2'


def test_deterministic():
    model, data, cfg = gen_setup(epochs=2)
    a = train(model, data, cfg)[2]['param_hash']
    b = train(model, data, cfg)[2]['param_hash']
    c = train(model, data, cfg.replace(seed=2))[2]['param_hash']
    assert a == b
    assert a != c


def test_sequential():
    model, data, cfg = gen_setup(epochs=2, schedule='sequential')
    trained, history, _ = train(model, data, cfg)
    assert [r['stage'] for r in history] == ['observation'] * 2 + ['conditional'] * 2
    assert all(r['recon_x'] == 0 for r in history[:2])


@pytest.mark.parametrize('stage', ['joint', 'observation', 'conditional'])
def test_trainable_merge(stage):
    model, _, _ = gen_setup()
    params = trainable(model, stage)
    assert tree_digest(merge(model, params, stage)) == tree_digest(model)


def test_unknown_stage():
    model, _, _ = gen_setup()
    with pytest.raises(ValueError):
        trainable(model, 'decoder')


def test_js_penalty():
    model, data, cfg = gen_setup(epochs=2, penalty=PenaltyConfig(
        kind='js', disc_widths=(8,), disc_steps=2))
    _, history, _ = train(model, data, cfg)
    assert all(r['disc_loss'] is not None and np.isfinite(r['disc_loss'])
               for r in history)


def test_diverged():
    model, data, cfg = gen_setup(epochs=2, diverge_threshold=1e-12)
    with pytest.raises(TrainingDivergedError) as excinfo:
        train(model, data, cfg)
    assert isinstance(excinfo.value, FloatingPointError)
    assert excinfo.value.history == []


def test_dims_mismatch():
    model, _, cfg = gen_setup()
    data, _ = gen_linear_dataset(64, d_X=3, d_Y=1)
    with pytest.raises(ValueError):
        train(model, data, cfg)


def test_checkpoint(tmp_path):
    model, data, cfg = gen_setup(epochs=2)
    path = tmp_path / 'cwae2.ckpt'
    trained, history, report = train(model, data, cfg, checkpoint=path)

    loaded = load_params(path, model)
    check_close(loaded, trained)
    assert tree_digest(loaded) == report['param_hash']

    meta = read_sidecar(path)
    assert meta['param_hash'] == report['param_hash']
    assert ModelConfig.from_dict(meta['model']) == model.conf
    assert TrainConfig.from_dict(meta['train']) == cfg
    assert len(meta['loss_history']) == len(history)


def test_linear_gaussian_converges():
    data, _ = gen_linear_dataset(512, d_X=1, d_Y=1, seed=3)
    conf = ModelConfig('cwae1', d_Y=1, d_X=1, d_Z=1, d_U=1, widths=())
    model = init_model(conf, 0)
    cfg = TrainConfig(epochs=500, batch_size=128, lr=1e-2, seed=0)
    _, history, _ = train(model, data, cfg)
    assert len(history) * (512 // 128) == 2000
    assert history[-1]['total'] < 0.1 * history[0]['total']


def test_spherical_radius():
    p = SphericalFigure()
    data = gen_spherical(p, 2000, seed=0)
    conf = ModelConfig('cwae1', d_Y=1, d_X=2, d_Z=1, d_U=2, widths=(32, 32))
    model = init_model(conf, 0)
    cfg = TrainConfig(epochs=150, batch_size=128, lr=3e-3, seed=0)
    trained, _, _ = train(model, data, cfg)

    x = np.asarray(conditional_sample(trained, [1.], 2000, seed=1))
    radius = np.linalg.norm(x, axis=1).mean()
    assert radius == pytest.approx(1., rel=0.1)
