import pytest
import numpy as np

from cwae.configuration import ModelConfig
from cwae.model import init_model
from cwae.tree_util import tree_digest, tree_named_leaves
from cwae.io_util import (write_checkpoint, read_checkpoint, load_params, write_dataset,
                          read_dataset, read_sidecar, file_digest)


def gen_model(widths=(4,), seed=0):
    return init_model(ModelConfig('cwae3', 2, 3, 2, 1, widths=widths), seed)


class TestCheckpoint:
    def test_load(self, tmp_path):
        model = gen_model()
        path = tmp_path / 'm.ckpt'
        write_checkpoint(path, model, meta={'note': 'x'})

        records = read_checkpoint(path)
        assert list(records) == [name for name, _ in tree_named_leaves(model)]
        loaded = load_params(path, gen_model(seed=1))
        assert tree_digest(loaded) == tree_digest(model)
        assert read_sidecar(path) == {'note': 'x'}

    def test_no_sidecar(self, tmp_path):
        path = tmp_path / 'm.ckpt'
        write_checkpoint(path, gen_model())
        assert read_sidecar(path) is None

    def test_bytes_stable(self, tmp_path):
        write_checkpoint(tmp_path / 'a.ckpt', gen_model())
        write_checkpoint(tmp_path / 'b.ckpt', gen_model())
        assert file_digest(tmp_path / 'a.ckpt') == file_digest(tmp_path / 'b.ckpt')

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'm.ckpt'
        path.write_bytes(b'NOPE\x01\x00\x00\x00')
        with pytest.raises(OSError):
            read_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / 'm.ckpt'
        path.write_bytes(b'CWAE\x02\x00\x00\x00')
        with pytest.raises(OSError, match='version'):
            read_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / 'm.ckpt'
        write_checkpoint(path, gen_model())
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(OSError):
            read_checkpoint(path)

    def test_shape_mismatch(self, tmp_path):
        path = tmp_path / 'm.ckpt'
        write_checkpoint(path, gen_model(widths=(4,)))
        with pytest.raises(OSError, match='shape'):
            load_params(path, gen_model(widths=(5,)))

    def test_names(self, tmp_path):
        path = tmp_path / 'p.ckpt'
        write_checkpoint(path, {'a': np.zeros(2), 'c': np.ones((1, 3))})
        with pytest.raises(OSError, match='missing'):
            load_params(path, {'a': np.zeros(2), 'b': np.zeros(1)})
        with pytest.raises(OSError, match='unexpected'):
            load_params(path, {'a': np.zeros(2)})


class TestDataset:
    def test_read(self, tmp_path):
        rng = np.random.default_rng(0)
        Y, X = rng.standard_normal((5, 2)), rng.standard_normal((5, 3))
        path = tmp_path / 'd.cwds'
        write_dataset(path, Y, X, meta={'seed': 3})
        Y2, X2, meta = read_dataset(path)
        np.testing.assert_array_equal(Y2, Y)
        np.testing.assert_array_equal(X2, X)
        assert meta == {'seed': 3}
        assert path.stat().st_size == 8 + 24 + 8 * 5 * 5

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / 'd.cwds'
        write_dataset(path, np.zeros((4, 1)), np.zeros((4, 2)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(OSError, match='size'):
            read_dataset(path)

    def test_unpaired(self, tmp_path):
        with pytest.raises(ValueError):
            write_dataset(tmp_path / 'd.cwds', np.zeros((4, 1)), np.zeros((3, 2)))
