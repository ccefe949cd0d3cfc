import numpy as np
import pytest

from rend2real.serialization import ContainerError, read_arrays, write_arrays


def test_round_trip_is_exact(tmp_path):
    arrays = {'a': np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32), 'b': np.arange(5.0)}
    write_arrays(tmp_path / 'x.r2r', arrays, {'kind': 'test', 'n': 2})
    back, meta = read_arrays(tmp_path / 'x.r2r')
    assert meta['kind'] == 'test' and meta['n'] == 2
    np.testing.assert_array_equal(back['a'], arrays['a'])
    np.testing.assert_array_equal(back['b'], arrays['b'].astype(np.float32))


def test_bad_magic_rejected(tmp_path):
    (tmp_path / 'x.r2r').write_bytes(b'NOTMAGIC' + b'\0' * 16)
    with pytest.raises(ContainerError):
        read_arrays(tmp_path / 'x.r2r')


def test_truncated_rejected(tmp_path):
    write_arrays(tmp_path / 'x.r2r', {'a': np.ones((10, 10), np.float32)})
    data = (tmp_path / 'x.r2r').read_bytes()
    (tmp_path / 'x.r2r').write_bytes(data[:-40])
    with pytest.raises(ContainerError):
        read_arrays(tmp_path / 'x.r2r')


def test_no_temp_file_left(tmp_path):
    write_arrays(tmp_path / 'x.r2r', {'a': np.zeros(2, np.float32)})
    assert [p.name for p in tmp_path.iterdir()] == ['x.r2r']
