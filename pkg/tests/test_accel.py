"""The numba kernels and their numpy fallbacks must agree exactly."""

import numpy as np
import pytest

from rforge import _accel

pytestmark = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba unavailable")


def test_edt_rows_parity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = np.where(rng.random((7, 13)) < 0.6, _accel._INF, 0.0)
        assert np.array_equal(_accel.edt_rows(f, jit=True), _accel.edt_rows(f, jit=False))


def test_col2im_parity():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 6, 5, 3))
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    a = _accel.im2col3(xp, 6, 5)
    d = rng.standard_normal(a.shape)
    assert np.allclose(_accel.col2im3(d, 2, 6, 5, 3, jit=True), _accel.col2im3(d, 2, 6, 5, 3, jit=False),
                       rtol=0, atol=1e-12)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 4, 4, 2))
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = _accel.im2col3(xp, 4, 4)
    d = rng.standard_normal(cols.shape)
    assert np.sum(cols * d) == pytest.approx(np.sum(x * _accel.col2im3(d, 1, 4, 4, 2)), rel=1e-12)


def test_maxpool_parity_with_ties():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 3, (2, 6, 8, 4)).astype(np.float64)
    ya, aa = _accel.maxpool2(x, jit=True)
    yb, ab = _accel.maxpool2(x, jit=False)
    assert np.array_equal(ya, yb) and np.array_equal(aa, ab)
    d = rng.standard_normal(ya.shape)
    assert np.array_equal(_accel.maxpool2_back(d, aa, jit=True), _accel.maxpool2_back(d, ab, jit=False))


def test_backend_switch_gives_same_training_step():
    from rforge import realnet
    rng = np.random.default_rng(4)
    x = rng.random((4, 8, 8, 3))
    y = np.array([0, 1, 0, 1])
    p = realnet.init_params("in8x8x3|conv3-4|relu|pool2|fc4|relu|fc1", seed=4)
    cfg = realnet.TrainConfig(max_iterations=3, batch_size=4)
    prev = _accel.set_backend(False)
    try:
        a = realnet.train_arrays(p, x, y, cfg)
    finally:
        _accel.set_backend(prev)
    b = realnet.train_arrays(p, x, y, cfg)
    for k, v in a.params.tensors().items():
        assert np.allclose(v, b.params.tensors()[k], rtol=0, atol=1e-6)
