import numpy as np
import pytest

from polarsep import _kernels


def test_bilinear_backends_agree(rng):
    img = rng.random((20, 30, 3))
    sy = rng.uniform(-3, 23, size=(15, 17))
    sx = rng.uniform(-3, 33, size=(15, 17))
    a = _kernels.bilinear_sample_numba(img, sy, sx)
    b = _kernels.bilinear_sample_numpy(img, sy, sx)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_bilinear_integer_grid_is_exact(backend, rng):
    img = rng.random((9, 11, 1))
    yy, xx = np.meshgrid(np.arange(9.0), np.arange(11.0), indexing="ij")
    assert np.array_equal(_kernels.bilinear_sample(img, yy, xx), img)


def test_bilinear_clamps_to_edges(backend):
    img = np.arange(12, dtype=np.float64).reshape(3, 4, 1)
    out = _kernels.bilinear_sample(img, np.array([[-5.0, 10.0]]), np.array([[-5.0, 10.0]]))
    assert out[0, 0, 0] == img[0, 0, 0]
    assert out[0, 1, 0] == img[-1, -1, 0]


def test_bilinear_midpoint(backend):
    img = np.array([[[0.0], [1.0]], [[2.0], [3.0]]])
    out = _kernels.bilinear_sample(img, np.array([[0.5]]), np.array([[0.5]]))
    assert out[0, 0, 0] == pytest.approx(1.5)


def test_canonical_phase_backends_agree(rng):
    mean = rng.random((13, 7, 3))
    c1 = rng.normal(size=mean.shape) * 0.1
    c2 = rng.normal(size=mean.shape) * 0.1
    c1[0, 0] = c2[0, 0] = 0.0
    na = _kernels.canonical_phase_numba(mean, c1, c2)
    nb = _kernels.canonical_phase_numpy(mean, c1, c2)
    for x, y in zip(na, nb):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-13)
    assert na[3][0, 0] and nb[3][0, 0]
