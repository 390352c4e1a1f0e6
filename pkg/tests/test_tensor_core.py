import numpy as np
import pytest

from utils.errors import ShapeError
from utils.tensor_core import (Precision, coordinate, create, he_init, linear_index, make_rng, map2,
                               matmul, pad_spatial, reduce, strides_for)


def test_create_fills_and_dtype():
    t = create((2, 3), 1.5)
    assert t.dtype == np.float32
    np.testing.assert_array_equal(t, np.full((2, 3), 1.5))
    wide = create((4,), [1, 2, 3, 4], Precision.WIDE)
    assert wide.dtype == np.float64


@pytest.mark.parametrize("shape", [(), (2, 0), (-1, 3)])
def test_create_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        create(shape)


def test_create_rejects_wrong_fill_length():
    with pytest.raises(ShapeError):
        create((2, 2), [1.0, 2.0, 3.0])


def test_row_major_indexing():
    shape = (2, 3, 4)
    assert strides_for(shape) == (12, 4, 1)
    assert linear_index((1, 2, 3), shape) == 23
    assert coordinate(23, shape) == (1, 2, 3)
    for i in range(24):
        assert linear_index(coordinate(i, shape), shape) == i
    with pytest.raises(ShapeError):
        linear_index((2, 0, 0), shape)


def test_he_init_statistics_and_determinism():
    a = he_init((200, 300), fan_in=200, rng=make_rng(5))
    b = he_init((200, 300), fan_in=200, rng=make_rng(5))
    np.testing.assert_array_equal(a, b)
    assert abs(float(a.mean())) < 0.01
    assert abs(float(a.std()) - np.sqrt(2.0 / 200)) < 0.005


def test_map2_and_reduce():
    a = np.arange(6, dtype=np.float64).reshape(2, 3)
    np.testing.assert_array_equal(map2(a, a, "add"), 2 * a)
    np.testing.assert_array_equal(map2(a, 2.0, "mul"), 2 * a)
    with pytest.raises(ShapeError):
        map2(a, np.ones((3, 2)), "sub")
    np.testing.assert_array_equal(reduce(a, [1], "sum"), [3.0, 12.0])
    np.testing.assert_array_equal(reduce(a, [0], "max"), [3.0, 4.0, 5.0])
    assert reduce(a, [0, 1], "mean") == pytest.approx(2.5)
    with pytest.raises(ShapeError):
        reduce(a, [2], "sum")


def test_matmul_against_triple_loop(rng):
    for _ in range(5):
        m, k, n = rng.integers(1, 7, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        expected = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                for p in range(k):
                    expected[i, j] += a[i, p] * b[p, j]
        np.testing.assert_allclose(matmul(a, b), expected, atol=1e-6)


def test_matmul_rejects_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_pad_spatial_uses_sentinel():
    x = np.ones((1, 2, 2, 1))
    out = pad_spatial(x, 1, 0, 0, 1, value=-np.inf)
    assert out.shape == (1, 3, 3, 1)
    assert np.isneginf(out[0, 0, 0, 0])
    assert out[0, 1, 0, 0] == 1.0
    with pytest.raises(ShapeError):
        pad_spatial(np.ones((2, 2)), 1, 1, 1, 1)
