import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qsnn.errors import DimensionError
from qsnn.tensor import as_tensor, conv2d_forward, dense_forward, relu

from oracles import conv2d_loops, dense_loops


def test_dense_identity():
    out = dense_forward([1, 2], [[1, 0], [0, 1]], [0, 0])
    np.testing.assert_array_equal(out, [1, 2])


def test_dense_zero_input_passes_bias():
    out = dense_forward([0, 0], np.random.default_rng(0).normal(size=(2, 2)), [3, -1])
    np.testing.assert_array_equal(out, [3, -1])


def test_dense_row_sum():
    np.testing.assert_array_equal(dense_forward([1, 1, 1], [[1, 2, 3]], [0]), [6])


def test_dense_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
        dense_forward([1, 2, 3], np.eye(2), [0, 0])


def test_dense_matches_loop_oracle(rng):
    for _ in range(20):
        m, n = rng.integers(1, 30, size=2)
        w, b, x = rng.normal(size=(m, n)), rng.normal(size=m), rng.normal(size=n)
        np.testing.assert_allclose(dense_forward(x, w, b), dense_loops(x, w, b), rtol=1e-5, atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_dense_is_affine(m, n, a, c, seed):
    r = np.random.default_rng(seed)
    w, b = r.normal(size=(m, n)), r.normal(size=m)
    x, y = r.normal(size=n), r.normal(size=n)
    f = lambda v: dense_forward(v, w, b)
    lhs = f(a * x + c * y)
    rhs = a * f(x) + c * f(y) + (1 - a - c) * as_tensor(b)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-4)


def test_conv_all_ones():
    out = conv2d_forward(np.ones((1, 3, 3)), np.ones((1, 1, 2, 2)), [0], 1)
    np.testing.assert_array_equal(out, np.full((1, 2, 2), 4.0))


def test_conv_stride_shape():
    assert conv2d_forward(np.zeros((1, 4, 4)), np.ones((1, 1, 2, 2)), [0], 2).shape == (1, 2, 2)


def test_conv_dqn_stack_shape(rng):
    x = rng.random((4, 84, 84))
    for k, c, size, stride in ((32, 4, 8, 4), (64, 32, 4, 2), (64, 64, 3, 1)):
        x = conv2d_forward(x, rng.normal(size=(k, c, size, size)) * 0.01, np.zeros(k), stride)
    # (84-8)//4+1 = 20, (20-4)//2+1 = 9, (9-3)//1+1 = 7
    assert x.shape == (64, 7, 7)


def test_conv_kernel_larger_than_input():
    with pytest.raises(DimensionError):
        conv2d_forward(np.zeros((1, 2, 2)), np.ones((1, 1, 3, 3)), [0], 1)


def test_conv_matches_loop_oracle(rng):
    for _ in range(25):
        c = int(rng.integers(1, 3))
        h, w = rng.integers(3, 11, size=2)
        kh, kw = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
        k, stride = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(size=(c, h, w)).astype(np.float32)
        kern = rng.normal(size=(k, c, kh, kw)).astype(np.float32)
        b = rng.normal(size=k).astype(np.float32)
        got = conv2d_forward(x, kern, b, stride)
        np.testing.assert_allclose(got, conv2d_loops(x, kern, b, stride), rtol=1e-5, atol=1e-5)


def test_conv_batch_matches_single(rng):
    x = rng.normal(size=(5, 3, 12, 12)).astype(np.float32)
    kern = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    batch = conv2d_forward(x, kern, b, 2)
    for i in range(5):
        np.testing.assert_allclose(batch[i], conv2d_forward(x[i], kern, b, 2), rtol=1e-6, atol=1e-6)


def test_relu_examples():
    np.testing.assert_array_equal(relu([-1, 0, 2]), [0, 0, 2])
    assert not relu(-np.arange(1, 6)).any()
    x = np.abs(np.random.default_rng(1).normal(size=(3, 4)))
    np.testing.assert_array_equal(relu(x), x.astype(np.float32))


@given(arrays(np.float32, st.integers(1, 50), elements=st.floats(-1e6, 1e6, width=32)))
def test_relu_idempotent(x):
    np.testing.assert_array_equal(relu(relu(x)), relu(x))


def test_tensor_rank_limits():
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((1, 1, 1, 1, 1)))
    assert as_tensor([1, 2]).dtype == np.float32
