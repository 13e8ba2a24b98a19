"""Dense numeric substrate: float32 arrays, dense and strided valid convolution, ReLU.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 in C order. The
helpers here validate shapes and give every caller the same dtype.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DimensionError

DTYPE = np.float32


def as_tensor(x, ndim=None):
    """Return ``x`` as a contiguous float32 array, checking its rank."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if not 1 <= arr.ndim <= 4:
        raise DimensionError(f"tensor must have 1-4 dimensions, got shape {arr.shape}")
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-D tensor, got shape {arr.shape}")
    return arr


def dense_forward(x, weights, bias):
    """``bias + weights @ x`` for a 1-D input (or a batch of rows)."""
    weights = as_tensor(weights, 2)
    bias = as_tensor(bias, 1)
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim not in (1, 2) or x.shape[-1] != weights.shape[1] or bias.shape[0] != weights.shape[0]:
        raise DimensionError(
            f"dense shapes do not agree: input {x.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    return x @ weights.T + bias


def conv_output_size(size, kernel, stride):
    return (size - kernel) // stride + 1


def _patches(x, kh, kw, stride):
    # (C, H, W) -> (H', W', C, kh, kw) view, no copy
    c, h, w = x.shape
    oh, ow = conv_output_size(h, kh, stride), conv_output_size(w, kw, stride)
    sc, sh, sw = x.strides
    return as_strided(x, (oh, ow, c, kh, kw), (sh * stride, sw * stride, sc, sh, sw), writeable=False)


def conv2d_forward(x, kernels, bias, stride=1):
    """Valid (unpadded) cross-correlation.

    ``x`` is C×H×W or a batch N×C×H×W; ``kernels`` is K×C×kh×kw. Returns
    K×H'×W' (or N×K×H'×W') with H' = (H - kh) // stride + 1.
    """
    kernels = as_tensor(kernels, 4)
    bias = as_tensor(bias, 1)
    x = np.ascontiguousarray(x, dtype=DTYPE)
    if x.ndim == 4:
        return _conv2d_batch(x, kernels, bias, stride)
    if x.ndim != 3:
        raise DimensionError(f"conv input must be C×H×W, got shape {x.shape}")
    if stride < 1:
        raise DimensionError(f"stride must be positive, got {stride}")
    k, c, kh, kw = kernels.shape
    if x.shape[0] != c or bias.shape[0] != k:
        raise DimensionError(
            f"conv shapes do not agree: input {x.shape}, kernels {kernels.shape}, bias {bias.shape}"
        )
    if x.shape[1] < kh or x.shape[2] < kw:
        raise DimensionError(f"kernel {kernels.shape} larger than input {x.shape}")
    cols = _patches(x, kh, kw, stride)
    oh, ow = cols.shape[:2]
    out = cols.reshape(oh * ow, c * kh * kw) @ kernels.reshape(k, -1).T
    return np.ascontiguousarray(out.T.reshape(k, oh, ow)) + bias[:, None, None]


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), DTYPE(0))


def _conv2d_batch(x, kernels, bias, stride, chunk=64):
    k, c, kh, kw = kernels.shape
    if x.shape[1] != c or x.shape[2] < kh or x.shape[3] < kw:
        raise DimensionError(f"conv shapes do not agree: input {x.shape}, kernels {kernels.shape}")
    n, _, h, w = x.shape
    oh, ow = conv_output_size(h, kh, stride), conv_output_size(w, kw, stride)
    flat = kernels.reshape(k, -1).T
    out = np.empty((n, k, oh, ow), dtype=DTYPE)
    sn, sc, sh, sw = x.strides
    for start in range(0, n, chunk):
        part = x[start:start + chunk]
        m = part.shape[0]
        cols = as_strided(part, (m, oh, ow, c, kh, kw),
                          (sn, sh * stride, sw * stride, sc, sh, sw), writeable=False)
        res = cols.reshape(m * oh * ow, c * kh * kw) @ flat
        out[start:start + m] = res.reshape(m, oh, ow, k).transpose(0, 3, 1, 2)
    return out + bias[None, :, None, None]
