"""Differentiable layer primitives: convolution, sampling, normalization."""
from __future__ import annotations

from itertools import product
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from mvcount.errors import DomainError, ShapeError
from mvcount.numerics.tensor import Tensor, as_tensor, make_result, sqrt, tsum, square

IntOrTuple = Union[int, Sequence[int]]


def _tuple(value: IntOrTuple, n: int) -> tuple:
    if isinstance(value, (int, np.integer)):
        return (int(value),) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ShapeError(f"expected {n} values, got {value}")
    return value


# -- softmax ------------------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    x = as_tensor(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise DomainError("softmax of an empty input")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward, "softmax")


def masked_softmax(x, mask: np.ndarray, axis: int = 0) -> Tensor:
    """Softmax over the entries of ``axis`` where ``mask`` is true.

    Masked-out entries receive exactly zero; slices with no true entry are all zero.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"mask shape {mask.shape} differs from scores {x.shape}")
    masked = np.where(mask, x.data, -np.inf)
    peak = np.max(masked, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.where(mask, np.exp(np.where(mask, x.data - peak, 0.0)), 0.0)
    total = e.sum(axis=axis, keepdims=True)
    out = e / np.where(total > 0, total, 1.0)
    out = out.astype(x.dtype, copy=False)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return make_result(out, (x,), backward, "masked_softmax")


# -- normalization --------------------------------------------------------------

def layer_norm(x, gamma, beta, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize along ``axis``; ``gamma``/``beta`` must broadcast against ``x``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = gg = gb = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv * (
                gxhat
                - gxhat.mean(axis=axis, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True)
            )
        if gamma.requires_grad:
            gg = _reduce_to(g * xhat, gamma.shape)
        if beta.requires_grad:
            gb = _reduce_to(g, beta.shape)
        return gx, gg, gb

    return make_result(out, (x, gamma, beta), backward, "layer_norm")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    from mvcount.numerics.tensor import unbroadcast

    return unbroadcast(g, shape)


# -- convolution ----------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(xp: np.ndarray, kernel: tuple, stride: tuple) -> tuple:
    """Patches of padded ``xp`` ([C, *S]) as a [prod(kernel)*C, prod(out)] matrix.

    Rows run over kernel offsets first, then channels, so each offset's block is
    contiguous for :func:`_col2im`.
    """
    n = len(kernel)
    win = sliding_window_view(xp, kernel, axis=tuple(range(1, n + 1)))
    win = win[(slice(None),) + tuple(slice(None, None, s) for s in stride)]
    out_shape = win.shape[1 : n + 1]
    order = list(range(n + 1, 2 * n + 1)) + [0] + list(range(1, n + 1))
    cols = np.ascontiguousarray(win.transpose(order)).reshape(-1, int(np.prod(out_shape)))
    return cols, out_shape


def _col2im(cols: np.ndarray, channels: int, padded_shape: tuple, kernel: tuple,
            stride: tuple, out_shape: tuple) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patch columns back onto the padded grid."""
    cols = cols.reshape(tuple(kernel) + (channels,) + tuple(out_shape))
    full = np.zeros((channels,) + tuple(padded_shape), dtype=cols.dtype)
    for offs in product(*(range(k) for k in kernel)):
        target = (slice(None),) + tuple(
            slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(offs, stride, out_shape)
        )
        full[target] += cols[offs]
    return full


def _kernel_major(w: np.ndarray) -> np.ndarray:
    """[A, B, *K] -> [A, prod(K)*B], matching the row order of :func:`_im2col`."""
    return np.moveaxis(w, 1, -1).reshape(w.shape[0], -1)


def _from_kernel_major(g: np.ndarray, shape: tuple) -> np.ndarray:
    return np.moveaxis(g.reshape((shape[0],) + tuple(shape[2:]) + (shape[1],)), -1, 1)


def conv(x, weight, bias=None, stride: IntOrTuple = 1, pad: IntOrTuple = 0) -> Tensor:
    """N-d cross-correlation of a channel-first input ``x`` [C_in, *S].

    ``weight`` is [C_out, C_in, *K] with odd kernel sizes; output spatial size per
    axis is ``floor((S + 2*pad - K)/stride) + 1``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    n = weight.ndim - 2
    if x.ndim != n + 1:
        raise ShapeError(f"conv: input rank {x.ndim} incompatible with {n}-d kernel")
    c_out, c_in = weight.shape[:2]
    if x.shape[0] != c_in:
        raise ShapeError(f"conv: input has {x.shape[0]} channels, kernel expects {c_in}")
    kernel = tuple(weight.shape[2:])
    stride, pad = _tuple(stride, n), _tuple(pad, n)
    if any(k % 2 == 0 for k in kernel):
        raise ShapeError(f"conv: kernel size must be odd, got {kernel}")
    if any(s + 2 * p < k for s, p, k in zip(x.shape[1:], pad, kernel)):
        raise ShapeError(f"conv: kernel {kernel} larger than padded input {x.shape[1:]}")
    if any(s < 1 for s in stride):
        raise ShapeError("conv: stride must be positive")

    xp = np.pad(x.data, [(0, 0)] + [(p, p) for p in pad]) if any(pad) else x.data
    cols, out_shape = _im2col(xp, kernel, stride)
    wmat = _kernel_major(weight.data)
    out = (wmat @ cols).reshape((c_out,) + tuple(out_shape))
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape((c_out,) + (1,) * n)
        parents.append(bias)

    def backward(g):
        gm = g.reshape(c_out, -1)
        gx = gw = None
        if x.requires_grad:
            gcols = wmat.T @ gm
            full = _col2im(gcols, c_in, xp.shape[1:], kernel, stride, out_shape)
            crop = (slice(None),) + tuple(slice(p, p + s) for p, s in zip(pad, x.shape[1:]))
            gx = full[crop]
        if weight.requires_grad:
            gw = _from_kernel_major(gm @ cols.T, weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gm.sum(axis=1) if bias.requires_grad else None)
        return tuple(grads)

    return make_result(out, parents, backward, f"conv{n}d")


def conv_transpose(x, weight, bias=None, stride: IntOrTuple = 2, pad: IntOrTuple = 1,
                   output_padding: IntOrTuple = 1) -> Tensor:
    """Transposed convolution, the exact adjoint of :func:`conv` with the same weight.

    ``weight`` is [C_in, C_out, *K] (``conv`` reads the same array as [C_out', C_in', *K]).
    Output size per axis is ``(S - 1)*stride - 2*pad + K + output_padding``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    n = weight.ndim - 2
    if x.ndim != n + 1:
        raise ShapeError(f"conv_transpose: input rank {x.ndim} incompatible with {n}-d kernel")
    c_in, c_out = weight.shape[:2]
    if x.shape[0] != c_in:
        raise ShapeError(f"conv_transpose: input has {x.shape[0]} channels, kernel expects {c_in}")
    kernel = tuple(weight.shape[2:])
    stride, pad, opad = _tuple(stride, n), _tuple(pad, n), _tuple(output_padding, n)
    if any(o >= s for o, s in zip(opad, stride)) or any(o > p for o, p in zip(opad, pad)):
        raise ShapeError(f"conv_transpose: incompatible output_padding {opad} for stride {stride}, pad {pad}")
    in_shape = x.shape[1:]
    full_shape = tuple((m - 1) * s + k for m, s, k in zip(in_shape, stride, kernel))
    out_shape = tuple(f - 2 * p + o for f, p, o in zip(full_shape, pad, opad))
    if any(o <= 0 for o in out_shape):
        raise ShapeError("conv_transpose: empty output")

    wmat = _kernel_major(weight.data)
    xflat = x.data.reshape(c_in, -1)
    cols = wmat.T @ xflat
    full = _col2im(cols, c_out, full_shape, kernel, stride, in_shape)
    crop = (slice(None),) + tuple(slice(p, p + o) for p, o in zip(pad, out_shape))
    out = np.ascontiguousarray(full[crop])
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape((c_out,) + (1,) * n)
        parents.append(bias)

    def backward(g):
        gfull = np.zeros((c_out,) + full_shape, dtype=g.dtype)
        gfull[crop] = g
        gcols, _ = _im2col(gfull, kernel, stride)
        gx = (wmat @ gcols).reshape(x.shape) if x.requires_grad else None
        gw = _from_kernel_major(xflat @ gcols.T, weight.shape) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(c_out, -1).sum(axis=1) if bias.requires_grad else None)
        return tuple(grads)

    return make_result(out, parents, backward, f"conv_transpose{n}d")


def conv3d(x, weight, bias=None, stride: IntOrTuple = 1, pad: IntOrTuple = 0) -> Tensor:
    if as_tensor(weight).ndim != 5:
        raise ShapeError("conv3d expects a [C_out, C_in, k, k, k] kernel")
    return conv(x, weight, bias, stride, pad)


def conv2d(x, weight, bias=None, stride: IntOrTuple = 1, pad: IntOrTuple = 0) -> Tensor:
    if as_tensor(weight).ndim != 4:
        raise ShapeError("conv2d expects a [C_out, C_in, k, k] kernel")
    return conv(x, weight, bias, stride, pad)


def deconv3d(x, weight, bias=None, stride: int = 2) -> Tensor:
    """Stride-2 transposed 3-D convolution that exactly doubles every spatial dim."""
    weight = as_tensor(weight)
    if weight.ndim != 5:
        raise ShapeError("deconv3d expects a [C_in, C_out, k, k, k] kernel")
    if stride != 2:
        raise ShapeError("deconv3d supports stride 2 only")
    k = weight.shape[2]
    if weight.shape[2:] != (k, k, k) or k % 2 == 0:
        raise ShapeError("deconv3d expects a cubic odd kernel")
    return conv_transpose(x, weight, bias, stride=2, pad=(k - 1) // 2, output_padding=1)


def upsample_nearest(x, factor: int = 2) -> Tensor:
    """Repeat every spatial cell of a channel-first tensor ``factor`` times per axis."""
    x = as_tensor(x)
    n = x.ndim - 1
    out = x.data
    for axis in range(1, n + 1):
        out = np.repeat(out, factor, axis=axis)

    def backward(g):
        shape = [x.shape[0]]
        for size in x.shape[1:]:
            shape += [size, factor]
        return (g.reshape(shape).sum(axis=tuple(range(2, 2 * n + 1, 2))),)

    return make_result(out, (x,), backward, "upsample_nearest")


# -- bilinear sampling -----------------------------------------------------------

def grid_sample(feature, u, v) -> Tensor:
    """Bilinearly sample a [C, H, W] map at pixel coordinates ``(u, v)``.

    ``u`` indexes columns and ``v`` rows; both may be scalars, arrays or tensors of
    a common shape S and the result has shape S + (C,). Each of the four lattice
    neighbours outside ``[0, W-1] x [0, H-1]`` contributes zero.
    """
    feature = as_tensor(feature)
    if feature.ndim != 3:
        raise ShapeError("grid_sample expects a [C, H, W] feature map")
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise ShapeError("grid_sample: u and v must share a shape")
    c, h, w = feature.shape
    sample_shape = u.shape
    uu = u.data.reshape(-1).astype(feature.dtype, copy=False)
    vv = v.data.reshape(-1).astype(feature.dtype, copy=False)
    x0 = np.floor(uu)
    y0 = np.floor(vv)
    fx = uu - x0
    fy = vv - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    fmat = feature.data.reshape(c, h * w).T

    corners = []
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        xi, yi = x0 + dx, y0 + dy
        valid = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)
        idx = np.where(valid, yi * w + xi, 0)
        vals = fmat[idx] * valid[:, None]
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        corners.append((idx, valid, vals, wx, wy))
    out = sum(vals * (wx * wy)[:, None] for _, _, vals, wx, wy in corners)
    out = out.reshape(sample_shape + (c,))

    def backward(g):
        g2 = g.reshape(-1, c)
        gf = gu = gv = None
        if feature.requires_grad:
            n = g2.shape[0]
            rows = np.concatenate([np.arange(n)] * 4)
            cols = np.concatenate([idx for idx, *_ in corners])
            weights = np.concatenate([valid * wx * wy for _, valid, _, wx, wy in corners])
            interp = sp.csr_matrix((weights, (rows, cols)), shape=(n, h * w))
            gf = np.ascontiguousarray((interp.T @ g2).T).reshape(c, h, w)
        if u.requires_grad or v.requires_grad:
            (_, _, f00, _, _), (_, _, f10, _, _), (_, _, f01, _, _), (_, _, f11, _, _) = corners
            if u.requires_grad:
                du = (1.0 - fy)[:, None] * (f10 - f00) + fy[:, None] * (f11 - f01)
                gu = np.sum(g2 * du, axis=1).reshape(sample_shape)
            if v.requires_grad:
                dv = (1.0 - fx)[:, None] * (f01 - f00) + fx[:, None] * (f11 - f10)
                gv = np.sum(g2 * dv, axis=1).reshape(sample_shape)
        return gf, gu, gv

    return make_result(out, (feature, u, v), backward, "grid_sample")


def bilinear_sample2d(feature, u: float, v: float) -> Tensor:
    """Sample one point of a [C, H, W] map; returns a length-C vector."""
    return grid_sample(feature, np.asarray(u, dtype=float), np.asarray(v, dtype=float))


# -- norms -----------------------------------------------------------------------

def l2_norm(x) -> Tensor:
    """Euclidean norm over all entries (gradient taken as zero at the origin)."""
    return sqrt(tsum(square(x)))
