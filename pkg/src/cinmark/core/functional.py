"""Differentiable operators.

All ops take and return :class:`Tensor`. Constants (numpy arrays, floats)
are accepted where noted and never receive gradients. Images are NCHW.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result


class ShapeError(ValueError):
    """Operand extents are incompatible with an op."""


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape

    def adjoint(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), adjoint)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    sa, sb = a.shape, b.shape

    def adjoint(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), adjoint)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _const(a, b)
    b = _const(b, a)
    ad, bd = a.data, b.data

    def adjoint(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), adjoint)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(xd * xd, (x,), lambda g: (2 * g * xd,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,))


def exp_clamped(x: Tensor, alpha: float = 2.0) -> Tensor:
    """``exp(alpha * tanh(x / alpha))``: exponent bounded to [-alpha, alpha]."""
    t = np.tanh(x.data / alpha)
    y = np.exp(alpha * t)
    return make_result(y, (x,), lambda g: (g * y * (1 - t * t),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return make_result(y, (x,), lambda g: (g * y * (1 - y),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1 / (1 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1 + ez)
    return out


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    y = np.where(xd > 0, xd, xd * np.asarray(slope, dtype=xd.dtype))

    def adjoint(g):
        return (np.where(xd > 0, g, g * np.asarray(slope, dtype=g.dtype)),)

    return make_result(y, (x,), adjoint)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; the result is a fresh leaf, so no adjoint reaches ``x``."""
    return Tensor(x.data, dtype=x.dtype)


# ---------------------------------------------------------------------------
# reductions and structure
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), adjoint)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[a] for a in axes]))

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_result(np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), adjoint)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return make_result(y, (x,), lambda g: (g.reshape(old),))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def adjoint(g):
        out = np.zeros(shape, dtype=dtype)
        if _is_advanced(index):
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return make_result(np.array(x.data[index]), (x,), adjoint)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def adjoint(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, adjoint)


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> list:
    """Split along ``axis`` into pieces of the given sizes."""
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ShapeError(f"split sizes {list(sizes)} do not cover axis {axis} of extent {x.shape[axis]}")
    out, start = [], 0
    for n in sizes:
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + n)
        out.append(getitem(x, tuple(idx)))
        start += n
    return out


def channel_concat(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=1)


def channel_split(x: Tensor, sizes: Sequence[int]) -> list:
    return split(x, sizes, axis=1)


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``x`` of shape (B, N) and ``weight`` (M, N)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear inner extents differ: input axis 1 = {x.shape[1]}, weight axis 1 = {weight.shape[1]}")
    xd, wd = x.data, weight.data
    y = xd @ wd.T
    parents = [x, weight]
    if bias is not None:
        y = y + bias.data
        parents.append(bias)

    def adjoint(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_result(y, parents, adjoint)


fully_connected = linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def adjoint(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return (_unbroadcast(ga, ad.shape) if ga is not None else None,
                _unbroadcast(gb, bd.shape) if gb is not None else None)

    return make_result(ad @ bd, (a, b), adjoint)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input, (Cout, Cin, k, k) weight."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    O, Ci, kh, kw = weight.shape
    if C != Ci:
        raise ShapeError(f"conv2d channel mismatch: input axis 1 = {C}, weight axis 1 = {Ci}")
    if kh != kw:
        raise ShapeError(f"conv2d needs square kernels, got weight axes 2,3 = {kh}x{kw}")
    k = kh
    if not (k % 2 == 1 or (k == stride and padding == 0)):
        raise ShapeError(f"conv2d kernel {k} needs to be odd, or equal to the stride with no padding")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < k or Wp < k:
        raise ShapeError(f"conv2d input axes 2,3 = {H}x{W} smaller than kernel {k}")
    if k == stride and padding == 0:
        if H % k or W % k:
            raise ShapeError(f"conv2d patchify needs axes 2,3 divisible by {k}, got {H}x{W}")
        return _conv_patch(x, weight, bias, k)
    if stride == 1:
        return _conv_shift(x, weight, bias, padding)
    return _conv_im2col(x, weight, bias, stride, padding)


def _pad(xd: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return xd
    return np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_shift(x, weight, bias, p):
    # One matmul over the padded grid for all k*k taps, then shifted sums.
    # Avoids materializing an im2col matrix.
    B, C, H, W = x.shape
    O, _, k, _ = weight.shape
    Hp, Wp = H + 2 * p, W + 2 * p
    Ho, Wo = Hp - k + 1, Wp - k + 1
    xp = _pad(x.data, p).reshape(B, C, Hp * Wp)
    wd = weight.data
    wall = wd.transpose(2, 3, 0, 1).reshape(k * k * O, C)
    y = np.matmul(wall, xp).reshape(B, k, k, O, Hp, Wp)
    out = np.zeros((B, O, Ho, Wo), dtype=y.dtype)
    for i in range(k):
        for j in range(k):
            out += y[:, i, j, :, i:i + Ho, j:j + Wo]
    if bias is not None:
        out += bias.data[None, :, None, None]
    parents = [x, weight] + ([bias] if bias is not None else [])

    def adjoint(g):
        gy = np.zeros((B, k, k, O, Hp, Wp), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gy[:, i, j, :, i:i + Ho, j:j + Wo] = g
        gy = gy.reshape(B, k * k * O, Hp * Wp)
        gx = gw = None
        if x.requires_grad:
            gxp = np.matmul(wall.T, gy).reshape(B, C, Hp, Wp)
            gx = np.ascontiguousarray(gxp[:, :, p:p + H, p:p + W])
        if weight.requires_grad:
            gwall = np.zeros((k * k * O, C), dtype=g.dtype)
            for b in range(B):
                gwall += gy[b] @ xp[b].T
            gw = gwall.reshape(k, k, O, C).transpose(2, 3, 0, 1).copy()
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result(out, parents, adjoint)


def _conv_patch(x, weight, bias, k):
    # Non-overlapping k x k patches (kernel == stride): a reshape plus matmul.
    B, C, H, W = x.shape
    O = weight.shape[0]
    Ho, Wo = H // k, W // k
    cols = x.data.reshape(B, C, Ho, k, Wo, k).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * k * k, Ho * Wo)
    wmat = weight.data.reshape(O, C * k * k)
    out = np.matmul(wmat, cols).reshape(B, O, Ho, Wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = [x, weight] + ([bias] if bias is not None else [])

    def adjoint(g):
        gm = g.reshape(B, O, Ho * Wo)
        gx = gw = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gm).reshape(B, C, k, k, Ho, Wo)
            gx = gcols.transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H, W)
        if weight.requires_grad:
            gw = np.einsum("bon,bcn->oc", gm, cols).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result(out, parents, adjoint)


def _conv_im2col(x, weight, bias, s, p):
    B, C, H, W = x.shape
    O, _, k, _ = weight.shape
    xp = _pad(x.data, p)
    Hp, Wp = xp.shape[2:]
    Ho, Wo = (Hp - k) // s + 1, (Wp - k) // s + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
    wd = weight.data
    out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None, None]
    parents = [x, weight] + ([bias] if bias is not None else [])

    def adjoint(g):
        gx = gw = None
        if x.requires_grad:
            gcols = np.tensordot(wd, g, axes=([0], [1]))  # (C, k, k, B, Ho, Wo)
            gxp = np.zeros((C, B, Hp, Wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += gcols[:, i, j]
            gx = np.ascontiguousarray(gxp[:, :, p:p + H, p:p + W].transpose(1, 0, 2, 3))
        if weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result(out, parents, adjoint)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 2) -> Tensor:
    """Exact x2 upsampling transpose convolution, weight (Cin, Cout, 2, 2).

    Equals the adjoint of ``conv2d(., weight, stride=2)`` plus bias.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    Ci, O, kh, kw = weight.shape
    if C != Ci:
        raise ShapeError(f"conv_transpose2d channel mismatch: input axis 1 = {C}, weight axis 0 = {Ci}")
    if not (kh == kw == stride == 2):
        raise ShapeError(f"conv_transpose2d supports kernel = stride = 2 only, got kernel {kh}x{kw}, stride {stride}")
    k = 2
    xm = x.data.reshape(B, C, H * W)
    wmat = weight.data.reshape(C, O * k * k)
    y = np.matmul(wmat.T, xm).reshape(B, O, k, k, H, W)
    out = y.transpose(0, 1, 4, 2, 5, 3).reshape(B, O, H * k, W * k)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = [x, weight] + ([bias] if bias is not None else [])

    def adjoint(g):
        gm = g.reshape(B, O, H, k, W, k).transpose(0, 1, 3, 5, 2, 4).reshape(B, O * k * k, H * W)
        gx = np.matmul(wmat, gm).reshape(B, C, H, W) if x.requires_grad else None
        gw = np.einsum("bcn,bmn->cm", xm, gm).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return make_result(out, parents, adjoint)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ShapeError(f"avg_pool2d needs axes 2,3 divisible by {k}, got {H}x{W}")
    y = x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

    def adjoint(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return make_result(y, (x,), adjoint)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    B, C, H, W = x.shape

    def adjoint(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),)

    return make_result(x.data.mean(axis=(2, 3)), (x,), adjoint)


# ---------------------------------------------------------------------------
# fixed linear transforms
# ---------------------------------------------------------------------------

# Orthonormal 2x2 Haar analysis. Rows: LL, HL, LH, HH; columns: block pixels
# (0,0), (0,1), (1,0), (1,1).
HAAR = 0.5 * np.array(
    [[1, 1, 1, 1],
     [-1, 1, -1, 1],
     [-1, -1, 1, 1],
     [1, -1, -1, 1]],
    dtype=np.float64,
)


def _haar_fwd(xd: np.ndarray) -> np.ndarray:
    B, C, H, W = xd.shape
    blocks = xd.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 3, 5, 2, 4).reshape(B, C, 4, H // 2, W // 2)
    y = np.einsum("kp,bcphw->bckhw", HAAR.astype(xd.dtype), blocks)
    return y.reshape(B, 4 * C, H // 2, W // 2)


def _haar_inv(yd: np.ndarray) -> np.ndarray:
    B, C4, h, w = yd.shape
    C = C4 // 4
    bands = yd.reshape(B, C, 4, h, w)
    blocks = np.einsum("kp,bckhw->bcphw", HAAR.astype(yd.dtype), bands)
    return blocks.reshape(B, C, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, 2 * h, 2 * w)


def haar2d(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, 4C, H/2, W/2); channel 4c+k is band k of input channel c."""
    if x.ndim != 4:
        raise ShapeError(f"haar2d expects NCHW input, got {x.shape}")
    H, W = x.shape[2:]
    if H % 2 or W % 2:
        raise ShapeError(f"haar2d needs even axes 2,3, got {H}x{W}")
    return make_result(_haar_fwd(x.data), (x,), lambda g: (_haar_inv(g),))


def ihaar2d(x: Tensor) -> Tensor:
    """Inverse of :func:`haar2d`: (B, 4C, h, w) -> (B, C, 2h, 2w)."""
    if x.ndim != 4 or x.shape[1] % 4:
        raise ShapeError(f"ihaar2d expects NCHW input with channels divisible by 4, got {x.shape}")
    return make_result(_haar_inv(x.data), (x,), lambda g: (_haar_fwd(g),))


def dct_matrix(n: int = 8) -> np.ndarray:
    """Orthonormal DCT-II matrix; row u is the u-th basis vector."""
    i = np.arange(n)
    m = np.cos(np.pi * (2 * i[None, :] + 1) * i[:, None] / (2 * n))
    m[0] *= np.sqrt(1.0 / n)
    m[1:] *= np.sqrt(2.0 / n)
    return m


_D8 = dct_matrix(8)


def _blocks(xd, n=8):
    *lead, H, W = xd.shape
    return xd.reshape(*lead, H // n, n, W // n, n)


def _block_dct(xd: np.ndarray, inverse: bool = False) -> np.ndarray:
    D = _D8.astype(xd.dtype)
    blk = _blocks(xd)
    if inverse:
        y = np.einsum("ui,...aubv,vj->...aibj", D, blk, D)
    else:
        y = np.einsum("ui,...aibj,vj->...aubv", D, blk, D)
    return y.reshape(xd.shape)


def dct8x8(x: Tensor) -> Tensor:
    """Blockwise orthonormal 8x8 DCT over the last two axes."""
    H, W = x.shape[-2:]
    if H % 8 or W % 8:
        raise ShapeError(f"dct8x8 needs trailing axes divisible by 8, got {H}x{W}")
    return make_result(_block_dct(x.data), (x,), lambda g: (_block_dct(g, inverse=True),))


def idct8x8(x: Tensor) -> Tensor:
    H, W = x.shape[-2:]
    if H % 8 or W % 8:
        raise ShapeError(f"idct8x8 needs trailing axes divisible by 8, got {H}x{W}")
    return make_result(_block_dct(x.data, inverse=True), (x,), lambda g: (_block_dct(g),))


def channel_mix(x: Tensor, matrix: np.ndarray, offset: Optional[np.ndarray] = None) -> Tensor:
    """Per-pixel affine colour transform: out[:, o] = sum_c M[o, c] x[:, c] + offset[o]."""
    M = np.asarray(matrix, dtype=x.dtype)
    if M.shape[1] != x.shape[1]:
        raise ShapeError(f"channel_mix matrix axis 1 = {M.shape[1]} but input axis 1 = {x.shape[1]}")
    y = np.einsum("oc,bchw->bohw", M, x.data)
    if offset is not None:
        y = y + np.asarray(offset, dtype=x.dtype)[None, :, None, None]
    return make_result(y, (x,), lambda g: (np.einsum("oc,bohw->bchw", M, g),))


def separable_linear(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """``rows @ x @ cols.T`` on the trailing two axes (resampling, blurring, padding)."""
    A = np.asarray(rows, dtype=x.dtype)
    Bm = np.asarray(cols, dtype=x.dtype)
    if A.shape[1] != x.shape[-2] or Bm.shape[1] != x.shape[-1]:
        raise ShapeError(
            f"separable_linear operators {A.shape}, {Bm.shape} do not fit trailing axes {x.shape[-2:]}"
        )
    y = A @ x.data @ Bm.T
    return make_result(y, (x,), lambda g: (A.T @ g @ Bm,))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(a: Tensor, b) -> Tensor:
    """Mean squared error; ``b`` may be a constant."""
    b = _const(b, a)
    if a.shape != b.shape:
        raise ShapeError(f"mse_loss operands differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    val = np.asarray(np.mean(diff * diff), dtype=a.dtype)

    def adjoint(g):
        gd = (2.0 / n) * g * diff
        return (gd if a.requires_grad else None, -gd if b.requires_grad else None)

    return make_result(val, (a, b), adjoint)


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable form)."""
    target = _const(target, logits)
    z, y = logits.data, target.data
    val = np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z))))
    n = z.size

    def adjoint(g):
        return (g * (_sigmoid(z) - y) / n, None)

    return make_result(np.asarray(val, dtype=logits.dtype), (logits, target), adjoint)
