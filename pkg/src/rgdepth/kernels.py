"""Spatial kernels with analytic gradients.

Feature maps are single-sample (C, H, W) arrays, row-major by (channel,
row, column). Convolution is cross-correlation (no kernel flip) with
zero padding; "same" spatial size uses pad = (R - 1) // 2 for odd R.
Weight layouts:

- conv2d weight:   (out_channels, in_channels, R, R)
- deconv2d weight: (in_channels, out_channels, R, R)

deconv2d is the adjoint of conv2d: with a shared weight buffer and
matching stride/pad, <conv(x), y> == <x, deconv(y)>. All three loop-free
routines below (im2col forward, column scatter, weight gradient) are
shared by both ops.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _node

__all__ = [
    "check_feature_map",
    "conv2d",
    "deconv2d",
    "global_avg_pool",
    "softmax_branches",
    "dynamic_local_conv",
    "depthwise_local_conv",
]


def check_feature_map(arr: np.ndarray, name: str = "input") -> np.ndarray:
    """Validate the (C, H, W) feature-map contract and return the array."""
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected a (C, H, W) array, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name}: non-positive dimension in shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name}: non-finite values")
    return arr


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# -- shared conv plumbing ------------------------------------------------
#
# One channel-major patch matrix (C*R*R, Ho*Wo) per map turns forward,
# weight gradient, and input gradient each into a single GEMM; the input
# gradient additionally scatters its R*R tap planes back into the padded
# buffer. The forward pass caches its patch matrix so the weight gradient
# reuses it.


def _padded(x, pad):
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x


def _patch_matrix(xp, window, stride):
    ho = (xp.shape[1] - window) // stride + 1
    wo = (xp.shape[2] - window) // stride + 1
    win = sliding_window_view(xp, (window, window), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(xp.shape[0] * window * window, ho * wo)
    return cols, ho, wo


def _conv_forward(x, w, stride, pad):
    co = w.shape[0]
    cols, ho, wo = _patch_matrix(_padded(x, pad), w.shape[2], stride)
    y = (w.reshape(co, -1) @ cols).reshape(co, ho, wo)
    return y, cols


def _weight_grad_from_cols(gy, cols, wshape):
    co, ci, window, _ = wshape
    gw = gy.reshape(co, -1) @ cols.T
    return gw.reshape(co, ci, window, window)


def _conv_input_grad(gy, w, stride, pad, in_hw):
    """Gradient wrt the conv input; also the deconv forward map."""
    co, ci, window, _ = w.shape
    h, wdt = in_hw
    ho, wo = gy.shape[1], gy.shape[2]
    dcols = w.reshape(co, -1).T @ gy.reshape(co, ho * wo)
    dcols = dcols.reshape(ci, window, window, ho, wo)
    gxp = np.zeros((ci, h + 2 * pad, wdt + 2 * pad), dtype=gy.dtype)
    for u in range(window):
        for v in range(window):
            gxp[:, u : u + stride * ho : stride, v : v + stride * wo : stride] += dcols[:, u, v]
    if pad:
        return np.ascontiguousarray(gxp[:, pad:-pad, pad:-pad])
    return gxp


# -- differentiable ops --------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided zero-padded cross-correlation of a (C, H, W) map."""
    xd = check_feature_map(_data(x), "conv2d input")
    wd = _data(weight)
    if wd.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-D, got shape {wd.shape}")
    if xd.shape[0] != wd.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input has {xd.shape[0]}, kernel expects {wd.shape[1]}")
    if stride < 1 or pad < 0:
        raise ValueError("conv2d needs stride >= 1 and pad >= 0")
    window = wd.shape[2]
    ho = (xd.shape[1] + 2 * pad - window) // stride + 1
    wo = (xd.shape[2] + 2 * pad - window) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output dims {ho}x{wo} are not positive")

    y, cols = _conv_forward(xd, wd, stride, pad)
    if bias is not None:
        y = y + _data(bias)[:, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = _conv_input_grad(g, wd, stride, pad, xd.shape[1:]) if x.requires_grad else None
        gw = _weight_grad_from_cols(g, cols, wd.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g.sum(axis=(1, 2)) if bias.requires_grad else None
        return gx, gw, gb

    return _node(y, parents, backward)


def deconv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2, pad: int = 0) -> Tensor:
    """Transposed convolution producing an exact 2x spatial upsample.

    Forward map is conv2d's input gradient used as an operator, so the
    weight buffer is shared between a conv and its adjoint deconv.
    """
    xd = check_feature_map(_data(x), "deconv2d input")
    wd = _data(weight)
    if wd.ndim != 4:
        raise ValueError(f"deconv2d weight must be 4-D, got shape {wd.shape}")
    if xd.shape[0] != wd.shape[0]:
        raise ValueError(f"deconv2d channel mismatch: input has {xd.shape[0]}, kernel expects {wd.shape[0]}")
    window = wd.shape[2]
    if stride != 2 or window - 2 * pad != 2:
        raise ValueError(
            f"deconv2d config (window={window}, stride={stride}, pad={pad}) is not an exact 2x upsample"
        )
    out_hw = (stride * xd.shape[1], stride * xd.shape[2])

    y = _conv_input_grad(xd, wd, stride, pad, out_hw)
    if bias is not None:
        y = y + _data(bias)[:, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = None
        if x.requires_grad or weight.requires_grad:
            # g plays the conv-input role for both gradients
            gx, gcols = _conv_forward(g, wd, stride, pad)
            if not x.requires_grad:
                gx = None
            if weight.requires_grad:
                gw = _weight_grad_from_cols(xd, gcols, wd.shape)
        if bias is None:
            return gx, gw
        gb = g.sum(axis=(1, 2)) if bias.requires_grad else None
        return gx, gw, gb

    return _node(y, parents, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, returned as (C, 1, 1)."""
    xd = _data(x)
    if xd.ndim != 3:
        raise ValueError(f"global_avg_pool expects (C, H, W), got shape {xd.shape}")
    n = xd.shape[1] * xd.shape[2]
    y = xd.mean(axis=(1, 2), keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / n, xd.shape).astype(xd.dtype),)

    return _node(y, (x,), backward)


def softmax_branches(w: Tensor) -> Tensor:
    """Softmax over the branch axis of a (k, C) matrix, per channel.

    Stabilized by max subtraction, so the output is invariant under
    adding a per-column constant and safe for large logits.
    """
    wd = _data(w)
    if wd.ndim != 2 or wd.shape[0] < 1:
        raise ValueError(f"softmax_branches expects a (k, C) matrix with k >= 1, got shape {wd.shape}")
    if not np.isfinite(wd).all():
        raise ValueError("softmax_branches: non-finite logits")
    z = wd - wd.max(axis=0, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=0, keepdims=True)),)

    return _node(s, (w,), backward)


def dynamic_local_conv(dep: Tensor, kernels: Tensor, pad: int) -> Tensor:
    """Spatially-variant convolution with a full per-pixel kernel bank.

    kernels has shape (C_out, C_in, R, R, H, W): one R x R stencil per
    output channel, input channel, and pixel.
    """
    dd = _data(dep)
    kd = _data(kernels)
    co, ci, window, _, h, w = kd.shape
    if dd.shape != (ci, h, w):
        raise ValueError(f"dynamic_local_conv shape mismatch: dep {dd.shape} vs kernels {kd.shape}")
    dp = np.pad(dd, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(dp, (window, window), axis=(1, 2))  # (Ci, H, W, R, R)
    y = np.einsum("oiuvyx,iyxuv->oyx", kd, win, optimize=True)

    def backward(g):
        gk = np.einsum("oyx,iyxuv->oiuvyx", g, win, optimize=True) if kernels.requires_grad else None
        gd = None
        if dep.requires_grad:
            gwin = np.einsum("oyx,oiuvyx->iyxuv", g, kd, optimize=True)
            gp = np.zeros_like(dp)
            for u in range(window):
                for v in range(window):
                    gp[:, u : u + h, v : v + w] += gwin[:, :, :, u, v]
            gd = gp[:, pad : pad + h, pad : pad + w] if pad else gp
        return gd, gk

    return _node(y, (dep, kernels), backward)


def depthwise_local_conv(dep: Tensor, kernels: Tensor, pad: int) -> Tensor:
    """Channel-wise spatially-variant convolution.

    kernels has shape (C, R, R, H, W): each channel is filtered by its
    own per-pixel stencil, with no cross-channel mixing.
    """
    dd = _data(dep)
    kd = _data(kernels)
    c, window, _, h, w = kd.shape
    if dd.shape != (c, h, w):
        raise ValueError(f"depthwise_local_conv shape mismatch: dep {dd.shape} vs kernels {kd.shape}")
    dp = np.pad(dd, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(dp, (window, window), axis=(1, 2))  # (C, H, W, R, R)
    y = np.einsum("cuvyx,cyxuv->cyx", kd, win, optimize=True)

    def backward(g):
        gk = np.einsum("cyx,cyxuv->cuvyx", g, win, optimize=True) if kernels.requires_grad else None
        gd = None
        if dep.requires_grad:
            gwin = np.einsum("cyx,cuvyx->cyxuv", g, kd, optimize=True)
            gp = np.zeros_like(dp)
            for u in range(window):
                for v in range(window):
                    gp[:, u : u + h, v : v + w] += gwin[:, :, :, u, v]
            gd = gp[:, pad : pad + h, pad : pad + w] if pad else gp
        return gd, gk

    return _node(y, (dep, kernels), backward)
