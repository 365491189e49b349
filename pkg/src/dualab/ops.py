"""Functional forward/backward passes for every layer of the desk-scale CNN.

All arrays are float64. Activations travel as NCHW tensors; the linear ops
work on (n, d) matrices. Each backward is the exact adjoint of its forward
and is validated against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionError, NumericError, ParameterError


@dataclass
class LayerGrad:
    """Gradient bundle of one layer: input gradient plus per-parameter grads."""

    input_grad: np.ndarray
    param_grads: dict[str, np.ndarray] = field(default_factory=dict)


def require_nchw(x: np.ndarray, name: str = "input") -> np.ndarray:
    if x.ndim != 4:
        raise DimensionError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")
    return x


def require_finite(x: np.ndarray, name: str = "input") -> np.ndarray:
    if not np.isfinite(x).all():
        raise NumericError(f"{name} contains non-finite values")
    return x


def _conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(
            f"kernel {kh}x{kw} with stride {stride}, pad {pad} does not fit input {h}x{w}"
        )
    return oh, ow


def _pad_nchw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x, weight, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlation with zero padding.

    Output element (n, c, y, x) is the sum over (c_in, kh, kw) in row-major
    order plus bias; the reduction order is part of the contract.
    """
    require_nchw(x, "x")
    if weight.ndim != 4:
        raise DimensionError(f"weight must be 4-D (c_out, c_in, kh, kw), got {weight.shape}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ParameterError(f"pad must be >= 0, got {pad}")
    co, ci, kh, kw = weight.shape
    if x.shape[1] != ci:
        raise DimensionError(f"input channel axis {x.shape[1]} != weight c_in {ci}")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (co,):
        raise DimensionError(f"bias shape {bias.shape} != ({co},)")
    n, _, h, w = x.shape
    oh, ow = _conv_out_hw(h, w, kh, kw, stride, pad)
    xp = _pad_nchw(np.asarray(x, dtype=np.float64), pad)
    out = np.empty((n, co, oh, ow))
    _kernels.conv2d_forward_kernel(
        xp, np.ascontiguousarray(weight, dtype=np.float64), bias, out, stride
    )
    return out


def conv2d_backward(x, weight, out_grad, stride: int = 1, pad: int = 0) -> LayerGrad:
    """Adjoint of conv2d_forward: gradients w.r.t. input, weight and bias."""
    require_nchw(x, "x")
    require_nchw(out_grad, "out_grad")
    co, ci, kh, kw = weight.shape
    n, _, h, w = x.shape
    oh, ow = _conv_out_hw(h, w, kh, kw, stride, pad)
    if out_grad.shape != (n, co, oh, ow):
        raise DimensionError(
            f"out_grad shape {out_grad.shape} != forward output shape {(n, co, oh, ow)}"
        )
    xp = _pad_nchw(np.asarray(x, dtype=np.float64), pad)
    og = np.ascontiguousarray(out_grad, dtype=np.float64)
    wgt = np.ascontiguousarray(weight, dtype=np.float64)

    dxp = np.zeros_like(xp)
    _kernels.conv2d_input_grad_kernel(dxp, wgt, og, stride)
    dx = dxp[:, :, pad : pad + h, pad : pad + w].copy() if pad else dxp

    dw = np.empty_like(wgt)
    for p in range(kh):
        for q in range(kw):
            window = xp[:, :, p : p + oh * stride : stride, q : q + ow * stride : stride]
            dw[:, :, p, q] = np.tensordot(og, window, axes=([0, 2, 3], [0, 2, 3]))
    db = og.sum(axis=(0, 2, 3))
    return LayerGrad(dx, {"weight": dw, "bias": db})


def linear_forward(x, weight, bias) -> np.ndarray:
    """Affine map on (n, d) inputs: x @ weight.T + bias."""
    if x.ndim != 2:
        raise DimensionError(f"linear input must be 2-D (n, d), got shape {x.shape}")
    d_out, d_in = weight.shape
    if x.shape[1] != d_in:
        raise DimensionError(f"input feature axis {x.shape[1]} != weight d_in {d_in}")
    if bias.shape != (d_out,):
        raise DimensionError(f"bias shape {bias.shape} != ({d_out},)")
    return x @ weight.T + bias


def linear_backward(x, weight, out_grad) -> LayerGrad:
    if out_grad.shape != (x.shape[0], weight.shape[0]):
        raise DimensionError(
            f"out_grad shape {out_grad.shape} != {(x.shape[0], weight.shape[0])}"
        )
    dx = out_grad @ weight
    dw = out_grad.T @ x
    db = out_grad.sum(axis=0)
    return LayerGrad(dx, {"weight": dw, "bias": db})


def relu_forward(x) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x, out_grad) -> np.ndarray:
    return out_grad * (x > 0.0)


def _pool_windows(x: np.ndarray) -> np.ndarray:
    # (n, c, h, w) -> (n, c, h/2, w/2, 4) with windows flattened row-major
    n, c, h, w = x.shape
    return (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )


def maxpool2x2_forward(x) -> np.ndarray:
    """Non-overlapping 2x2 max pool; requires even spatial dims."""
    require_nchw(x, "x")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    return _pool_windows(x).max(axis=-1)


def maxpool2x2_backward(x, out_grad) -> np.ndarray:
    """Routes each window's gradient to its first (row-major) maximal element."""
    n, c, h, w = x.shape
    if out_grad.shape != (n, c, h // 2, w // 2):
        raise DimensionError(
            f"out_grad shape {out_grad.shape} != {(n, c, h // 2, w // 2)}"
        )
    windows = _pool_windows(x)
    arg = windows.argmax(axis=-1)  # argmax picks the first max: tie rule
    g = np.zeros_like(windows)
    np.put_along_axis(g, arg[..., None], out_grad[..., None], axis=-1)
    return (
        g.reshape(n, c, h // 2, w // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )


def flatten(x) -> np.ndarray:
    """(n, c, h, w) -> (n, c*h*w), row-major."""
    require_nchw(x, "x")
    return x.reshape(x.shape[0], -1)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    Computed with max-subtraction; gradient is (softmax - onehot)/n.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D (n, K), got shape {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= k:
        raise IndexError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    p = np.exp(z - lse[:, None])
    p[np.arange(n), labels] -= 1.0
    return loss, p / n


def sgd_update(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
               lr: float, momentum: float) -> None:
    """In-place heavy-ball step: v <- momentum*v + g; p <- p - lr*v."""
    if lr <= 0:
        raise ParameterError(f"lr must be > 0, got {lr}")
    if not 0 <= momentum < 1:
        raise ParameterError(f"momentum must be in [0, 1), got {momentum}")
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise DimensionError(
            f"param/grad/velocity shapes differ: {param.shape} {grad.shape} {velocity.shape}"
        )
    velocity *= momentum
    velocity += grad
    param -= lr * velocity
