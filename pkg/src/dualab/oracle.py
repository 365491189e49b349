"""Independent brute-force references used by tests and the acceptance suite.

These share no code with the production paths they check: plain Python
loops, explicit accumulation, no numpy reductions. They are deliberately
slow and only run on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError


@dataclass
class EmaTrace:
    """A recorded adaptation history: initial value, weights and inputs."""

    initial: float
    weights: list
    inputs: list

    def __post_init__(self):
        if len(self.weights) != len(self.inputs):
            raise DimensionError(
                f"trace has {len(self.weights)} weights but {len(self.inputs)} inputs"
            )
        for w in self.weights:
            if not 0 < w <= 1:
                raise ParameterError(f"trace weight {w} outside (0, 1]")


def two_pass_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and biased variance by explicit two-pass loops."""
    if x.ndim != 4:
        raise DimensionError(f"expected 4-D input, got shape {x.shape}")
    n, c, h, w = x.shape
    if n * h * w < 1:
        raise DimensionError(f"cannot take statistics of an empty tensor {x.shape}")
    count = n * h * w
    mu = np.zeros(c)
    var = np.zeros(c)
    for ci in range(c):
        acc = 0.0
        for ni in range(n):
            for y in range(h):
                for xx in range(w):
                    acc += x[ni, ci, y, xx]
        mean = acc / count
        acc2 = 0.0
        for ni in range(n):
            for y in range(h):
                for xx in range(w):
                    d = x[ni, ci, y, xx] - mean
                    acc2 += d * d
        mu[ci] = mean
        var[ci] = acc2 / count
    return mu, var


def ema_closed_form(trace: EmaTrace) -> float:
    """Unrolled EMA: prod(1-w_i)*initial + sum_i w_i * prod_{j>i}(1-w_j) * mu_i."""
    if not trace.weights:
        raise ParameterError("trace must contain at least one step")
    k = len(trace.weights)
    total = trace.initial
    for w in trace.weights:
        total *= 1.0 - w
    for i in range(k):
        term = trace.weights[i] * trace.inputs[i]
        for j in range(i + 1, k):
            term *= 1.0 - trace.weights[j]
        total += term
    return total


def naive_conv(x: np.ndarray, w: np.ndarray, bias: np.ndarray,
               stride: int = 1, pad: int = 0) -> np.ndarray:
    """Six-nested-loop cross-correlation; accumulation over (c_in, kh, kw)."""
    n, ci, h, ww = x.shape
    co, ci_w, kh, kw = w.shape
    if ci != ci_w:
        raise DimensionError(f"input channels {ci} != weight c_in {ci_w}")
    if pad:
        xp = np.zeros((n, ci, h + 2 * pad, ww + 2 * pad))
        xp[:, :, pad : pad + h, pad : pad + ww] = x
    else:
        xp = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for ni in range(n):
        for c in range(co):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for i in range(ci):
                        for p in range(kh):
                            for q in range(kw):
                                acc += w[c, i, p, q] * xp[ni, i, y * stride + p, xx * stride + q]
                    out[ni, c, y, xx] = acc + bias[c]
    return out


def fd_gradient(f, point: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function at `point`."""
    if step <= 0:
        raise ParameterError(f"step must be > 0, got {step}")
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(point)
        flat[i] = orig - step
        lo = f(point)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad
