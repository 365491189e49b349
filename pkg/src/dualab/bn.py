"""Batch-normalization statistics and their three update regimes.

A BN layer owns per-channel running estimates (mu_hat, var_hat) plus the
learned affine (gamma, beta). The running estimates evolve differently
depending on mode:

* training: normalize with the incoming batch's stats, then fold those
  stats into the running estimates with constant momentum rho;
* evaluation: normalize with the frozen running estimates, touch nothing;
* adaptation: fold the batch stats into the running estimates with a
  per-step weight w_k = rho_k + zeta where rho_k decays geometrically
  (rho_k = rho_{k-1} * omega), then normalize with the updated estimates.

The decaying weight makes early target samples move the estimates fast and
later ones refine them, with zeta keeping a floor so the model never stops
tracking a drifting stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ParameterError


@dataclass
class BatchNormState:
    """Per-channel normalization state of one BN layer."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    train_momentum: float = 0.1

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-5,
                 train_momentum: float = 0.1) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels),
            beta=np.zeros(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            eps=eps,
            train_momentum=train_momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def validate(self) -> None:
        c = self.channels
        for name in ("gamma", "beta", "running_mean", "running_var"):
            arr = getattr(self, name)
            if arr.shape != (c,):
                raise DimensionError(f"{name} shape {arr.shape} != ({c},)")
        if self.eps <= 0:
            raise ParameterError(f"eps must be > 0, got {self.eps}")
        if not 0 < self.train_momentum <= 1:
            raise ParameterError(
                f"train_momentum must be in (0, 1], got {self.train_momentum}"
            )
        if (self.running_var < 0).any():
            raise NumericError("running_var has negative entries")

    def copy(self) -> "BatchNormState":
        return BatchNormState(
            gamma=self.gamma.copy(),
            beta=self.beta.copy(),
            running_mean=self.running_mean.copy(),
            running_var=self.running_var.copy(),
            eps=self.eps,
            train_momentum=self.train_momentum,
        )


@dataclass
class MomentumSchedule:
    """Geometric momentum decay with a floor: w_k = rho0 * omega^k + zeta."""

    rho0: float = 0.1
    omega: float = 0.94
    zeta: float = 0.005
    rho_k: float = field(default=None)  # type: ignore[assignment]
    k: int = 0

    def __post_init__(self):
        if not 0 < self.rho0 <= 1:
            raise ParameterError(f"rho0 must be in (0, 1], got {self.rho0}")
        if not 0 < self.omega <= 1:
            raise ParameterError(f"omega must be in (0, 1], got {self.omega}")
        if not 0 <= self.zeta < self.rho0:
            raise ParameterError(
                f"zeta must satisfy 0 <= zeta < rho0, got zeta={self.zeta} rho0={self.rho0}"
            )
        if self.rho_k is None:
            self.rho_k = self.rho0

    @classmethod
    def fixed(cls, rho: float = 0.1) -> "MomentumSchedule":
        """Constant-momentum baseline: omega=1, zeta=0, w_k == rho forever."""
        return cls(rho0=rho, omega=1.0, zeta=0.0)

    def copy(self) -> "MomentumSchedule":
        return MomentumSchedule(self.rho0, self.omega, self.zeta, self.rho_k, self.k)


def dua_momentum_step(schedule: MomentumSchedule) -> float:
    """Advance the schedule one step and return the effective weight w_k.

    The decay applies before first use: the first call returns
    rho0*omega + zeta (0.099 with defaults).
    """
    schedule.rho_k *= schedule.omega
    schedule.k += 1
    return schedule.rho_k + schedule.zeta


def _as_nchw(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:  # (n, d) treated as C=d, H=W=1
        return x[:, :, None, None]
    if x.ndim == 4:
        return x
    raise DimensionError(f"batch-norm input must be 2-D or 4-D, got shape {x.shape}")


def batch_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and biased variance over the (N, H, W) axes."""
    x = _as_nchw(x)
    n, c, h, w = x.shape
    if n * h * w < 1:
        raise DimensionError(f"cannot take statistics of an empty tensor {x.shape}")
    mu = x.mean(axis=(0, 2, 3))
    var = np.square(x - mu[None, :, None, None]).mean(axis=(0, 2, 3))
    return mu, var


def bn_normalize(x: np.ndarray, mu: np.ndarray, var: np.ndarray,
                 state: BatchNormState) -> np.ndarray:
    """(x - mu) / sqrt(var + eps) * gamma + beta, channelwise."""
    x4 = _as_nchw(x)
    c = x4.shape[1]
    if mu.shape != (c,) or var.shape != (c,):
        raise DimensionError(
            f"mu/var shapes {mu.shape}/{var.shape} != channel count ({c},)"
        )
    if (var < 0).any():
        raise NumericError("variance has negative entries")
    inv = 1.0 / np.sqrt(var + state.eps)
    out = (x4 - mu[None, :, None, None]) * (state.gamma * inv)[None, :, None, None]
    out += state.beta[None, :, None, None]
    return out.reshape(x.shape)


def ema_update(stat_prev: np.ndarray, batch_stat: np.ndarray, weight: float) -> np.ndarray:
    """(1-w)*previous + w*incoming, elementwise; w must lie in (0, 1]."""
    if not 0 < weight <= 1:
        raise ParameterError(f"EMA weight must be in (0, 1], got {weight}")
    return (1.0 - weight) * stat_prev + weight * batch_stat


def bn_forward_train(x: np.ndarray, state: BatchNormState, rho: float) -> np.ndarray:
    """Normalize with batch stats, then fold them into the running estimates."""
    mu, var = batch_stats(x)
    out = bn_normalize(x, mu, var, state)
    state.running_mean = ema_update(state.running_mean, mu, rho)
    state.running_var = ema_update(state.running_var, var, rho)
    return out


def bn_forward_eval(x: np.ndarray, state: BatchNormState) -> np.ndarray:
    """Normalize with the frozen running estimates; mutates nothing."""
    return bn_normalize(x, state.running_mean, state.running_var, state)


def bn_forward_adapt(x: np.ndarray, state: BatchNormState, w_k: float,
                     post_update: bool = True) -> np.ndarray:
    """One adaptation update of the running estimates, then normalize.

    Mean and variance are updated consecutively with the same w_k; the
    variance update uses the incoming batch's own variance. gamma and beta
    are untouched. w_k == 0 degenerates to plain evaluation.

    post_update selects whether the returned activations are normalized
    with the updated estimates (default) or the pre-update ones.
    """
    if w_k == 0.0:
        return bn_forward_eval(x, state)
    mu, var = batch_stats(x)
    prev_mean, prev_var = state.running_mean, state.running_var
    state.running_mean = ema_update(prev_mean, mu, w_k)
    state.running_var = ema_update(prev_var, var, w_k)
    if post_update:
        return bn_normalize(x, state.running_mean, state.running_var, state)
    return bn_normalize(x, prev_mean, prev_var, state)


def bn_train_backward(x: np.ndarray, state: BatchNormState,
                      out_grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward of the batch-stat normalization: (dx, dgamma, dbeta).

    Uses the biased-variance convention matching batch_stats.
    """
    x4 = _as_nchw(x)
    og = _as_nchw(out_grad)
    mu, var = batch_stats(x4)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x4 - mu[None, :, None, None]) * inv[None, :, None, None]
    dbeta = og.sum(axis=(0, 2, 3))
    dgamma = (og * xhat).sum(axis=(0, 2, 3))
    dxhat = og * state.gamma[None, :, None, None]
    m_dxhat = dxhat.mean(axis=(0, 2, 3))
    m_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3))
    dx = inv[None, :, None, None] * (
        dxhat - m_dxhat[None, :, None, None] - xhat * m_dxhat_xhat[None, :, None, None]
    )
    return dx.reshape(out_grad.shape), dgamma, dbeta
