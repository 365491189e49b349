"""Per-sample adaptation steps and the whole-batch recompute baseline.

Adaptation never touches learned weights: only the running mean/variance of
the masked BN layers move. Each incoming unlabeled sample is expanded into a
small augmented batch so its statistics are less noisy, the momentum
schedule advances once, and the model does a single adapt-mode forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bn import MomentumSchedule, batch_stats, bn_forward_eval, dua_momentum_step
from .errors import ParameterError
from .model import BatchNorm, Model, model_forward
from .rng import Xoshiro256PP
from .shift import AUGMENTATIONS, augment_batch


@dataclass
class AdaptConfig:
    """Knobs of the per-sample adaptation step."""

    batch_size: int = 64
    augmentations: tuple[str, ...] = ("hflip", "crop", "rot90s")
    layer_mask: tuple[str, ...] = ("bn1", "bn2", "bn3")
    schedule: MomentumSchedule = field(default_factory=MomentumSchedule)
    seed: int = 0
    post_update_norm: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        bad = set(self.augmentations) - set(AUGMENTATIONS)
        if bad:
            raise ParameterError(f"unknown augmentations {sorted(bad)}")

    def fresh_schedule(self) -> None:
        self.schedule = self.schedule.copy()
        self.schedule.rho_k = self.schedule.rho0
        self.schedule.k = 0


def dua_adapt_step(model: Model, sample: np.ndarray, cfg: AdaptConfig,
                   rng: Xoshiro256PP) -> np.ndarray:
    """Consume one unlabeled sample: augment, advance momentum, update stats.

    Returns the adapt-mode logits of the augmented batch. The model's masked
    BN statistics are updated in place; everything else is bit-identical
    afterwards.
    """
    if sample.ndim != 4 or sample.shape[0] != 1:
        raise ParameterError(f"sample must have shape (1, C, H, W), got {sample.shape}")
    batch = augment_batch(sample, cfg.batch_size, cfg.augmentations, rng)
    w_k = dua_momentum_step(cfg.schedule)
    return model_forward(
        model, batch.tensor, mode="adapt",
        w_k=w_k, layer_mask=cfg.layer_mask, post_update=cfg.post_update_norm,
    )


def fixed_momentum_adapt_step(model: Model, sample: np.ndarray, cfg: AdaptConfig,
                              rng: Xoshiro256PP) -> np.ndarray:
    """Same pipeline with constant weight w == rho0 (omega=1, zeta=0)."""
    if cfg.schedule.omega != 1.0 or cfg.schedule.zeta != 0.0:
        raise ParameterError(
            "fixed-momentum step needs a constant schedule (omega=1, zeta=0); "
            f"got omega={cfg.schedule.omega} zeta={cfg.schedule.zeta}"
        )
    return dua_adapt_step(model, sample, cfg, rng)


def norm_recompute(model: Model, test_batch: np.ndarray) -> Model:
    """Replace every BN layer's running stats with the batch stats of its input.

    Source statistics are discarded. Layers are processed front to back in a
    single eval-style pass, so each layer's input already reflects the
    replaced statistics of everything upstream.
    """
    if test_batch.ndim != 4 or test_batch.shape[0] < 2:
        raise ParameterError(
            f"recompute needs a batch of >= 2 samples, got shape {test_batch.shape}"
        )
    h = test_batch
    for layer in model.layers:
        if isinstance(layer, BatchNorm):
            mu, var = batch_stats(h)
            layer.state.running_mean = mu
            layer.state.running_var = var
            h = bn_forward_eval(h, layer.state)
        else:
            h = layer.forward(h)
    return model
