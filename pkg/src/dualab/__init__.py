"""dualab: online test-time adaptation of batch-normalization statistics.

A trained network's running BN statistics are the only thing that moves at
test time: one unlabeled sample at a time is expanded into an augmented
batch, and its statistics are folded into the running estimates with a
geometrically decaying momentum. The package bundles the minimal CNN stack
needed to train a source model, competing adaptation baselines, a
distribution-shift lab and an experiment harness.
"""

__version__ = "0.1.0"

from .adapt import AdaptConfig, dua_adapt_step, fixed_momentum_adapt_step, norm_recompute
from .bn import (
    BatchNormState,
    MomentumSchedule,
    batch_stats,
    bn_forward_adapt,
    bn_forward_eval,
    bn_forward_train,
    bn_normalize,
    dua_momentum_step,
    ema_update,
)
from .model import (
    Model,
    default_model,
    init_model,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)
from .shift import (
    AugmentedBatch,
    CorruptionSpec,
    Dataset,
    augment_batch,
    corrupt,
    gen_synthetic,
    load_idx,
    severity_manifest,
)

__all__ = [
    "AdaptConfig", "AugmentedBatch", "BatchNormState", "CorruptionSpec",
    "Dataset", "Model", "MomentumSchedule", "augment_batch", "batch_stats",
    "bn_forward_adapt", "bn_forward_eval", "bn_forward_train", "bn_normalize",
    "corrupt", "default_model", "dua_adapt_step", "dua_momentum_step",
    "ema_update", "fixed_momentum_adapt_step", "gen_synthetic", "init_model",
    "load_checkpoint", "load_idx", "model_forward", "norm_recompute",
    "save_checkpoint", "severity_manifest",
]
