from .losses import (
    generalized_dice_loss,
    head_loss,
    multi_head_loss,
    one_hot,
    weighted_cross_entropy_loss,
)
from .network import (
    ConfigError,
    HeadOutputs,
    LayerEnsembleNet,
    ModelConfig,
    build,
    forward_all_heads,
    predict_batches,
)

__all__ = [
    "ConfigError",
    "HeadOutputs",
    "LayerEnsembleNet",
    "ModelConfig",
    "build",
    "forward_all_heads",
    "generalized_dice_loss",
    "head_loss",
    "multi_head_loss",
    "one_hot",
    "predict_batches",
    "weighted_cross_entropy_loss",
]
