"""Group preference optimisation for 2-D flow-matching models, with DPO and GRPO baselines."""

__version__ = "0.1.0"

from .config import ConfigError, TrainConfig, load_config
from .nn import Arch, ModelParams, init_params
from .trainers import dgpo_train, dpo_train, grpo_train, offline_variant, posttrain, pretrain

__all__ = [
    "Arch", "ConfigError", "ModelParams", "TrainConfig", "dgpo_train", "dpo_train", "grpo_train",
    "init_params", "load_config", "offline_variant", "posttrain", "pretrain",
]
