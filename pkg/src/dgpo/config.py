"""TrainConfig and the sectioned TOML / JSON config loader."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ALGORITHMS = ("dgpo", "dgpo-offline", "dpo", "dpo-offline", "grpo")
SAMPLERS = ("ode", "sde")
REWARDS = ("mode-target", "ring")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # post-training
    algorithm: str = "dgpo"
    group_size: int = 8
    beta: float = 100.0
    t_min: float = 0.3
    lr: float = 1e-4
    iterations: int = 500
    ema_decay: float = 0.3
    ema_start: int = 200
    groups_per_iter: int = 4
    cond_drop: float = 0.05
    eps_std: float = 1e-8
    clip: float = 0.2
    grpo_inner_steps: int = 1
    optimizer: str = "adam"
    weighting: str = "one"
    seed: int = 0
    # rollouts
    rollout_steps: int = 10
    sampler: str = "ode"
    noise_scale: float = 0.7
    # reward
    reward: str = "mode-target"
    reward_tau: float = 0.1
    # evaluation
    eval_every: int = 25
    eval_samples: int = 512
    holdout_size: int = 512
    # pretraining
    pretrain_steps: int = 20000
    pretrain_batch: int = 256
    pretrain_lr: float = 1e-3
    pretrain_eval_every: int = 2000
    # model
    hidden: list[int] = field(default_factory=lambda: [64, 64, 64])
    time_dim: int = 16
    cond_dim: int = 16
    n_modes: int = 8
    mode_std: float = 0.05
    init_seed: int = 0
    # paths
    checkpoint: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.algorithm in ALGORITHMS, f"algorithm: expected one of {ALGORITHMS}, got {self.algorithm!r}")
        need(self.sampler in SAMPLERS, f"sampler: expected one of {SAMPLERS}, got {self.sampler!r}")
        need(self.reward in REWARDS, f"reward: expected one of {REWARDS}, got {self.reward!r}")
        need(self.optimizer in ("adam", "sgd"), f"optimizer: expected adam or sgd, got {self.optimizer!r}")
        need(self.group_size >= 2, "group_size: must be >= 2")
        need(0.0 <= self.t_min < 1.0, "t_min: must lie in [0, 1)")
        need(0.0 <= self.ema_decay <= 1.0, "ema_decay: must lie in [0, 1]")
        need(0.0 <= self.cond_drop <= 1.0, "cond_drop: must lie in [0, 1]")
        need(self.iterations >= 0, "iterations: must be >= 0")
        need(self.rollout_steps >= 1, "rollout_steps: must be >= 1")
        need(self.groups_per_iter >= 1, "groups_per_iter: must be >= 1")
        need(self.noise_scale >= 0, "noise_scale: must be >= 0")
        need(self.eval_every >= 1 and self.pretrain_eval_every >= 1, "eval intervals must be >= 1")
        need(self.lr > 0 and self.pretrain_lr > 0, "learning rates must be positive")
        need(0 <= self.seed < 2**64, "seed: must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


def _coerce(name: str, value):
    default = getattr(TrainConfig(), name)
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, int) for v in value)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
    return value


def config_from_mapping(doc: dict, where: str = "config") -> TrainConfig:
    """Flatten ``[section]`` tables into TrainConfig fields; unknown keys are errors."""
    flat = {}
    for key, value in doc.items():
        items = value.items() if isinstance(value, dict) else [(key, value)]
        section = key if isinstance(value, dict) else None
        for k, v in items:
            if k not in _FIELDS:
                loc = f"[{section}] {k}" if section else k
                raise ConfigError(f"{where}: unknown field {loc}")
            if k in flat:
                raise ConfigError(f"{where}: field {k} given twice")
            flat[k] = _coerce(k, v)
    return TrainConfig(**flat)


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        if path.suffix == ".json":
            doc = json.loads(text)
            doc = doc.get("config", doc)
        else:
            doc = tomllib.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(doc, str(path))
