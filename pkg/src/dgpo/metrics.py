"""Evaluation metrics: mean reward and sliced Wasserstein-2 distance."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffusion import SamplerConfig, rollout
from .nn import ModelParams

EVAL_STEPS = 10
PROJECTION_SEED = 20240917
N_PROJECTIONS = 128


@dataclass
class MetricsRecord:
    iteration: int
    mean_reward: float
    sliced_w2: float
    train_loss: float
    degenerate_groups: int
    wall_seconds: float

    def as_row(self) -> dict:
        return asdict(self)


def _quantiles(v: np.ndarray, m: int) -> np.ndarray:
    v = np.sort(v, axis=-1)
    if v.shape[-1] == m:
        return v
    levels = (np.arange(m) + 0.5) / m
    src = (np.arange(v.shape[-1]) + 0.5) / v.shape[-1]
    return np.stack([np.interp(levels, src, row) for row in v])


def sliced_w2(set_a, set_b, n_projections: int = N_PROJECTIONS, seed: int = PROJECTION_SEED) -> float:
    """sqrt of the mean (over random unit directions) of the 1-D squared W2.

    Equal-size sets use the sorted-match form; otherwise quantiles are matched
    on a common grid.
    """
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sliced_w2 needs non-empty point sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    m = max(len(a), len(b))
    pa = _quantiles(dirs @ a.T, m)
    pb = _quantiles(dirs @ b.T, m)
    return float(np.sqrt(np.mean((pa - pb) ** 2)))


def eval_conditions(n: int, reward_fn, n_modes: int) -> np.ndarray:
    if getattr(reward_fn, "conditional", True):
        return np.arange(n) % n_modes
    return np.full(n, -1)


def generate(params: ModelParams, conds, seed: int, steps: int = EVAL_STEPS) -> np.ndarray:
    x, _ = rollout(params, conds, SamplerConfig(steps=steps, noise_scale=0.0, seed=seed))
    return x


def evaluate(params: ModelParams, reward_fn, n_samples: int, data_holdout, seed: int,
             iteration: int = 0, train_loss: float = float("nan"), degenerate: int = 0,
             wall_seconds: float = 0.0, n_modes: int = 8) -> MetricsRecord:
    if n_samples < 1:
        raise ValueError("evaluate needs n_samples >= 1")
    conds = eval_conditions(n_samples, reward_fn, n_modes)
    x = generate(params, conds, seed)
    with np.errstate(over="ignore", invalid="ignore"):
        mean_reward = float(np.mean(reward_fn(np.where(conds < 0, 0, conds), x)))
        w2 = sliced_w2(x, data_holdout)
    if not (np.isfinite(mean_reward) and np.isfinite(w2)):
        raise FloatingPointError(f"non-finite evaluation at iteration {iteration}: "
                                 f"reward {mean_reward}, sliced-W2 {w2}")
    return MetricsRecord(
        iteration=iteration,
        mean_reward=mean_reward,
        sliced_w2=w2,
        train_loss=train_loss,
        degenerate_groups=degenerate,
        wall_seconds=wall_seconds,
    )
