"""Small models and configs shared by the tests."""

import numpy as np

from dgpo.config import TrainConfig
from dgpo.losses import make_group
from dgpo.nn import Arch, ModelParams, init_params

SMALL = Arch(hidden=(8, 8), time_dim=4, cond_dim=4)


def small_params(seed: int = 0, scale: float = 1.0) -> ModelParams:
    p = init_params(SMALL, seed)
    if scale != 1.0:
        p.values *= scale
    return p


def perturbed(p: ModelParams, seed: int, size: float = 0.05) -> ModelParams:
    rng = np.random.default_rng(seed)
    return p.with_values(p.values + size * rng.standard_normal(p.values.size))


def random_group(rng, G: int, cond: int = 0) -> object:
    x = rng.normal(size=(G, 2))
    r = rng.random(G)
    return make_group(cond, x, r, model_cond=cond)


def tiny_config(**kw) -> TrainConfig:
    base = dict(hidden=[8, 8], time_dim=4, cond_dim=4, iterations=6, eval_every=3, ema_start=2,
                eval_samples=32, holdout_size=32, groups_per_iter=2, group_size=4,
                pretrain_steps=20, pretrain_batch=32, pretrain_eval_every=10)
    base.update(kw)
    return TrainConfig(**base)

# one "PASS|FAIL criterion: detail" line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
