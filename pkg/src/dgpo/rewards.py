"""Reward functions: analytic toy targets, text fidelity, learned Bradley-Terry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import Arch, ModelParams, init_params, value_and_grad
from .optim import OptimizerState, adam_step

N_MODES = 8
MODE_TAU = 0.1
RING_RADIUS = 1.0
RING_WIDTH = 0.05


def mode_centers(k: int = N_MODES, radius: float = 1.0) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(k) / k
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def mode_reward(cond, x, tau: float = MODE_TAU, centers: np.ndarray | None = None):
    """exp(-||x - mu_k||^2 / (2 tau^2)); vectorised over rows of x / cond."""
    centers = mode_centers() if centers is None else centers
    cond = np.asarray(cond)
    if np.any(cond < 0) or np.any(cond >= len(centers)):
        raise ValueError(f"unknown condition {cond}; expected 0..{len(centers) - 1}")
    x = np.asarray(x, dtype=np.float64)
    d2 = np.sum((x - centers[cond]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * tau**2))


def ring_reward(x, radius: float = RING_RADIUS, width: float = RING_WIDTH):
    r = np.linalg.norm(np.asarray(x, dtype=np.float64), axis=-1)
    return np.exp(-((r - radius) ** 2) / (2.0 * width**2))


def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def text_fidelity(rendered: str, target: str) -> float:
    if not target:
        raise ValueError("target text must be non-empty")
    return max(1.0 - levenshtein(rendered, target) / len(target), 0.0)


@dataclass(frozen=True)
class PreferencePair:
    cond: int
    winner: np.ndarray
    loser: np.ndarray


@dataclass
class RewardFn:
    """Callable reward ``r(cond, x)`` over batches of 2-D points.

    ``conditional`` is False for rewards that ignore the condition; trainers
    then roll out with the null condition.
    """

    tag: str
    conditional: bool
    params: dict = field(default_factory=dict)
    model: ModelParams | None = None

    def __call__(self, cond, x):
        x = np.asarray(x, dtype=np.float64)
        if self.tag == "mode-target":
            return mode_reward(cond, x, tau=self.params.get("tau", MODE_TAU))
        if self.tag == "ring":
            return ring_reward(x, self.params.get("radius", RING_RADIUS), self.params.get("width", RING_WIDTH))
        if self.tag == "learned-bt":
            return np.asarray(bt_score(self.model, x, cond))
        raise ValueError(f"reward {self.tag!r} is not evaluable on points")


def make_reward(tag: str, **params) -> RewardFn:
    if tag == "mode-target":
        return RewardFn(tag, True, params)
    if tag == "ring":
        return RewardFn(tag, False, params)
    raise ValueError(f"unknown reward {tag!r}; choose mode-target or ring")


# --- learned Bradley-Terry reward ----------------------------------------

def bt_arch(n_cond: int = N_MODES + 1) -> Arch:
    # the denoiser MLP with a scalar head; t is pinned at 1
    return Arch(data_dim=2, hidden=(32, 32), time_dim=4, n_cond=n_cond, cond_dim=4)


def bt_score(model: ModelParams, x, cond):
    """Scalar reward r_phi(c, x): first output coordinate of the MLP at t=1."""
    from .nn import mlp_forward

    x = np.asarray(x, dtype=np.float64)
    batch = x.reshape(-1, 2)
    out = mlp_forward(model, batch, 1.0, np.broadcast_to(np.asarray(cond), (batch.shape[0],)))
    score = ad.take(out, (slice(None), 0))
    return score if x.ndim == 2 else ad.reshape(score, ())


def bt_loss(model: ModelParams, pairs: list[PreferencePair]):
    """Mean of -log sigmoid(r(c, x_w) - r(c, x_l)) = mean softplus(r_l - r_w)."""
    conds = np.array([p.cond for p in pairs])
    xw = np.stack([p.winner for p in pairs])
    xl = np.stack([p.loser for p in pairs])
    margin = bt_score(model, xw, conds) - bt_score(model, xl, conds)
    return ad.mean(ad.softplus(-margin))


def train_bt_reward(pairs: list[PreferencePair], epochs: int = 200, lr: float = 1e-2, seed: int = 0,
                    arch: Arch | None = None, log: list | None = None) -> RewardFn:
    """Full-batch maximum-likelihood fit of a Bradley-Terry reward network."""
    if not pairs:
        raise ValueError("need at least one preference pair")
    arch = arch or bt_arch()
    model = init_params(arch, seed)
    opt = OptimizerState.for_params(model, lr)
    for _ in range(int(epochs)):
        loss, g = value_and_grad(lambda p: bt_loss(p, pairs), model)
        adam_step(opt, model, g)
        if log is not None:
            log.append(loss)
    return RewardFn("learned-bt", True, {}, model)
