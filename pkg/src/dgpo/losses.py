"""Group advantages and the DGPO, Diffusion-DPO and GRPO objectives."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .diffusion import RolloutTrajectory, denoising_loss, transition_mean
from .nn import ModelParams, value_and_grad

EPS_STD = 1e-8


class DegenerateGroupError(ValueError):
    """All rewards in the group are equal, so there is no preference signal."""


@dataclass
class Group:
    cond: int  # task condition used for the reward
    samples: np.ndarray  # (G, dim)
    rewards: np.ndarray
    model_cond: int = -1  # condition fed to the model; -1 is the null row
    advantages: np.ndarray | None = None
    positive: np.ndarray | None = None
    weights: np.ndarray | None = None
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.rewards)

    def signed_weights(self) -> np.ndarray:
        return np.where(self.positive, self.weights, -self.weights)


def advantages(rewards, eps_std: float = EPS_STD) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("advantages need a group of at least 2 rewards")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return (r - r.mean()) / max(r.std(), eps_std)


def partition_and_weight(group: Group) -> Group:
    if group.advantages is None:
        raise ValueError("group advantages are not populated")
    a = np.asarray(group.advantages, dtype=np.float64)
    positive = a > 0
    return replace(group, positive=positive, weights=np.abs(a), degenerate=not positive.any())


def make_group(cond: int, samples, rewards, model_cond: int = -1, eps_std: float = EPS_STD) -> Group:
    g = Group(cond, np.asarray(samples, dtype=np.float64), np.asarray(rewards, dtype=np.float64), model_cond)
    g.advantages = advantages(g.rewards, eps_std)
    return partition_and_weight(g)


def grouped_argument(diffs, group: Group, beta: float, lam: float):
    """-lam*beta*(sum_{G+} w d - sum_{G-} w d), the two-sum form."""
    d = np.asarray(diffs, dtype=np.float64)
    pos = np.sum(group.weights[group.positive] * d[group.positive])
    neg = np.sum(group.weights[~group.positive] * d[~group.positive])
    return -lam * beta * (pos - neg)


def compact_argument(diffs, group: Group, beta: float, lam: float):
    """-lam*beta*sum_i A_i d_i, algebraically identical to the two-sum form."""
    return -lam * beta * float(np.dot(group.advantages, np.asarray(diffs, dtype=np.float64)))


def dgpo_loss_from_diffs(diffs, group: Group, beta: float, lam: float = 1.0) -> float:
    return float(np.logaddexp(0.0, -grouped_argument(diffs, group, beta, lam)))


def _dsm_diffs(theta: ModelParams, theta_ref: ModelParams, x, t, eps, cond):
    """Per-row L_dsm(theta) - L_dsm(theta_ref); only the theta half is traced."""
    ref = denoising_loss(theta_ref, x, t, eps, cond)
    return denoising_loss(theta, x, t, eps, cond) - ad.value_of(ref)


def dgpo_objective(theta: ModelParams, theta_ref: ModelParams, groups: list[Group], ts, epss,
                   beta: float, lams):
    """Mean over groups of softplus(-z_g); one shared (t, eps) per group.

    Groups are stacked into a single forward pass; a constant segment matrix
    sums signed weighted diffs back per group.
    """
    if any(g.degenerate for g in groups):
        raise DegenerateGroupError("degenerate group passed to the DGPO loss")
    sizes = [g.size for g in groups]
    x = np.concatenate([g.samples for g in groups])
    t_rows = np.repeat(np.asarray(ts, dtype=np.float64), sizes)
    eps_rows = np.repeat(np.atleast_2d(np.asarray(epss, dtype=np.float64)), sizes, axis=0)
    cond_rows = np.repeat([g.model_cond for g in groups], sizes)
    d = _dsm_diffs(theta, theta_ref, x, t_rows, eps_rows, cond_rows)

    seg = np.zeros((len(groups), len(x)))
    start = 0
    for gi, g in enumerate(groups):
        seg[gi, start:start + g.size] = g.signed_weights()
        start += g.size
    scale = -np.asarray(lams, dtype=np.float64) * beta
    z = ad.reshape(seg @ ad.reshape(d, (len(x), 1)), (len(groups),)) * scale
    return ad.mean(ad.softplus(-z))


def dgpo_loss(theta: ModelParams, theta_ref: ModelParams, group: Group, t: float, eps, beta: float,
              lambda_t: float = 1.0):
    """Returns (loss, gradient w.r.t. theta) for one group."""
    if group.degenerate:
        raise DegenerateGroupError("all rewards equal; skip this group")
    return value_and_grad(lambda p: dgpo_objective(p, theta_ref, [group], [t], [eps], beta, [lambda_t]), theta)


def dpo_objective(theta: ModelParams, theta_ref: ModelParams, x_w, x_l, conds, ts, epss, beta: float):
    """Mean over pairs of -log sigmoid(-beta*((Lw - Lw_ref) - (Ll - Ll_ref)))."""
    x_w, x_l = np.atleast_2d(x_w), np.atleast_2d(x_l)
    n = len(x_w)
    x = np.concatenate([x_w, x_l])
    t_rows = np.tile(np.atleast_1d(np.asarray(ts, dtype=np.float64)), 2)
    eps_rows = np.tile(np.atleast_2d(np.asarray(epss, dtype=np.float64)), (2, 1))
    cond_rows = np.tile(np.broadcast_to(np.asarray(conds), (n,)), 2)
    d = _dsm_diffs(theta, theta_ref, x, t_rows, eps_rows, cond_rows)
    z = (ad.take(d, slice(0, n)) - ad.take(d, slice(n, None))) * (-beta)
    return ad.mean(ad.softplus(-z))


def dpo_loss(theta: ModelParams, theta_ref: ModelParams, x_w, x_l, cond, t, eps, beta: float):
    return value_and_grad(lambda p: dpo_objective(p, theta_ref, x_w, x_l, [cond], [t], [eps], beta), theta)


def gaussian_logprob(x, mean, variance, dim: int | None = None):
    """Isotropic Gaussian log-density, row-wise over the last axis."""
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance <= 0):
        raise ValueError("variance must be positive")
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[-1] if dim is None else dim
    sq = ad.total(ad.square(x - mean), axis=-1 if x.ndim > 1 else None)
    return sq * (-0.5 / variance) - 0.5 * dim * np.log(2.0 * np.pi * variance)


@dataclass
class GrpoStepRecord:
    new_logp: np.ndarray
    old_logp: np.ndarray
    advantage: np.ndarray
    clip: float

    @property
    def ratio(self) -> np.ndarray:
        return np.exp(self.new_logp - self.old_logp)


def _stack_steps(trajs: list[RolloutTrajectory]):
    xs = np.concatenate([tr.x[:-1] for tr in trajs])
    nxt = np.concatenate([tr.x[1:] for tr in trajs])
    ts = np.concatenate([tr.t for tr in trajs])
    var = np.concatenate([tr.var for tr in trajs])
    means = np.concatenate([tr.mean for tr in trajs])
    conds = np.concatenate([np.full(len(tr.t), tr.cond) for tr in trajs])
    return xs, nxt, ts, var, means, conds


def grpo_objective(theta: ModelParams, trajs: list[RolloutTrajectory], advs, clip: float,
                   noise_scale: float, theta_old: ModelParams | None = None, records: list | None = None):
    """Sum over trajectories of -mean_k min(rho_k A, clip(rho_k) A)."""
    if not trajs:
        raise ValueError("no trajectories")
    xs, nxt, ts, var, old_means, conds = _stack_steps(trajs)
    if np.any(var <= 0):
        raise ValueError("trajectory has zero transition variance; GRPO needs noise_scale > 0")
    dt = trajs[0].dt
    if theta_old is not None:
        old_means = transition_mean(theta_old, xs, ts, conds, dt, noise_scale)
    old_logp = gaussian_logprob(nxt, old_means, var)
    new_mean = transition_mean(theta, xs, ts, conds, dt, noise_scale)
    new_logp = gaussian_logprob(nxt, new_mean, var)
    ratio = ad.exp(new_logp - old_logp)
    a_rows = np.concatenate([np.full(len(tr.t), float(a)) for tr, a in zip(trajs, np.atleast_1d(advs))])
    surr = ad.minimum(ratio * a_rows, ad.clip(ratio, 1.0 - clip, 1.0 + clip) * a_rows)
    steps = len(trajs[0].t)
    # -mean over each trajectory's steps, summed over trajectories
    obj = ad.total(surr) * (-1.0 / steps)
    if records is not None:
        records.append(GrpoStepRecord(ad.value_of(new_logp).copy(), old_logp, a_rows, clip))
    return obj


def grpo_loss(theta: ModelParams, trajectory, advantage, clip: float = 0.2, noise_scale: float | None = None,
              theta_old: ModelParams | None = None):
    """(loss, grad) for one trajectory (or a list of them with matching advantages)."""
    trajs = trajectory if isinstance(trajectory, list) else [trajectory]
    if noise_scale is None:
        noise_scale = infer_noise_scale(trajs[0])
    return value_and_grad(lambda p: grpo_objective(p, trajs, advantage, clip, noise_scale, theta_old), theta)


def infer_noise_scale(traj: RolloutTrajectory) -> float:
    """Recover a from var_k = a^2 t_k^2 dt."""
    return float(np.sqrt(traj.var[0] / (traj.t[0] ** 2 * traj.dt)))
