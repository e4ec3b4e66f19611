"""Rectified-flow schedule, denoising loss and Euler / Euler-Maruyama samplers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nn import ModelParams, mlp_forward

T_FLOOR = 1e-3

LAMBDAS = {
    "one": lambda t: np.ones_like(np.asarray(t, dtype=np.float64)),
    "snr": lambda t: ((1.0 - np.asarray(t)) / np.asarray(t)) ** 2,
}


@dataclass(frozen=True)
class Schedule:
    kind: str = "rectified-flow"
    weighting: str = "one"
    t_floor: float = T_FLOOR

    def __post_init__(self):
        if self.kind != "rectified-flow":
            raise ValueError(f"unsupported schedule {self.kind!r}")
        if self.weighting not in LAMBDAS:
            raise ValueError(f"unknown loss weighting {self.weighting!r}; choose from {sorted(LAMBDAS)}")

    @staticmethod
    def alpha(t):
        return 1.0 - np.asarray(t, dtype=np.float64)

    @staticmethod
    def sigma(t):
        return np.asarray(t, dtype=np.float64)

    def lam(self, t):
        return LAMBDAS[self.weighting](t)


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 10
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("sampler needs at least one step")
        if not np.isfinite(self.noise_scale) or self.noise_scale < 0:
            raise ValueError("noise_scale must be finite and >= 0")


@dataclass
class RolloutTrajectory:
    """Per-step record of one stochastic rollout.

    ``x`` holds the steps+1 visited states (x[0] is the prior draw); step k
    moves x[k] -> x[k+1] with Gaussian mean ``mean[k]`` and isotropic variance
    ``var[k]`` at time ``t[k]``.
    """

    cond: int
    seed: int
    t: np.ndarray
    x: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    @property
    def dt(self) -> float:
        return 1.0 / len(self.t)

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]


def _col(t, ndim):
    t = np.asarray(t, dtype=np.float64)
    return t[:, None] if (t.ndim == 1 and ndim == 2) else t


def forward_diffuse(x, t, eps):
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise ValueError(f"x {x.shape} and eps {eps.shape} differ in shape")
    tc = _col(t, x.ndim)
    return (1.0 - tc) * x + tc * eps


def denoising_loss(params: ModelParams, x, t, eps, cond):
    """||f(x_t, t, c) - x||^2; per-row vector for batched x, scalar otherwise."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.asarray(t) <= 0) or np.any(np.asarray(t) > 1):
        raise ValueError("t must lie in (0, 1]")
    x_t = forward_diffuse(x, t, eps)
    err = mlp_forward(params, x_t, t, cond) - x
    return ad.total(ad.square(err), axis=-1 if x.ndim == 2 else None)


def _check_floor(t, t_floor):
    if np.any(np.asarray(t) < t_floor):
        raise ValueError(f"t below t_floor={t_floor}")


def x_to_velocity(x_hat, x_t, t, t_floor: float = T_FLOOR):
    _check_floor(t, t_floor)
    x_t = np.asarray(x_t, dtype=np.float64)
    return (x_t - x_hat) / _col(t, x_t.ndim)


def score_from_xpred(x_hat, x_t, t, t_floor: float = T_FLOOR):
    _check_floor(t, t_floor)
    x_t = np.asarray(x_t, dtype=np.float64)
    tc = _col(t, x_t.ndim)
    return ((1.0 - tc) * x_hat - x_t) / (tc * tc)


def time_grid(steps: int) -> np.ndarray:
    """Descending uniform grid 1 = t_0 > ... > t_steps = 0."""
    return 1.0 - np.arange(steps + 1) / steps


def transition_mean(params: ModelParams, x, t, cond, dt: float, noise_scale: float):
    """Mean of one reverse step from time t; traced when ``params`` is."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = mlp_forward(params, x, t, cond)
    mean = x - dt * x_to_velocity(x_hat, x, t)
    if noise_scale > 0:
        g2 = (noise_scale * np.asarray(t, dtype=np.float64)) ** 2
        mean = mean + dt * _col(0.5 * g2, x.ndim) * score_from_xpred(x_hat, x, t)
    return mean


def _rngs(seed: int, indices) -> list[np.random.Generator]:
    return [np.random.default_rng([int(seed), int(i)]) for i in indices]


def rollout(params: ModelParams, conds, sampler: SamplerConfig, indices=None, record: bool = False):
    """Sample a batch; sample i uses the RNG stream derived from (seed, indices[i]).

    Returns (x_final (B, dim), list of RolloutTrajectory or None).
    """
    conds = np.atleast_1d(np.asarray(conds if conds is not None else -1, dtype=np.int64))
    batch = conds.size
    if indices is None:
        indices = np.arange(batch)
    dim = params.arch.data_dim
    steps, a = int(sampler.steps), float(sampler.noise_scale)
    noise = np.stack([r.standard_normal((steps + 1, dim)) for r in _rngs(sampler.seed, indices)])
    grid = time_grid(steps)
    dt = 1.0 / steps
    x = noise[:, 0, :]
    path = [x]
    means, variances = [], []
    for k in range(steps):
        t = np.full(batch, grid[k])
        mean = transition_mean(params, x, t, conds, dt, a)
        var = (a * grid[k]) ** 2 * dt
        x = mean + np.sqrt(var) * noise[:, k + 1, :]
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite sampler state at step {k}")
        if record:
            path.append(x)
            means.append(mean)
            variances.append(var)
    if not record:
        return x, None
    xs, ms = np.stack(path, axis=1), np.stack(means, axis=1)
    var_arr = np.array(variances)
    trajs = [
        RolloutTrajectory(int(conds[i]), int(indices[i]), grid[:-1].copy(), xs[i], ms[i], var_arr.copy())
        for i in range(batch)
    ]
    return x, trajs


def ode_sample(params: ModelParams, cond, sampler: SamplerConfig, index: int = 0, return_path: bool = False):
    if sampler.noise_scale != 0:
        raise ValueError("ode_sample requires noise_scale == 0")
    x, trajs = rollout(params, [-1 if cond is None else cond], sampler, [index], record=return_path)
    if return_path:
        return x[0], trajs[0].x
    return x[0]


def sde_sample(params: ModelParams, cond, sampler: SamplerConfig, index: int = 0):
    x, trajs = rollout(params, [-1 if cond is None else cond], sampler, [index], record=True)
    return x[0], trajs[0]
