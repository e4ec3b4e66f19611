"""Pretraining and the post-training loops (online/offline DGPO, DPO, GRPO)."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import MixtureTask
from .diffusion import T_FLOOR, SamplerConfig, Schedule, denoising_loss, rollout
from .losses import Group, dgpo_objective, dpo_objective, grpo_objective, make_group
from .metrics import MetricsRecord, evaluate, generate, sliced_w2
from .nn import Arch, ModelParams, init_params, value_and_grad
from .optim import OptimizerState, adam_step, ema_update
from .rewards import RewardFn, make_reward

log = logging.getLogger(__name__)

# stream tags for derived RNG streams
_PRETRAIN, _ITER, _ROLLOUT, _EVAL = 0, 1, 2, 3


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, last_good: ModelParams):
        super().__init__(msg)
        self.last_good = last_good


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0])


def build_arch(cfg: TrainConfig) -> Arch:
    return Arch(data_dim=2, hidden=tuple(cfg.hidden), time_dim=cfg.time_dim,
                n_cond=cfg.n_modes + 1, cond_dim=cfg.cond_dim)


def build_task(cfg: TrainConfig) -> MixtureTask:
    return MixtureTask(n_modes=cfg.n_modes, mode_std=cfg.mode_std)


def build_reward(cfg: TrainConfig) -> RewardFn:
    if cfg.reward == "mode-target":
        return make_reward("mode-target", tau=cfg.reward_tau)
    return make_reward(cfg.reward)


def holdout_points(cfg: TrainConfig) -> np.ndarray:
    x, _ = build_task(cfg).balanced(cfg.holdout_size, cfg.seed)
    return x


def eval_seed(cfg: TrainConfig) -> int:
    return derive_seed(cfg.seed, _EVAL)


# --- pretraining ----------------------------------------------------------


@dataclass
class PretrainResult:
    params: ModelParams
    w2_log: list[tuple[int, float]]
    losses: list[float] = field(repr=False, default_factory=list)


def pretrain(cfg: TrainConfig, task: MixtureTask | None = None, out_dir=None) -> PretrainResult:
    """Fit the conditional x-prediction denoiser to the mixture."""
    task = task or build_task(cfg)
    arch = build_arch(cfg)
    schedule = Schedule(weighting=cfg.weighting)
    params = init_params(arch, cfg.init_seed)
    opt = OptimizerState.for_params(params, cfg.pretrain_lr, mode=cfg.optimizer)
    rng = np.random.default_rng([cfg.seed, _PRETRAIN])
    hold = holdout_points(cfg)
    conds_eval = np.arange(cfg.eval_samples) % cfg.n_modes
    seed_eval = eval_seed(cfg)

    def w2_now():
        return sliced_w2(generate(params, conds_eval, seed_eval, cfg.rollout_steps), hold)

    w2_log = [(0, w2_now())]
    losses = []
    n = cfg.pretrain_batch
    for step in range(1, cfg.pretrain_steps + 1):
        x, cond = task.sample(n, rng)
        cond = np.where(rng.random(n) < cfg.cond_drop, -1, cond)
        t = T_FLOOR + (1.0 - T_FLOOR) * (1.0 - rng.random(n))
        eps = rng.standard_normal((n, 2))
        lam = schedule.lam(t)

        def loss_fn(p):
            return ad.mean(denoising_loss(p, x, t, eps, cond) * lam)

        last_good = params.copy()
        try:
            loss, g = value_and_grad(loss_fn, params)
            adam_step(opt, params, g)
        except (ad.NumericalError, FloatingPointError) as exc:
            raise TrainingDiverged(f"pretraining diverged at step {step}: {exc}", last_good) from exc
        losses.append(loss)
        if step % cfg.pretrain_eval_every == 0 or step == cfg.pretrain_steps:
            try:
                w2 = w2_now()
            except FloatingPointError as exc:
                raise TrainingDiverged(f"pretraining diverged by step {step}: {exc}", last_good) from exc
            w2_log.append((step, w2))
            log.info("pretrain step %d loss %.5f sliced-W2 %.4f", step, np.mean(losses[-100:]), w2)
            if out_dir is not None:
                save_checkpoint(Path(out_dir) / "checkpoints" / f"pretrain_{step:06d}.json", params,
                                meta={"step": step, "sliced_w2": w2})
    return PretrainResult(params, w2_log, losses)


# --- post-training --------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    theta_minus: ModelParams
    metrics: list[MetricsRecord]
    t_log: list[float] = field(repr=False, default_factory=list)
    losses: list[float] = field(repr=False, default_factory=list)
    null_groups: int = 0
    total_groups: int = 0
    skipped_iterations: int = 0
    # (theta, theta_minus) of the last parameter after every iteration
    ema_trace: list[tuple[float, float]] = field(repr=False, default_factory=list)


GRPO_ODE_MESSAGE = ("grpo requires sampler = 'sde' with noise_scale > 0: deterministic ODE rollouts "
                    "do not provide a stochastic policy to take a policy gradient through")


def _check_algorithm(cfg: TrainConfig, allowed: tuple[str, ...]) -> None:
    if cfg.algorithm not in allowed:
        raise ValueError(f"algorithm {cfg.algorithm!r} is not handled here (expected {allowed})")
    if cfg.algorithm == "grpo" and (cfg.sampler != "sde" or cfg.noise_scale <= 0):
        raise ValueError(GRPO_ODE_MESSAGE)


def dgpo_train(cfg, theta_init, reward_fn, **kw) -> TrainResult:
    _check_algorithm(cfg, ("dgpo",))
    return _posttrain(cfg, theta_init, reward_fn, **kw)


def offline_variant(cfg, theta_init, reward_fn, **kw) -> TrainResult:
    _check_algorithm(cfg, ("dgpo-offline", "dpo-offline"))
    return _posttrain(cfg, theta_init, reward_fn, **kw)


def dpo_train(cfg, theta_init, reward_fn, **kw) -> TrainResult:
    _check_algorithm(cfg, ("dpo", "dpo-offline"))
    return _posttrain(cfg, theta_init, reward_fn, **kw)


def grpo_train(cfg, theta_init, reward_fn, **kw) -> TrainResult:
    _check_algorithm(cfg, ("grpo",))
    return _posttrain(cfg, theta_init, reward_fn, **kw)


def posttrain(cfg: TrainConfig, theta_init: ModelParams, reward_fn: RewardFn, **kw) -> TrainResult:
    """Dispatch on ``cfg.algorithm``."""
    return {
        "dgpo": dgpo_train,
        "dgpo-offline": offline_variant,
        "dpo": dpo_train,
        "dpo-offline": offline_variant,
        "grpo": grpo_train,
    }[cfg.algorithm](cfg, theta_init, reward_fn, **kw)


@dataclass
class IterationPlan:
    """Everything random about one iteration, drawn up front in a fixed order."""

    task_conds: np.ndarray
    dropped: np.ndarray
    ts: np.ndarray
    epss: np.ndarray
    rollout_seed: int


def plan_iteration(cfg: TrainConfig, n: int) -> IterationPlan:
    rng = np.random.default_rng([cfg.seed, _ITER, n])
    b = cfg.groups_per_iter
    task_conds = rng.integers(0, cfg.n_modes, size=b)
    dropped = rng.random(b) < cfg.cond_drop
    ts = 1.0 - (1.0 - cfg.t_min) * rng.random(b)  # U(t_min, 1]
    ts = np.maximum(ts, T_FLOOR)
    epss = rng.standard_normal((b, 2))
    return IterationPlan(task_conds, dropped, ts, epss, derive_seed(cfg.seed, _ROLLOUT, n))


def build_groups(cfg: TrainConfig, plan: IterationPlan, model: ModelParams, reward_fn: RewardFn,
                 record: bool = False):
    """Roll out G samples per group from ``model`` and score them."""
    G, b = cfg.group_size, cfg.groups_per_iter
    if reward_fn.conditional:
        model_conds = np.where(plan.dropped, -1, plan.task_conds)
    else:
        model_conds = np.full(b, -1)
    a = cfg.noise_scale if cfg.sampler == "sde" else 0.0
    sampler = SamplerConfig(cfg.rollout_steps, a, plan.rollout_seed)
    x, trajs = rollout(model, np.repeat(model_conds, G), sampler, np.arange(b * G), record=record)
    groups = []
    for gi in range(b):
        rows = slice(gi * G, (gi + 1) * G)
        rewards = reward_fn(np.full(G, plan.task_conds[gi]), x[rows])
        g = make_group(int(plan.task_conds[gi]), x[rows], rewards, int(model_conds[gi]), cfg.eps_std)
        if trajs is not None:
            g.meta["trajectories"] = trajs[rows]
        groups.append(g)
    return groups


def _loss_fn(cfg: TrainConfig, groups: list[Group], plan: IterationPlan, theta_ref: ModelParams,
             schedule: Schedule):
    """Objective over the non-degenerate groups, or None if there are none."""
    live = [i for i, g in enumerate(groups) if not g.degenerate]
    if not live:
        return None
    ts, epss = plan.ts[live], plan.epss[live]
    chosen = [groups[i] for i in live]
    algo = cfg.algorithm

    if algo in ("dgpo", "dgpo-offline"):
        lams = schedule.lam(ts)
        return lambda p: dgpo_objective(p, theta_ref, chosen, ts, epss, cfg.beta, lams)

    if algo in ("dpo", "dpo-offline"):
        # best-vs-worst pair; argmax/argmin break ties by lowest sample index
        xw = np.stack([g.samples[np.argmax(g.rewards)] for g in chosen])
        xl = np.stack([g.samples[np.argmin(g.rewards)] for g in chosen])
        conds = np.array([g.model_cond for g in chosen])
        return lambda p: dpo_objective(p, theta_ref, xw, xl, conds, ts, epss, cfg.beta)

    trajs = [tr for g in chosen for tr in g.meta["trajectories"]]
    advs = np.concatenate([g.advantages for g in chosen])
    return lambda p: grpo_objective(p, trajs, advs, cfg.clip, cfg.noise_scale)


def _posttrain(cfg: TrainConfig, theta_init: ModelParams, reward_fn: RewardFn, out_dir=None,
               holdout=None, on_eval=None) -> TrainResult:
    start = time.perf_counter()
    schedule = Schedule(weighting=cfg.weighting)
    theta_ref = theta_init.copy()
    theta = theta_init.copy()
    theta_minus = theta_init.copy()
    offline = cfg.algorithm.endswith("-offline")
    grpo = cfg.algorithm == "grpo"
    opt = OptimizerState.for_params(theta, cfg.lr, mode=cfg.optimizer)
    hold = holdout_points(cfg) if holdout is None else holdout
    seed_eval = eval_seed(cfg)
    res = TrainResult(theta, theta_minus, [])
    interval_losses: list[float] = []
    interval_degenerate = 0

    last_good = theta.copy()  # parameters of the last clean evaluation (and checkpoint)

    def record(iteration: int):
        nonlocal interval_losses, interval_degenerate, last_good
        loss = float(np.mean(interval_losses)) if interval_losses else 0.0
        rec = evaluate(theta, reward_fn, cfg.eval_samples, hold, seed_eval, iteration=iteration,
                       train_loss=loss, degenerate=interval_degenerate,
                       wall_seconds=time.perf_counter() - start, n_modes=cfg.n_modes)
        res.metrics.append(rec)
        last_good = theta.copy()
        interval_losses, interval_degenerate = [], 0
        log.info("%s iter %d reward %.4f sliced-W2 %.4f loss %.4f", cfg.algorithm, iteration,
                 rec.mean_reward, rec.sliced_w2, rec.train_loss)
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / "checkpoints" / f"iter_{iteration:05d}.json", theta,
                            meta={"iteration": iteration, "algorithm": cfg.algorithm})
        if on_eval is not None:
            on_eval(rec)

    def _iteration(n: int):
        nonlocal interval_degenerate
        plan = plan_iteration(cfg, n)
        if offline:
            source = theta_ref
        elif grpo:
            source = theta  # rollouts come from theta_old = theta
        else:
            source = theta_minus
        groups = build_groups(cfg, plan, source, reward_fn, record=grpo)
        res.total_groups += len(groups)
        res.null_groups += int(sum(g.model_cond < 0 for g in groups))
        interval_degenerate += sum(g.degenerate for g in groups)

        loss_fn = _loss_fn(cfg, groups, plan, theta_ref, schedule)
        if loss_fn is None:
            res.skipped_iterations += 1
        else:
            res.t_log.extend(plan.ts[[not g.degenerate for g in groups]].tolist())
            for _ in range(cfg.grpo_inner_steps if grpo else 1):
                loss, g = value_and_grad(loss_fn, theta)
                adam_step(opt, theta, g)
                res.losses.append(loss)
                interval_losses.append(loss)
            if not offline and not grpo:
                if n < cfg.ema_start:
                    theta_minus.values[:] = theta.values
                else:
                    theta_minus.values[:] = ema_update(theta_minus, theta, cfg.ema_decay).values
        res.ema_trace.append((float(theta.values[-1]), float(theta_minus.values[-1])))

        if (n + 1) % cfg.eval_every == 0 or n + 1 == cfg.iterations:
            record(n + 1)

    record(0)
    for n in range(cfg.iterations):
        try:
            _iteration(n)
        except (ad.NumericalError, FloatingPointError) as exc:
            raise TrainingDiverged(f"{cfg.algorithm} diverged at iteration {n}: {exc}", last_good) from exc
    return res
