import numpy as np
import pytest

from dgpo.checkpoint import load_checkpoint
from dgpo.diffusion import T_FLOOR
from dgpo.nn import init_params
from dgpo.rewards import make_reward
from dgpo.trainers import (GRPO_ODE_MESSAGE, TrainingDiverged, build_arch, build_groups, dgpo_train, dpo_train,
                           grpo_train, offline_variant, plan_iteration, posttrain, pretrain)
from helpers import small_params, tiny_config

REWARD = make_reward("mode-target")
# wide bandwidth keeps rewards of an untrained model well above the eps_std floor
WIDE = make_reward("mode-target", tau=1.0)


class ConstantReward:
    conditional = True

    def __call__(self, cond, x):
        return np.ones(len(np.atleast_2d(x)))


def test_zero_iterations_is_identity():
    theta = small_params(0)
    for algo, sampler in [("dgpo", "ode"), ("dpo", "ode"), ("dgpo-offline", "ode"), ("grpo", "sde")]:
        res = posttrain(tiny_config(iterations=0, algorithm=algo, sampler=sampler), theta, REWARD)
        np.testing.assert_array_equal(res.params.values, theta.values)
        assert [m.iteration for m in res.metrics] == [0]


def test_zero_beta_leaves_parameters_unchanged():
    theta = small_params(0)
    res = dgpo_train(tiny_config(iterations=1, beta=0.0), theta, REWARD)
    assert res.losses == [pytest.approx(np.log(2.0), abs=1e-12)]
    np.testing.assert_array_equal(res.params.values, theta.values)


def test_pairwise_dgpo_and_dpo_runs_coincide():
    theta = small_params(1)
    kw = dict(group_size=2, iterations=8, seed=3, beta=20.0, lr=1e-3)
    a = dgpo_train(tiny_config(algorithm="dgpo", **kw), theta, WIDE)
    b = dpo_train(tiny_config(algorithm="dpo", **kw), theta, WIDE)
    assert np.max(np.abs(a.params.values - b.params.values)) <= 1e-9
    assert not np.array_equal(a.params.values, theta.values)


@pytest.mark.parametrize("t_min", [0.3, 0.0, 0.75])
def test_training_timesteps_respect_the_clip(t_min):
    res = dgpo_train(tiny_config(t_min=t_min, iterations=20), small_params(0), REWARD)
    t = np.array(res.t_log)
    assert len(t) > 0 and t.max() <= 1.0 and t.min() >= max(t_min, T_FLOOR)


def test_plan_timesteps_cover_the_interval():
    ts = np.concatenate([plan_iteration(tiny_config(t_min=0.3, groups_per_iter=8), n).ts for n in range(200)])
    assert ts.min() >= 0.3 and ts.max() <= 1.0
    assert ts.min() < 0.32 and ts.max() > 0.98


def test_ema_schedule():
    mu, start = 0.3, 4
    res = dgpo_train(tiny_config(iterations=10, ema_start=start, ema_decay=mu, lr=1e-2), small_params(0), REWARD)
    theta, shadow = map(np.array, zip(*res.ema_trace))
    np.testing.assert_array_equal(theta[:start], shadow[:start])
    expected = shadow[start - 1]
    for n in range(start, 10):
        expected = mu * expected + (1 - mu) * theta[n]
        assert shadow[n] == pytest.approx(expected, rel=1e-12, abs=1e-15)
    assert not np.allclose(theta[start:], shadow[start:])


def test_condition_drop_rate_within_three_standard_errors():
    p = 0.3
    cfg = tiny_config(cond_drop=p, groups_per_iter=16, iterations=60, eval_every=60, lr=1e-5)
    res = dgpo_train(cfg, small_params(0), REWARD)
    n = res.total_groups
    se = np.sqrt(p * (1 - p) / n)
    assert n == 960 and abs(res.null_groups / n - p) <= 3 * se


def test_unconditional_reward_rolls_out_with_null_condition():
    plan = plan_iteration(tiny_config(), 0)
    groups = build_groups(tiny_config(), plan, small_params(0), make_reward("ring"))
    assert all(g.model_cond == -1 for g in groups)


def test_runs_are_deterministic():
    cfg = tiny_config(iterations=6, seed=11)
    a = dgpo_train(cfg, small_params(0), REWARD)
    b = dgpo_train(cfg, small_params(0), REWARD)
    np.testing.assert_array_equal(a.params.values, b.params.values)
    strip = lambda ms: [(m.iteration, m.mean_reward, m.sliced_w2, m.train_loss) for m in ms]  # noqa: E731
    assert strip(a.metrics) == strip(b.metrics)
    c = dgpo_train(cfg.replace(seed=12), small_params(0), REWARD)
    assert not np.array_equal(a.params.values, c.params.values)


def test_offline_rollouts_do_not_move():
    cfg = tiny_config(algorithm="dgpo-offline")
    theta_ref = small_params(0)
    res = offline_variant(cfg, theta_ref, REWARD)
    np.testing.assert_array_equal(res.theta_minus.values, theta_ref.values)
    assert not np.array_equal(res.params.values, theta_ref.values)
    plan = plan_iteration(cfg, 2)
    g1 = build_groups(cfg, plan, theta_ref, REWARD)
    g2 = build_groups(cfg, plan, theta_ref, REWARD)
    for a, b in zip(g1, g2):
        np.testing.assert_array_equal(a.samples, b.samples)


def test_degenerate_iterations_are_skipped():
    theta = small_params(0)
    for algo in ("dgpo", "dpo"):
        res = posttrain(tiny_config(algorithm=algo, iterations=3), theta, ConstantReward())
        assert res.skipped_iterations == 3
        np.testing.assert_array_equal(res.params.values, theta.values)
        assert all(m.degenerate_groups in (0, 2 * 3) for m in res.metrics)


def test_grpo_rejects_ode_rollouts():
    with pytest.raises(ValueError, match="stochastic policy") as exc:
        grpo_train(tiny_config(algorithm="grpo", sampler="ode"), small_params(0), REWARD)
    assert str(exc.value) == GRPO_ODE_MESSAGE
    with pytest.raises(ValueError):
        grpo_train(tiny_config(algorithm="grpo", sampler="sde", noise_scale=0.0), small_params(0), REWARD)


def test_grpo_runs_and_moves_parameters():
    theta = small_params(0)
    res = grpo_train(tiny_config(algorithm="grpo", sampler="sde", lr=1e-3, grpo_inner_steps=2), theta, REWARD)
    assert len(res.losses) == 2 * 6
    assert not np.array_equal(res.params.values, theta.values)


def test_trainer_entry_points_check_the_algorithm_tag():
    with pytest.raises(ValueError):
        dgpo_train(tiny_config(algorithm="dpo"), small_params(0), REWARD)
    with pytest.raises(ValueError):
        offline_variant(tiny_config(algorithm="dgpo"), small_params(0), REWARD)


def test_metrics_logged_at_eval_interval_and_checkpoints_written(tmp_path):
    res = dgpo_train(tiny_config(iterations=7, eval_every=3), small_params(0), REWARD, out_dir=tmp_path)
    assert [m.iteration for m in res.metrics] == [0, 3, 6, 7]
    assert all(np.isfinite([m.mean_reward, m.sliced_w2, m.train_loss]).all() for m in res.metrics)
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["iter_00000.json", "iter_00003.json", "iter_00006.json", "iter_00007.json"]
    final, _, meta = load_checkpoint(tmp_path / "checkpoints" / "iter_00007.json")
    np.testing.assert_array_equal(final.values, res.params.values)


def test_posttrain_divergence_keeps_last_good():
    cfg = tiny_config(optimizer="sgd", lr=1e12, iterations=20)
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged) as exc:
        dgpo_train(cfg, small_params(0), WIDE)
    assert np.isfinite(exc.value.last_good.values).all()


def test_pretrain_zero_steps_returns_initialisation():
    cfg = tiny_config(pretrain_steps=0)
    res = pretrain(cfg)
    np.testing.assert_array_equal(res.params.values, init_params(build_arch(cfg), cfg.init_seed).values)


def test_pretrain_is_deterministic_and_reduces_loss(tmp_path):
    cfg = tiny_config(pretrain_steps=60, pretrain_lr=1e-2)
    a = pretrain(cfg, out_dir=tmp_path)
    b = pretrain(cfg)
    np.testing.assert_array_equal(a.params.values, b.params.values)
    assert np.mean(a.losses[-10:]) < np.mean(a.losses[:10])
    assert [s for s, _ in a.w2_log] == [0, 10, 20, 30, 40, 50, 60]
    assert (tmp_path / "checkpoints" / "pretrain_000060.json").exists()


def test_pretrain_divergence_raises():
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged, match="pretraining diverged"):
        pretrain(tiny_config(optimizer="sgd", pretrain_lr=1e15, pretrain_steps=50))
