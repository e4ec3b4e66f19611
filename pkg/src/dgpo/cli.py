"""Command-line entry point: pretrain | posttrain | eval | ablate | plot.

Exit status: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .ablation import load_ablation, run_ablation, write_ablation_outputs
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainConfig, load_config
from .metrics import eval_conditions, evaluate, generate
from .reports import (ManifestExists, emit_scatter_svg, read_csv, write_csv, write_manifest, write_metrics,
                      write_samples, write_timing)
from .trainers import (GRPO_ODE_MESSAGE, TrainingDiverged, build_reward, build_task, eval_seed, holdout_points,
                       posttrain, pretrain)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
N_SCATTER = 512

log = logging.getLogger("dgpo")


def _resolve(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
        cfg.validate()
    return cfg


def _base_checkpoint(cfg: TrainConfig):
    if not cfg.checkpoint:
        raise ConfigError("checkpoint: a pretrained checkpoint path is required for this command")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint: file {path} does not exist")
    params, _, _ = load_checkpoint(path)
    return params


def _dump_samples(params, cfg: TrainConfig, out: Path, title: str) -> None:
    reward_fn = build_reward(cfg)
    conds = eval_conditions(N_SCATTER, reward_fn, cfg.n_modes)
    seed = eval_seed(cfg)
    x = generate(params, conds, seed, cfg.rollout_steps)
    write_samples(out / "samples.csv", x, conds, seed)
    emit_scatter_svg(x, conds, out / "scatter.svg", centers=build_task(cfg).centers, title=title)


def cmd_pretrain(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    write_manifest(out, "pretrain", cfg.to_dict())
    res = pretrain(cfg, out_dir=out)
    write_csv(out / "pretrain_metrics.csv", ["step", "sliced_w2"], res.w2_log)
    save_checkpoint(out / "base.json", res.params, meta={"kind": "pretrained"})
    _dump_samples(res.params, cfg, out, "pretrained base model")
    first, last = res.w2_log[0][1], res.w2_log[-1][1]
    print(f"pretrain done: sliced-W2 {first:.4f} -> {last:.4f}; checkpoint {out / 'base.json'}")
    return EXIT_OK


def cmd_posttrain(args) -> int:
    cfg = _resolve(args)
    if cfg.algorithm == "grpo" and (cfg.sampler != "sde" or cfg.noise_scale <= 0):
        raise ConfigError(GRPO_ODE_MESSAGE)
    base = _base_checkpoint(cfg)
    out = Path(args.out)
    write_manifest(out, "posttrain", cfg.to_dict())
    res = posttrain(cfg, base, build_reward(cfg), out_dir=out)
    write_metrics(out / "metrics.csv", res.metrics)
    write_timing(out / "timing.csv", res.metrics)
    save_checkpoint(out / "final.json", res.params, meta={"algorithm": cfg.algorithm})
    _dump_samples(res.params, cfg, out, f"{cfg.algorithm} after {cfg.iterations} iterations")
    m0, m1 = res.metrics[0], res.metrics[-1]
    print(f"{cfg.algorithm}: reward {m0.mean_reward:.4f} -> {m1.mean_reward:.4f}, "
          f"sliced-W2 {m0.sliced_w2:.4f} -> {m1.sliced_w2:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    params = _base_checkpoint(cfg)
    out = Path(args.out)
    rec = evaluate(params, build_reward(cfg), cfg.eval_samples, holdout_points(cfg), eval_seed(cfg),
                   n_modes=cfg.n_modes)
    write_metrics(out / "eval.csv", [rec])
    print(f"mean reward {rec.mean_reward:.4f}, sliced-W2 {rec.sliced_w2:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    spec = load_ablation(args.config) if args.config else None
    if spec is None or not spec.variants:
        raise ConfigError("no variants: list them under [ablate] variants = [...]")
    if args.seed is not None:
        spec.base = spec.base.replace(seed=args.seed)
    out = Path(args.out)
    write_manifest(out, "ablate", spec.base.to_dict(), {"variants": dict(spec.variants)})
    if spec.base.checkpoint:
        base = _base_checkpoint(spec.base)
    else:
        log.info("no checkpoint configured; pretraining a base model first")
        base = pretrain(spec.base, out_dir=out / "pretrain").params
        save_checkpoint(out / "pretrain" / "base.json", base)
    results = run_ablation(spec, base, out)
    report = write_ablation_outputs(results, out)
    print((out / "summary.md").read_text(), end="")
    return EXIT_RUNTIME if report["failed"] else EXIT_OK


def cmd_plot(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    samples = out / "samples.csv"
    if cfg.checkpoint:
        params = _base_checkpoint(cfg)
        _dump_samples(params, cfg, out, Path(cfg.checkpoint).name)
    elif samples.exists():
        rows = read_csv(samples)
        x = np.array([[float(r["x0"]), float(r["x1"])] for r in rows]).reshape(-1, 2)
        emit_scatter_svg(x, [int(r["condition"]) for r in rows], out / "scatter.svg",
                         centers=build_task(cfg).centers)
    else:
        raise ConfigError(f"plot needs a checkpoint in the config or an existing {samples}")
    print(f"wrote {out / 'scatter.svg'}")
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "posttrain": cmd_posttrain, "eval": cmd_eval,
            "ablate": cmd_ablate, "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dgpo", description="Desk-scale group preference optimisation lab.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", metavar="PATH", help="TOML config (or a run manifest.json)")
    p.add_argument("--out", metavar="DIR", default="runs/latest", help="output directory")
    p.add_argument("--seed", metavar="U64", type=int, help="override the config seed")
    p.add_argument("--quiet", action="store_true", help="only print warnings and the final summary")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ManifestExists, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
