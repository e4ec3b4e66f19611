"""Variant grid runner and the directional checks over its results."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .checkpoint import save_checkpoint
from .config import ConfigError, TrainConfig, config_from_mapping
from .metrics import MetricsRecord
from .nn import ModelParams
from .reports import write_csv, write_metrics
from .trainers import build_reward, posttrain

log = logging.getLogger(__name__)

BUILTIN_VARIANTS = {
    "dgpo-ode": {"algorithm": "dgpo", "sampler": "ode"},
    "dgpo-sde": {"algorithm": "dgpo", "sampler": "sde"},
    "dgpo-offline": {"algorithm": "dgpo-offline", "sampler": "ode"},
    "dpo": {"algorithm": "dpo", "sampler": "ode"},
    "dpo-offline": {"algorithm": "dpo-offline", "sampler": "ode"},
    "grpo": {"algorithm": "grpo", "sampler": "sde"},
    "clip-on": {"algorithm": "dgpo", "sampler": "ode", "t_min": 0.3},
    "clip-off": {"algorithm": "dgpo", "sampler": "ode", "t_min": 0.0},
}

MATCH_TOL = 0.02


@dataclass
class AblationSpec:
    base: TrainConfig
    variants: list[tuple[str, dict]]
    parallel: bool = False


@dataclass
class VariantResult:
    name: str
    metrics: list[MetricsRecord] = field(default_factory=list)
    error: str = ""

    @property
    def final(self) -> MetricsRecord | None:
        return self.metrics[-1] if self.metrics else None


def parse_ablation(doc: dict, where: str = "config") -> AblationSpec:
    doc = dict(doc)
    grid = doc.pop("ablate", {})
    custom = doc.pop("variant", {})
    base = config_from_mapping(doc, where)
    names = grid.get("variants", [])
    if not isinstance(names, list):
        raise ConfigError(f"{where}: [ablate] variants must be a list of names")
    unknown = set(grid) - {"variants", "parallel"}
    if unknown:
        raise ConfigError(f"{where}: unknown field [ablate] {sorted(unknown)[0]}")
    variants = []
    for name in names:
        if name in custom:
            overrides = dict(custom[name])
        elif name in BUILTIN_VARIANTS:
            overrides = dict(BUILTIN_VARIANTS[name])
        else:
            raise ConfigError(f"{where}: variant {name!r} is neither built in nor defined under [variant.{name}]")
        # validate now so a typo fails before any training
        config_from_mapping({**base.to_dict(), **overrides}, f"{where} [variant.{name}]")
        variants.append((name, overrides))
    return AblationSpec(base, variants, bool(grid.get("parallel", False)))


def load_ablation(path) -> AblationSpec:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_ablation(doc, str(path))


def _run_variant(name: str, cfg: TrainConfig, base_params: ModelParams, out_dir) -> VariantResult:
    res = VariantResult(name)
    try:
        result = posttrain(cfg, base_params, build_reward(cfg))
    except Exception as exc:  # recorded; remaining variants still run
        log.error("variant %s failed: %s", name, exc)
        res.error = f"{type(exc).__name__}: {exc}"
        return res
    res.metrics = result.metrics
    if out_dir is not None:
        sub = Path(out_dir) / name
        write_metrics(sub / "metrics.csv", result.metrics)
        save_checkpoint(sub / "final.json", result.params, meta={"variant": name})
    return res


def run_ablation(spec: AblationSpec, base_params: ModelParams, out_dir=None) -> list[VariantResult]:
    if not spec.variants:
        raise ConfigError("no variants: the ablation grid is empty")
    jobs = [(name, TrainConfig(**{**spec.base.to_dict(), **ov})) for name, ov in spec.variants]
    if spec.parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            futures = [pool.submit(_run_variant, n, c, base_params, out_dir) for n, c in jobs]
            return [f.result() for f in futures]
    return [_run_variant(n, c, base_params, out_dir) for n, c in jobs]


def directional_checks(results: list[VariantResult]) -> list[dict]:
    """Orderings mirrored from the ablation study; ``holds`` is None when a needed variant is absent."""
    final = {r.name: r.final for r in results if r.final is not None}
    base = next((r.metrics[0].mean_reward for r in results if r.metrics), None)

    def reward(name):
        return final[name].mean_reward

    def check(label, needed, fn):
        if not all(n in final for n in needed) or base is None:
            return {"check": label, "holds": None, "detail": f"needs variants {needed}"}
        holds, detail = fn()
        return {"check": label, "holds": bool(holds), "detail": detail}

    out = [
        check("ode_rollout_beats_sde", ["dgpo-ode", "dgpo-sde"],
              lambda: (reward("dgpo-ode") >= reward("dgpo-sde"),
                       f"ode {reward('dgpo-ode'):.4f} vs sde {reward('dgpo-sde'):.4f}")),
        check("online_beats_offline_beats_base", ["dgpo-ode", "dgpo-offline"],
              lambda: (reward("dgpo-ode") >= reward("dgpo-offline") >= base,
                       f"online {reward('dgpo-ode'):.4f}, offline {reward('dgpo-offline'):.4f}, base {base:.4f}")),
        check("dgpo_beats_dpo", ["dgpo-ode", "dpo"],
              lambda: (reward("dgpo-ode") >= reward("dpo"),
                       f"dgpo {reward('dgpo-ode'):.4f} vs dpo {reward('dpo'):.4f}")),
    ]

    def clip_guard():
        on, off = final["clip-on"], final["clip-off"]
        matched = abs(on.mean_reward - off.mean_reward) <= MATCH_TOL
        detail = (f"reward on {on.mean_reward:.4f} / off {off.mean_reward:.4f} "
                  f"({'matched' if matched else 'not matched'} within {MATCH_TOL}); "
                  f"sliced-W2 on {on.sliced_w2:.4f} / off {off.sliced_w2:.4f}")
        return matched and on.sliced_w2 <= off.sliced_w2, detail

    out.append(check("clip_keeps_quality", ["clip-on", "clip-off"], clip_guard))
    return out


def write_ablation_outputs(results: list[VariantResult], out_dir) -> dict:
    out_dir = Path(out_dir)
    rows = [[r.name, m.iteration, m.mean_reward, m.sliced_w2] for r in results for m in r.metrics]
    write_csv(out_dir / "ablation.csv", ["variant", "iteration", "reward", "sliced_w2"], rows)
    summary = [[r.name, r.final.mean_reward if r.final else "", r.final.sliced_w2 if r.final else "",
                "failed: " + r.error if r.error else "ok"] for r in results]
    write_csv(out_dir / "summary.csv", ["variant", "final_reward", "final_sliced_w2", "status"], summary)
    checks = directional_checks(results)
    lines = ["| variant | final reward | final sliced-W2 | status |", "|---|---|---|---|"]
    for name, rew, w2, status in summary:
        fr = f"{rew:.4f}" if rew != "" else "-"
        fw = f"{w2:.4f}" if w2 != "" else "-"
        lines.append(f"| {name} | {fr} | {fw} | {status} |")
    lines += ["", "| check | holds | detail |", "|---|---|---|"]
    for c in checks:
        mark = {True: "yes", False: "NO", None: "n/a"}[c["holds"]]
        lines.append(f"| {c['check']} | {mark} | {c['detail']} |")
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n")
    report = {"variants": [r.name for r in results], "failed": [r.name for r in results if r.error],
              "checks": checks}
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
