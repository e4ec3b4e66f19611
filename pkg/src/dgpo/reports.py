"""CSV dumps, run manifests and the scatter SVG."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .rewards import mode_centers

SCHEMA = 1
SVG_SIZE = 800
SVG_RANGE = 1.6
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"]
NULL_COLOR = "#7f7f7f"

METRIC_FIELDS = ["iteration", "mean_reward", "sliced_w2", "train_loss", "degenerate_groups"]


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list[str], rows) -> Path:
    """CSV with a leading ``# schema=N`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema={SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_metrics(path, records) -> Path:
    # wall-clock time lives in timing.csv so metrics stay reproducible byte-for-byte
    return write_csv(path, METRIC_FIELDS, ([getattr(r, f) for f in METRIC_FIELDS] for r in records))


def write_timing(path, records) -> Path:
    return write_csv(path, ["iteration", "wall_seconds"], ([r.iteration, r.wall_seconds] for r in records))


def write_samples(path, x, conds, seed: int) -> Path:
    x = np.asarray(x)
    return write_csv(path, ["seed", "condition", "x0", "x1"],
                     ([seed, int(c), row[0], row[1]] for row, c in zip(x, conds)))


def write_trajectories(path, trajs) -> Path:
    rows = []
    for tr in trajs:
        for k in range(len(tr.t)):
            rows.append([tr.seed, k, tr.t[k], *tr.x[k + 1], *tr.mean[k], tr.var[k]])
    return write_csv(path, ["seed", "step", "t", "x0", "x1", "mean0", "mean1", "variance"], rows)


def code_hash() -> str:
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


class ManifestExists(FileExistsError):
    pass


def write_manifest(out_dir, command: str, config: dict, extra: dict | None = None) -> Path:
    path = Path(out_dir) / "manifest.json"
    if path.exists():
        raise ManifestExists(f"{path} already exists; choose a fresh --out directory")
    doc = {"schema": SCHEMA, "command": command, "seed": config.get("seed"), "code_hash": code_hash(),
           "config": config, **(extra or {})}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# --- SVG -------------------------------------------------------------------


def to_px(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    scale = SVG_SIZE / (2 * SVG_RANGE)
    return np.stack([(p[:, 0] + SVG_RANGE) * scale, (SVG_RANGE - p[:, 1]) * scale], axis=1)


def from_px(px) -> np.ndarray:
    px = np.asarray(px, dtype=np.float64).reshape(-1, 2)
    scale = SVG_SIZE / (2 * SVG_RANGE)
    return np.stack([px[:, 0] / scale - SVG_RANGE, SVG_RANGE - px[:, 1] / scale], axis=1)


def emit_scatter_svg(points, labels, path, centers: np.ndarray | None = None, title: str = "") -> Path:
    points = np.asarray(points, dtype=np.float64)
    if points.size and (points.ndim != 2 or points.shape[1] != 2):
        raise ValueError(f"scatter needs (N, 2) points, got shape {points.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) != len(points.reshape(-1, 2)):
        raise ValueError("one label per point required")
    centers = mode_centers() if centers is None else centers
    s = SVG_SIZE
    mid = s / 2
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {s} {s}" width="{s}" height="{s}">',
           f'<rect x="0" y="0" width="{s}" height="{s}" fill="white"/>',
           f'<line class="axis" x1="0" y1="{mid}" x2="{s}" y2="{mid}" stroke="#bbbbbb"/>',
           f'<line class="axis" x1="{mid}" y1="0" x2="{mid}" y2="{s}" stroke="#bbbbbb"/>']
    if title:
        out.append(f"<title>{title}</title>")
    for cx, cy in to_px(centers):
        out.append(f'<g class="mode"><line x1="{cx - 8:.2f}" y1="{cy:.2f}" x2="{cx + 8:.2f}" y2="{cy:.2f}" '
                   f'stroke="black"/><line x1="{cx:.2f}" y1="{cy - 8:.2f}" x2="{cx:.2f}" y2="{cy + 8:.2f}" '
                   f'stroke="black"/></g>')
    for (cx, cy), lab in zip(to_px(points) if points.size else [], labels):
        color = PALETTE[lab % len(PALETTE)] if lab >= 0 else NULL_COLOR
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill={quoteattr(color)} '
                   f'fill-opacity="0.7" data-label="{lab}"/>')
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path
