import json
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dgpo.diffusion import SamplerConfig, rollout
from dgpo.reports import (ManifestExists, code_hash, emit_scatter_svg, from_px, read_csv, write_csv,
                          write_manifest, write_trajectories)
from helpers import small_params

NS = "{http://www.w3.org/2000/svg}"


def _circles(path):
    root = ET.parse(path).getroot()
    return root, root.findall(f"{NS}circle")


def test_empty_scatter_has_axes_and_mode_crosses(tmp_path):
    root, circles = _circles(emit_scatter_svg(np.zeros((0, 2)), [], tmp_path / "s.svg"))
    assert root.get("viewBox") == "0 0 800 800"
    assert not circles
    assert len(root.findall(f"{NS}g[@class='mode']")) == 8
    assert len(root.findall(f"{NS}line[@class='axis']")) == 2


def test_origin_maps_to_centre(tmp_path):
    _, circles = _circles(emit_scatter_svg(np.zeros((1, 2)), [0], tmp_path / "s.svg"))
    assert (float(circles[0].get("cx")), float(circles[0].get("cy"))) == (400.0, 400.0)


def test_corner_orientation(tmp_path):
    _, circles = _circles(emit_scatter_svg(np.array([[1.6, 1.6]]), [1], tmp_path / "s.svg"))
    assert (float(circles[0].get("cx")), float(circles[0].get("cy"))) == (800.0, 0.0)


def test_round_trip_of_512_samples(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.5, 1.5, size=(512, 2))
    labels = rng.integers(0, 8, 512)
    _, circles = _circles(emit_scatter_svg(pts, labels, tmp_path / "s.svg"))
    assert len(circles) == 512
    px = np.array([[float(c.get("cx")), float(c.get("cy"))] for c in circles])
    back = from_px(px)
    assert np.max(np.abs(back - pts)) * 250 <= 0.5
    assert [int(c.get("data-label")) for c in circles] == list(labels)
    assert len({c.get("fill") for c in circles}) == 8


def test_null_condition_gets_neutral_colour(tmp_path):
    _, circles = _circles(emit_scatter_svg(np.zeros((2, 2)), [-1, 0], tmp_path / "s.svg"))
    assert circles[0].get("fill") != circles[1].get("fill")


@pytest.mark.parametrize("bad", [np.zeros((3, 3)), np.zeros(4), np.zeros((2, 2, 2))])
def test_non_2d_points_rejected(tmp_path, bad):
    with pytest.raises(ValueError):
        emit_scatter_svg(bad, np.zeros(len(bad)), tmp_path / "s.svg")


def test_csv_carries_schema_header(tmp_path):
    write_csv(tmp_path / "m.csv", ["a", "b"], [[1, 0.1 + 0.2]])
    text = (tmp_path / "m.csv").read_text().splitlines()
    assert text[0] == "# schema=1" and text[1] == "a,b"
    assert float(read_csv(tmp_path / "m.csv")[0]["b"]) == 0.1 + 0.2


def test_trajectory_dump_columns(tmp_path):
    _, trajs = rollout(small_params(0), [0, 1], SamplerConfig(3, 0.5, 2), record=True)
    rows = read_csv(write_trajectories(tmp_path / "t.csv", trajs))
    assert len(rows) == 6
    assert list(rows[0]) == ["seed", "step", "t", "x0", "x1", "mean0", "mean1", "variance"]
    assert float(rows[0]["variance"]) == pytest.approx(trajs[0].var[0])


def test_manifest_is_never_overwritten(tmp_path):
    write_manifest(tmp_path, "posttrain", {"seed": 3, "beta": 1.0})
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["seed"] == 3 and doc["config"]["beta"] == 1.0 and doc["schema"] == 1
    assert re.fullmatch(r"[0-9a-f]{64}", doc["code_hash"]) and doc["code_hash"] == code_hash()
    with pytest.raises(ManifestExists):
        write_manifest(tmp_path, "posttrain", {"seed": 4})
