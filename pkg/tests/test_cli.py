from __future__ import annotations

import json
import xml.etree.ElementTree as ET

import pytest

from dqslam.cli import main
from dqslam.dataset_io import read_dataset
from dqslam.factors import graph_residual
from dqslam.pipeline import build_graph, ground_truth_graph


SMALL = [
    "--n-landmarks", "4",
    "--trajectory-length", "65",
    "--n-loops", "1",
]
ZERO_NOISE = [
    "--bbox-corner-sigma-px", "0",
    "--odo-sigma", "0",
    "--odo-turn-omega-sigma", "0",
    "--relpos-sigma-m", "0",
]


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["simulate", "--seed", "7", "--out", str(a), *SMALL]) == 0
    assert main(["simulate", "--seed", "7", "--out", str(b), *SMALL]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_zero_noise_passes_ground_truth_oracle(tmp_path):
    out = tmp_path / "ds.json"
    code = main(
        ["simulate", "--seed", "3", "--landmark-shape", "sphere", "--out", str(out)]
        + SMALL
        + ZERO_NOISE
    )
    assert code == 0
    ds = read_dataset(out)
    g = ground_truth_graph(build_graph(ds, mode="with-relpos"), ds)
    _, cost = graph_residual(g)
    assert cost < 1e-10


def test_simulate_defaults_match_published_setup(capsys, tmp_path):
    # the documented defaults: 10 landmarks, 130 m, two loops, 1280x1024,
    # 1 px corner noise, 0.02 odometry noise, 0.1 turn noise, 10 cm relpos
    from dqslam.simulator import SensorConfig, WorldConfig

    w, s = WorldConfig(), SensorConfig()
    assert (w.n_landmarks, w.trajectory_length, w.n_loops) == (10, 130.0, 2)
    assert (w.landmark_z_sigma, w.cube_side_mean, w.cube_side_sigma, w.cube_side_floor) == (
        0.3, 0.5, 0.3, 0.2)
    assert (s.focal_mm, s.pixel_size_m) == (15.0, 10e-6)
    assert (s.image_width, s.image_height, s.detection_min_px) == (1280, 1024, 100.0)
    assert (s.bbox_corner_sigma_px, s.odo_sigma, s.odo_turn_omega_sigma, s.relpos_sigma_m) == (
        1.0, 0.02, 0.1, 0.1)


def test_simulate_rejects_invalid_flag_value(tmp_path, capsys):
    code = None
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--cube-side-floor", "-1", "--out", str(tmp_path / "x.json")])
    assert exc.value.code == 2
    assert "--cube-side-floor" in capsys.readouterr().err


def test_solve_zero_noise_and_svg(tmp_path):
    ds_path = tmp_path / "ds.json"
    main(
        ["simulate", "--seed", "3", "--landmark-shape", "sphere", "--out", str(ds_path)]
        + SMALL
        + ZERO_NOISE
    )
    out = tmp_path / "res.json"
    svg = tmp_path / "map.svg"
    code = main(
        ["solve", "--dataset", str(ds_path), "--mode", "monocular",
         "--out", str(out), "--svg", str(svg)]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["schema"] == "dqslam.results"
    assert doc["metrics"]["rmse_pos_slam"] < 1e-3
    assert doc["report"]["converged"]

    root = ET.parse(svg).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    polylines = root.findall(f"{ns}polyline")
    circles = root.findall(f"{ns}circle")
    assert len(polylines) == 3
    n_landmarks = len(read_dataset(ds_path).landmarks)
    assert len(circles) == 3 * n_landmarks
    fills = {c.get("fill") for c in circles}
    assert len(fills) == 3  # one marker color per estimate set


def test_solve_manifest_lists_artifacts(tmp_path):
    ds_path = tmp_path / "ds.json"
    main(["simulate", "--seed", "1", "--out", str(ds_path)] + SMALL)
    out = tmp_path / "res.json"
    main(["solve", "--dataset", str(ds_path), "--out", str(out)])
    manifest = json.loads((tmp_path / "res.json.manifest.json").read_text())
    assert str(out) in manifest["artifacts"]
    assert manifest["command"] == "solve"
    assert manifest["seeds"] == [1]


def test_evaluate_csv_format_and_determinism(tmp_path):
    args = ["evaluate", "--trials", "2", "--base-seed", "5"] + SMALL
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    assert main(args + ["--out-dir", str(d1), "--workers", "1"]) == 0
    assert main(args + ["--out-dir", str(d2), "--workers", "2"]) == 0
    csv1 = (d1 / "results.csv").read_bytes()
    csv2 = (d2 / "results.csv").read_bytes()
    assert csv1 == csv2

    lines = csv1.decode().splitlines()
    assert lines[0] == (
        "seed,mode,rmse_pos_init,rmse_pos_slam,rmse_lm,rmse_volume,"
        "volume_invalid_count,iterations,final_cost"
    )
    assert len(lines) == 1 + 2 * 2  # two seeds x two modes
    first = lines[1].split(",")
    assert first[0] == "5" and first[1] == "monocular"
    assert lines[2].split(",")[1] == "with-relpos"
    # >= 9 significant digits in decimal-point notation
    assert len(first[2].replace(".", "").replace("-", "").lstrip("0")) >= 9
    assert "e" not in first[2]


def test_evaluate_summary_single_trial_avg_equals_med(tmp_path):
    out = tmp_path / "r"
    main(["evaluate", "--trials", "1", "--base-seed", "0", "--out-dir", str(out),
          "--workers", "1"] + SMALL)
    summary = json.loads((out / "summary.json").read_text())
    agg = summary["aggregate"]["monocular"]
    assert agg["rmse_pos_slam"]["avg"] == agg["rmse_pos_slam"]["med"]
    assert summary["n_failures"] == 0


def test_rerun_reproduces_outputs(tmp_path):
    out = tmp_path / "r"
    main(["evaluate", "--trials", "2", "--base-seed", "3", "--out-dir", str(out),
          "--workers", "1"] + SMALL)
    csv_before = (out / "results.csv").read_bytes()
    assert main(["rerun", str(out / "run_manifest.json")]) == 0
    assert (out / "results.csv").read_bytes() == csv_before


def test_missing_dataset_reports_error(tmp_path, capsys):
    code = main(["solve", "--dataset", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o.json")])
    assert code == 2
    assert "error" in capsys.readouterr().err
