"""
Tests for the command-line interface
"""
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from crackscan import __version__
from crackscan.cli import cli
from crackscan.evaluation.metrics import read_metrics
from crackscan.stats.multitest import EmpiricalNull
from crackscan.volume.io import load_binary_volume, save_binary_volume
from crackscan.volume.volume import BinaryVolume


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path, small_config):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_config.to_dict()))
    return str(path)


@pytest.fixture
def out_dir(small_config):
    return Path(small_config.runtime.output_dir)


def test_help_lists_commands(runner):
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == 0
    for command in ("phantom", "binarize", "features", "calibrate", "detect", "evaluate", "compare"):
        assert command in result.output


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_phantom_command(runner, config_file, out_dir):
    result = runner.invoke(cli, ["phantom", "-c", config_file, "--seed", "5"])
    assert result.exit_code == 0, result.output
    assert (out_dir / "phantom.raw").exists()
    assert load_binary_volume(out_dir / "phantom_truth.raw").count() == 5 * 32 * 32

    manifest = json.loads((out_dir / "manifest-phantom.json").read_text())
    assert manifest["config"]["input"]["phantom"]["seed"] == 5


def test_homogeneous_phantom(runner, config_file, out_dir):
    result = runner.invoke(cli, ["phantom", "-c", config_file, "--homogeneous"])
    assert result.exit_code == 0, result.output
    assert load_binary_volume(out_dir / "phantom_truth.raw").count() == 0


def test_binarize_command(runner, config_file, out_dir):
    result = runner.invoke(cli, ["binarize", "-c", config_file, "--filter", "percolation", "--eigen-slices"])
    assert result.exit_code == 0, result.output
    assert load_binary_volume(out_dir / "mask_percolation.raw").dims == (32, 32, 32)
    assert (out_dir / "material.raw").exists()
    assert (out_dir / "lambda1_sigma1_z16.pgm").exists()
    assert (out_dir / "manifest-binarize.json").exists()


def test_zero_sigma_is_a_config_error(runner, config_file):
    result = runner.invoke(cli, ["binarize", "-c", config_file, "--sigma", "0"])
    assert result.exit_code == 2


def test_unknown_override_key(runner, config_file):
    result = runner.invoke(cli, ["binarize", "-c", config_file, "--set", "filter.bogus=1"])
    assert result.exit_code == 2


def test_unknown_filter_choice(runner, config_file):
    result = runner.invoke(cli, ["binarize", "-c", config_file, "--filter", "sobel"])
    assert result.exit_code == 2


def test_features_command(runner, config_file, out_dir):
    result = runner.invoke(cli, ["features", "-c", config_file])
    assert result.exit_code == 0, result.output
    lines = (out_dir / "features.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 4 ** 3
    for channel in ("a", "b", "c"):
        assert (out_dir / f"{channel}_z.pgm").exists()


def test_calibrate_then_detect(runner, config_file, out_dir):
    result = runner.invoke(cli, ["calibrate", "-c", config_file])
    assert result.exit_code == 0, result.output
    null = EmpiricalNull.load(out_dir / "null.csv")
    assert (null.g, null.u) == (4, 2)
    assert (out_dir / "null_histogram.csv").exists()

    saved = out_dir.parent / "null.csv"
    saved.write_text((out_dir / "null.csv").read_text())
    result = runner.invoke(cli, ["detect", "-c", config_file, "--null", str(saved), "-a", "0.1", "-a", "0.5"])
    assert result.exit_code == 0, result.output
    for tag in ("0p1", "0p5"):
        assert (out_dir / f"report_alpha{tag}.csv").exists()
        assert load_binary_volume(out_dir / f"cubes_alpha{tag}.raw").dims == (4, 4, 4)
    manifest = json.loads((out_dir / "manifest-detect.json").read_text())
    assert manifest["config"]["detect"]["alphas"] == [0.1, 0.5]


def test_detect_with_mismatched_null(runner, config_file, tmp_path):
    path = EmpiricalNull(values=np.arange(5.0), g=6, u=2).save(tmp_path / "other.csv")
    result = runner.invoke(cli, ["detect", "-c", config_file, "--null", str(path)])
    assert result.exit_code == 4


def test_detect_without_null_source(runner, config_file):
    result = runner.invoke(cli, ["detect", "-c", config_file, "--set", "detect.null_phantom=null"])
    assert result.exit_code == 2


def test_evaluate_pipeline(runner, config_file, out_dir):
    result = runner.invoke(cli, ["evaluate", "-c", config_file])
    assert result.exit_code == 0, result.output
    rows = read_metrics(out_dir / "metrics.csv")
    assert [(row.stage, row.level) for row in rows] == [("mhe", "voxel"), ("detect alpha=0.5", "cube")]


def test_evaluate_given_masks(runner, config_file, tmp_path, out_dir, small_phantom):
    _, truth = small_phantom
    truth_path = save_binary_volume(truth, tmp_path / "truth.raw")
    cubes = np.zeros((4, 4, 4), dtype=np.uint8)
    cubes[1:3] = 1
    cubes_path = save_binary_volume(BinaryVolume(cubes), tmp_path / "cubes.raw")

    result = runner.invoke(
        cli,
        ["evaluate", "-c", config_file, "--truth", str(truth_path), "--pred", str(truth_path),
         "--cubes", str(cubes_path), "--stage", "oracle"],
    )
    assert result.exit_code == 0, result.output
    rows = read_metrics(out_dir / "metrics.csv")
    assert [(row.stage, row.level, row.f1) for row in rows] == [("oracle", "voxel", 1.0), ("oracle", "cube", 1.0)]


def test_evaluate_needs_truth_for_masks(runner, config_file, tmp_path, small_phantom):
    _, truth = small_phantom
    pred_path = save_binary_volume(truth, tmp_path / "pred.raw")
    result = runner.invoke(cli, ["evaluate", "-c", config_file, "--pred", str(pred_path)])
    assert result.exit_code == 2


def test_evaluate_dims_mismatch(runner, config_file, tmp_path, small_phantom):
    _, truth = small_phantom
    truth_path = save_binary_volume(truth, tmp_path / "truth.raw")
    pred_path = save_binary_volume(BinaryVolume.zeros((16, 16, 16)), tmp_path / "pred.raw")
    result = runner.invoke(cli, ["evaluate", "-c", config_file, "--truth", str(truth_path), "--pred", str(pred_path)])
    assert result.exit_code == 3


def test_compare_command(runner, config_file, out_dir):
    result = runner.invoke(cli, ["compare", "-c", config_file])
    assert result.exit_code == 0, result.output
    rows = read_metrics(out_dir / "compare.csv")
    assert [row.stage for row in rows] == ["mhe", "frangi", "sheet", "percolation"]
    timings = json.loads((out_dir / "manifest-compare.json").read_text())["timings"]
    assert "filter sheet" in timings


def test_alpha_outside_unit_interval(runner, config_file):
    result = runner.invoke(cli, ["detect", "-c", config_file, "-a", "1.5"])
    assert result.exit_code == 2


def test_calibration_is_deterministic(runner, config_file, out_dir):
    assert runner.invoke(cli, ["calibrate", "-c", config_file]).exit_code == 0
    first = (out_dir / "null.csv").read_text()
    assert runner.invoke(cli, ["calibrate", "-c", config_file]).exit_code == 0
    assert (out_dir / "null.csv").read_text() == first
