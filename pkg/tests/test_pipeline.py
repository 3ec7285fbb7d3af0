"""
Tests for the staged pipeline
"""
import json

import numpy as np
import pytest

from crackscan.config import apply_overrides
from crackscan.errors import CalibrationError, ConfigError
from crackscan.pipeline import Pipeline, RunRecord, _alpha_tag
from crackscan.stats.multitest import EmpiricalNull
from crackscan.volume.io import load_binary_volume, save_binary_volume, save_raw


def test_alpha_tag():
    assert _alpha_tag(0.5) == "0p5"
    assert _alpha_tag(0.05) == "0p05"


def test_load_phantom_input(small_config):
    pipeline = Pipeline(small_config)
    image, truth = pipeline.load_input()
    assert image.dims == (32, 32, 32)
    assert truth.count() > 0
    assert pipeline.load_input()[0] is image
    assert "load" in pipeline.timings


def test_load_raw_input_with_truth(tmp_path, small_config, small_phantom):
    image, truth = small_phantom
    image_path = save_raw(image, tmp_path / "image.raw")
    truth_path = save_binary_volume(truth, tmp_path / "truth.raw")
    config = apply_overrides(
        small_config,
        {"input.path": str(image_path), "input.phantom": None, "evaluate.truth_path": str(truth_path)},
    )
    loaded, loaded_truth = Pipeline(config).load_input()
    assert np.array_equal(loaded.data, image.data)
    assert np.array_equal(loaded_truth.data, truth.data)


@pytest.mark.parametrize("method", ["mhe", "frangi", "sheet", "percolation"])
def test_every_filter_binarizes(small_config, method):
    pipeline = Pipeline(small_config)
    image, _ = pipeline.load_input()
    mask = pipeline.binarize(image, method)
    assert mask.dims == image.dims
    assert (pipeline.last_percolation is not None) == (method == "percolation")


def test_detect_and_evaluate(small_config):
    pipeline = Pipeline(small_config)
    image, truth = pipeline.load_input()
    result = pipeline.detect(image)

    assert result.grid.g == 4
    assert result.null.size == 27
    (report,) = result.reports
    assert report.alpha == 0.5
    assert report.cubes.dims == (4, 4, 4)
    for stage in ("load", "binarize", "features", "calibrate", "test"):
        assert stage in pipeline.timings

    rows = pipeline.evaluate_detection(result, truth)
    assert [(row.stage, row.level) for row in rows] == [("mhe", "voxel"), ("detect alpha=0.5", "cube")]
    for row in rows:
        assert 0.0 <= row.precision <= 1.0
        assert 0.0 <= row.recall <= 1.0


def test_null_from_file_must_match(tmp_path, small_config):
    path = EmpiricalNull(values=np.arange(10.0), g=5, u=2).save(tmp_path / "null.csv")
    config = apply_overrides(small_config, {"detect.null_path": str(path), "detect.null_phantom": None})
    with pytest.raises(CalibrationError):
        Pipeline(config).null()


def test_null_file_must_share_the_alternative(tmp_path, small_config):
    null = Pipeline(small_config).null()
    assert null.alternative == "greater"
    path = null.save(tmp_path / "null.csv")
    config = apply_overrides(
        small_config,
        {"detect.null_path": str(path), "detect.null_phantom": None, "detect.alternative": "two-sided"},
    )
    with pytest.raises(CalibrationError, match="alternative"):
        Pipeline(config).null()


def test_missing_null_source(small_config):
    config = apply_overrides(small_config, {"detect.null_phantom": None})
    with pytest.raises(ConfigError):
        Pipeline(config).null()


def test_compare_shares_hessians(small_config):
    pipeline = Pipeline(small_config, share_hessians=True)
    image, truth = pipeline.load_input()
    rows, runtimes = pipeline.compare(image, truth)
    assert [row.stage for row in rows] == ["mhe", "frangi", "sheet", "percolation"]
    assert set(runtimes) == {"mhe", "frangi", "sheet", "percolation"}
    # one scale, so every filter after the first reuses the same Hessian
    assert pipeline.cache.misses == 1
    assert pipeline.cache.hits == 3


def test_outputs_and_manifest(small_config):
    pipeline = Pipeline(small_config)
    image, truth = pipeline.load_input()
    result = pipeline.detect(image)
    record = RunRecord("detect")
    pipeline.write_null(result.null, record)
    pipeline.write_detection(result, image, record)
    pipeline.write_mask(truth, "truth", record, image=image)

    out = pipeline.output_dir
    assert (out / "null.csv").exists()
    assert (out / "report_alpha0p5.csv").exists()
    assert load_binary_volume(out / "cubes_alpha0p5.raw").dims == (4, 4, 4)
    assert (out / "overlay_alpha0p5_z16.pgm").exists()
    assert (out / "truth_z16.pgm").exists()
    assert (out / "truth_overlay_z16.pgm").exists()

    manifest = json.loads(pipeline.write_manifest(record).read_text())
    assert manifest["command"] == "detect"
    assert manifest["config_hash"] == small_config.config_hash()
    assert manifest["feature_signature"] == small_config.feature_signature()
    assert set(manifest["versions"]) == {"crackscan", "numpy", "scipy", "python"}
    assert manifest["outputs"] == record.outputs
    assert "test" in manifest["timings"]


def test_figures_show_tested_statistics_against_the_null(small_config):
    pytest.importorskip("matplotlib")
    pipeline = Pipeline(apply_overrides(small_config, {"runtime.figures": True}))
    image, _ = pipeline.load_input()
    result = pipeline.detect(image)
    record = RunRecord("detect")
    pipeline.write_detection(result, image, record)

    names = {path.rsplit("/", 1)[-1] for path in record.outputs}
    assert {"tested_histogram.png", "overlay_alpha0p5.png"} <= names
    assert (pipeline.output_dir / "tested_histogram.png").stat().st_size > 0


def test_eigen_slices(small_config):
    pipeline = Pipeline(apply_overrides(small_config, {"runtime.slice_axis": "x", "runtime.slice_index": 3}))
    image, _ = pipeline.load_input()
    record = RunRecord("binarize")
    pipeline.write_eigen_slices(image, record)
    names = sorted(path.rsplit("/", 1)[-1] for path in record.outputs)
    assert names == ["lambda1_sigma1_x3.pgm", "lambda2_sigma1_x3.pgm", "lambda3_sigma1_x3.pgm"]
