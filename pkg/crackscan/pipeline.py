"""
End-to-end crack pre-localization pipeline

Stages: load or synthesize the volume, binarize with a Hessian filter, extract
the per-cube feature field, calibrate or load the empirical null, run the scan
tests, and evaluate against ground truth. Each stage is timed; every command
writes a manifest with the config, its hash, the timings and library versions.
"""
import json
import logging
import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy

import crackscan
from crackscan.config import PipelineConfig
from crackscan.errors import ConfigError
from crackscan.evaluation.metrics import MetricRow, cube_truth, evaluate, write_metrics
from crackscan.filters.hessian import (
    gaussian_hessian,
    hessian_eigenvalues,
    multiscale_frangi,
    multiscale_mhe,
    multiscale_sheet,
    three_sigma_binarize,
)
from crackscan.filters.percolation import PercolationResult, percolate
from crackscan.geometry.features import FeatureGrid, feature_grid, partition
from crackscan.phantom.generator import generate
from crackscan.stats.multitest import EmpiricalNull, TestReport, build_null, scan
from crackscan.utils.cache import HessianCache
from crackscan.utils.visualization import plot_null_histogram, plot_overlay
from crackscan.volume.io import (
    export_slice,
    load_binary_volume,
    load_raw,
    load_volume,
    overlay_image,
    save_binary_volume,
    save_raw,
    write_pgm,
)
from crackscan.volume.volume import AXIS_INDEX, BinaryVolume, ScalarVolume

logger = logging.getLogger(__name__)


@dataclass
class DetectionResult:
    mask: BinaryVolume
    grid: FeatureGrid
    null: EmpiricalNull
    reports: List[TestReport]


@dataclass
class RunRecord:
    """What a command produced, for the manifest"""
    command: str
    outputs: List[str] = field(default_factory=list)


def _alpha_tag(alpha: float) -> str:
    return f"{alpha:g}".replace(".", "p")


class Pipeline:
    """Runs pipeline stages for one configuration"""
    def __init__(self, config: PipelineConfig, share_hessians: bool = False):
        self.config = config
        self.output_dir = Path(config.runtime.output_dir)
        self.timings: Dict[str, float] = {}
        self.cache: Optional[HessianCache] = None
        if share_hessians and config.runtime.cache_size > 0:
            self.cache = HessianCache(max_size=config.runtime.cache_size)
        self.last_percolation: Optional[PercolationResult] = None
        self._input: Optional[Tuple[ScalarVolume, Optional[BinaryVolume]]] = None

    @property
    def threads(self) -> int:
        return self.config.runtime.num_threads

    @contextmanager
    def stage(self, name: str):
        """Accumulate wall-clock time under a stage name"""
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.timings[name] = self.timings.get(name, 0.0) + elapsed
            logger.debug(f"Stage {name}: {elapsed:.3f}s")

    # ------------------------------------------------------------------
    # Inputs
    # ------------------------------------------------------------------

    def describe_input(self) -> str:
        source = self.config.input
        if source.path is not None:
            return source.path
        return f"phantom seed={source.phantom.seed} dims={tuple(source.phantom.dims)}"

    def load_input(self) -> Tuple[ScalarVolume, Optional[BinaryVolume]]:
        """Image and (when known) voxel truth"""
        if self._input is not None:
            return self._input
        source = self.config.input
        truth = None
        with self.stage("load"):
            if source.path is not None:
                if source.dims is not None:
                    image = load_raw(source.path, tuple(source.dims), source.format)
                else:
                    image = load_volume(source.path)
            else:
                image, truth = generate(source.phantom.to_spec())
            if self.config.evaluate.truth_path is not None:
                truth = load_binary_volume(self.config.evaluate.truth_path)
        logger.info(f"Input {self.describe_input()}: dims {image.dims}")
        self._input = (image, truth)
        return self._input

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------

    def _binarize(self, image: ScalarVolume, method: str) -> BinaryVolume:
        settings = self.config.filter
        scales = settings.scale_set()
        if method == "mhe":
            return multiscale_mhe(image, scales, cache=self.cache, num_threads=self.threads)
        if method == "frangi":
            response = multiscale_frangi(
                image, scales, settings.frangi.to_params(), cache=self.cache, num_threads=self.threads
            )
            return three_sigma_binarize(response)
        if method == "sheet":
            response = multiscale_sheet(
                image, scales, settings.sheet.to_params(), cache=self.cache, num_threads=self.threads
            )
            return three_sigma_binarize(response)
        if method == "percolation":
            candidates = self._binarize(image, settings.percolation.candidates)
            result = percolate(image, candidates, settings.percolation.to_params(), num_threads=self.threads)
            self.last_percolation = result
            return result.mask
        raise ConfigError(f"filter.method: unknown method {method!r}")

    def binarize(self, image: ScalarVolume, method: Optional[str] = None) -> BinaryVolume:
        method = method or self.config.filter.method
        logger.info(f"Binarizing with {method} at scales {self.config.filter.scales}")
        with self.stage("binarize"):
            mask = self._binarize(image, method)
        logger.info(f"Binarized: {mask.count()} of {mask.size} voxels marked")
        return mask

    def features(self, mask: BinaryVolume) -> FeatureGrid:
        with self.stage("features"):
            return feature_grid(mask, self.config.features.g, num_threads=self.threads)

    def calibrate(self, image: ScalarVolume) -> EmpiricalNull:
        """Empirical null from a crack-free volume run through the same stages"""
        mask = self.binarize(image)
        grid = self.features(mask)
        detect = self.config.detect
        with self.stage("calibrate"):
            return build_null(
                grid,
                detect.u,
                detect.norm,
                signature=self.config.feature_signature(),
                alternative=detect.alternative,
            )

    def null(self) -> EmpiricalNull:
        self.config.require_null_source()
        detect = self.config.detect
        if detect.null_path is not None:
            null = EmpiricalNull.load(detect.null_path)
        else:
            logger.info(f"Calibrating on a homogeneous phantom (seed {detect.null_phantom.seed})")
            homogeneous, _ = generate(detect.null_phantom.to_spec())
            null = self.calibrate(homogeneous)
        null.check_compatible(
            self.config.features.g,
            detect.u,
            detect.norm,
            self.config.feature_signature(),
            alternative=detect.alternative,
        )
        return null

    def detect(self, image: ScalarVolume, null: Optional[EmpiricalNull] = None) -> DetectionResult:
        null = null or self.null()
        mask = self.binarize(image)
        grid = self.features(mask)
        detect = self.config.detect
        with self.stage("test"):
            reports = scan(
                grid,
                null,
                detect.alphas,
                detect.u,
                norm=detect.norm,
                add_one=detect.add_one_smoothing,
                signature=self.config.feature_signature(),
                alternative=detect.alternative,
            )
        return DetectionResult(mask=mask, grid=grid, null=null, reports=reports)

    def evaluate_detection(self, result: DetectionResult, truth: BinaryVolume) -> List[MetricRow]:
        """Voxel-level row for the binarization, cube-level row per alpha"""
        rows = [evaluate(self.config.filter.method, "voxel", result.mask, truth)]
        cubes = cube_truth(truth, self.config.features.g, self.config.evaluate.cube_truth_min_voxels)
        for report in result.reports:
            rows.append(evaluate(f"detect alpha={report.alpha:g}", "cube", report.cubes, cubes))
        return rows

    def compare(self, image: ScalarVolume, truth: BinaryVolume) -> Tuple[List[MetricRow], Dict[str, float]]:
        """Every binarization filter on the same input, with its runtime"""
        rows = []
        runtimes = {}
        for method in ("mhe", "frangi", "sheet", "percolation"):
            start = time.perf_counter()
            mask = self.binarize(image, method)
            runtimes[method] = time.perf_counter() - start
            self.timings[f"filter {method}"] = runtimes[method]
            rows.append(evaluate(method, "voxel", mask, truth))
        return rows, runtimes

    # ------------------------------------------------------------------
    # Outputs
    # ------------------------------------------------------------------

    def output_path(self, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir / name

    def slice_index(self, dims: Tuple[int, int, int]) -> int:
        runtime = self.config.runtime
        extent = dims["xyz".index(runtime.slice_axis)]
        return extent // 2 if runtime.slice_index is None else runtime.slice_index

    def write_mask(self, mask: BinaryVolume, name: str, record: RunRecord, image: Optional[ScalarVolume] = None):
        path = save_binary_volume(mask, self.output_path(f"{name}.raw"))
        record.outputs.append(str(path))
        axis = self.config.runtime.slice_axis
        index = self.slice_index(mask.dims)
        record.outputs.append(str(export_slice(mask, axis, index, self.output_path(f"{name}_{axis}{index}.pgm"))))
        if image is not None:
            overlay = overlay_image(image, mask, axis, index)
            record.outputs.append(str(write_pgm(overlay, self.output_path(f"{name}_overlay_{axis}{index}.pgm"))))

    def write_eigen_slices(self, image: ScalarVolume, record: RunRecord):
        """lambda1..lambda3 at the smallest scale, each slice stretched to 0..255"""
        sigma = min(self.config.filter.scales)
        eigen = hessian_eigenvalues(gaussian_hessian(image, sigma), num_threads=self.threads)
        axis = self.config.runtime.slice_axis
        index = self.slice_index(image.dims)
        for name, values in (("lambda1", eigen.l1), ("lambda2", eigen.l2), ("lambda3", eigen.l3)):
            plane = np.take(values, index, axis=AXIS_INDEX[axis])
            low, high = float(plane.min()), float(plane.max())
            scaled = (plane - low) / (high - low) if high > low else np.zeros_like(plane)
            pixels = np.floor(scaled * 255.0 + 0.5).astype(np.uint8)
            path = write_pgm(pixels, self.output_path(f"{name}_sigma{sigma:g}_{axis}{index}.pgm"))
            record.outputs.append(str(path))

    def write_null(self, null: EmpiricalNull, record: RunRecord):
        record.outputs.append(str(null.save(self.output_path("null.csv"))))
        bins = self.config.detect.histogram_bins
        record.outputs.append(str(null.save_histogram(self.output_path("null_histogram.csv"), bins=bins)))
        if self.config.runtime.figures:
            figure = plot_null_histogram(null, self.output_path("null_histogram.png"), bins=bins)
            if figure is not None:
                record.outputs.append(str(figure))

    def write_detection(self, result: DetectionResult, image: ScalarVolume, record: RunRecord):
        axis = self.config.runtime.slice_axis
        index = self.slice_index(image.dims)
        layout = partition(result.mask, self.config.features.g)
        for report in result.reports:
            tag = _alpha_tag(report.alpha)
            record.outputs.append(str(report.to_csv(self.output_path(f"report_alpha{tag}.csv"))))
            cubes_path = save_binary_volume(report.cubes, self.output_path(f"cubes_alpha{tag}.raw"))
            record.outputs.append(str(cubes_path))
            painted = BinaryVolume(layout.paint(report.cubes.data))
            overlay = overlay_image(image, painted, axis, index)
            overlay_path = write_pgm(overlay, self.output_path(f"overlay_alpha{tag}_{axis}{index}.pgm"))
            record.outputs.append(str(overlay_path))
            if self.config.runtime.figures:
                figure = plot_overlay(image, painted, axis, index, self.output_path(f"overlay_alpha{tag}.png"))
                if figure is not None:
                    record.outputs.append(str(figure))
        if self.config.runtime.figures and result.reports:
            # statistics do not depend on alpha
            figure = plot_null_histogram(
                result.null,
                self.output_path("tested_histogram.png"),
                bins=self.config.detect.histogram_bins,
                observed=result.reports[0].statistics,
            )
            if figure is not None:
                record.outputs.append(str(figure))

    def save_metrics(self, rows: List[MetricRow], name: str, record: RunRecord):
        record.outputs.append(str(write_metrics(rows, self.output_path(name))))

    def write_volume(self, image: ScalarVolume, name: str, record: RunRecord):
        record.outputs.append(str(save_raw(image, self.output_path(f"{name}.raw"), "f32")))

    def manifest(self, record: RunRecord) -> dict:
        return {
            "command": record.command,
            "created": datetime.now(timezone.utc).isoformat(),
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "feature_signature": self.config.feature_signature(),
            "timings": {stage: round(seconds, 6) for stage, seconds in self.timings.items()},
            "versions": {
                "crackscan": crackscan.__version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "outputs": record.outputs,
        }

    def write_manifest(self, record: RunRecord) -> Path:
        path = self.output_path(f"manifest-{record.command}.json")
        with open(path, "w") as f:
            json.dump(self.manifest(record), f, indent=2)
        return path
