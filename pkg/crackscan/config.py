"""
Configuration for crackscan

A run is described by one JSON tree mirroring the models below. pydantic
rejects unknown keys and wrongly typed values; the error names the dotted path
of the field. Cross-field rules are checked afterwards by PipelineConfig.check.
"""
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, StrictBool, StrictInt, StrictStr, ValidationError

from crackscan.errors import ConfigError
from crackscan.filters.hessian import FrangiParams, ScaleSet, SheetParams
from crackscan.filters.percolation import PercolationParams
from crackscan.phantom.generator import CrackSpec, PhantomSpec, PoreSpec
from crackscan.stats.multitest import ALTERNATIVES, check_alpha, parse_norm

FILTER_METHODS = ("mhe", "frangi", "sheet", "percolation")
SAMPLE_FORMATS = ("u8", "u16", "f32")


class ConfigSection(BaseModel):
    """Base for every section: unknown keys are errors"""
    model_config = ConfigDict(extra="forbid")


class CrackConfig(ConfigSection):
    normal: List[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0])
    offset: Optional[float] = None
    width: float = 5.0
    mean: float = 0.25


class PoreConfig(ConfigSection):
    count: StrictInt = 0
    radius_min: float = 2.0
    radius_max: float = 4.0
    mean: float = 0.2


class PhantomConfig(ConfigSection):
    """Synthetic volume; crack=None gives a homogeneous calibration volume"""
    dims: List[StrictInt] = Field(default_factory=lambda: [128, 128, 128])
    seed: StrictInt = 0
    background_mean: float = 0.7
    background_sd: float = 0.05
    crack: Optional[CrackConfig] = Field(default_factory=CrackConfig)
    pores: Optional[PoreConfig] = None

    def to_spec(self) -> PhantomSpec:
        crack = None
        if self.crack is not None:
            crack = CrackSpec(
                normal=tuple(self.crack.normal),
                offset=self.crack.offset,
                width=self.crack.width,
                mean=self.crack.mean,
            )
        pores = None
        if self.pores is not None:
            pores = PoreSpec(**self.pores.model_dump())
        return PhantomSpec(
            dims=tuple(self.dims),
            seed=self.seed,
            background_mean=self.background_mean,
            background_sd=self.background_sd,
            crack=crack,
            pores=pores,
        )


class InputConfig(ConfigSection):
    """Either a raw volume (path, optionally dims+format) or a phantom"""
    path: Optional[StrictStr] = None
    dims: Optional[List[StrictInt]] = None
    format: Optional[StrictStr] = None
    phantom: Optional[PhantomConfig] = Field(default_factory=PhantomConfig)


class FrangiConfig(ConfigSection):
    a: float = 0.3
    b: float = 0.3
    c: Optional[float] = None  # None: half the largest Hessian norm per scale

    def to_params(self) -> FrangiParams:
        return FrangiParams(a=self.a, b=self.b, c=self.c)


class SheetConfig(ConfigSection):
    delta: float = 1.0
    rho: float = 1.0

    def to_params(self) -> SheetParams:
        return SheetParams(delta=self.delta, rho=self.rho)


class PercolationConfig(ConfigSection):
    epsilon: float = 0.01
    M: StrictInt = 3
    r: float = 0.6
    tau_max: StrictInt = 4
    connectivity: StrictInt = 26
    candidates: StrictStr = "mhe"

    def to_params(self) -> PercolationParams:
        return PercolationParams(
            epsilon=self.epsilon, M=self.M, r=self.r, tau_max=self.tau_max, connectivity=self.connectivity
        )


class FilterConfig(ConfigSection):
    method: StrictStr = "mhe"
    scales: List[float] = Field(default_factory=lambda: [1.0, 3.0, 5.0])
    frangi: FrangiConfig = Field(default_factory=FrangiConfig)
    sheet: SheetConfig = Field(default_factory=SheetConfig)
    percolation: PercolationConfig = Field(default_factory=PercolationConfig)

    def scale_set(self) -> ScaleSet:
        return ScaleSet.of(self.scales)


class FeatureConfig(ConfigSection):
    g: StrictInt = 16


def _null_phantom() -> PhantomConfig:
    return PhantomConfig(seed=1, crack=None)


class DetectConfig(ConfigSection):
    u: StrictInt = 3
    norm: StrictStr = "inf"
    alternative: StrictStr = "greater"
    alphas: List[float] = Field(default_factory=lambda: [0.4, 0.5])
    add_one_smoothing: StrictBool = True
    null_path: Optional[StrictStr] = None
    null_phantom: Optional[PhantomConfig] = Field(default_factory=_null_phantom)
    histogram_bins: StrictInt = 30


class EvaluateConfig(ConfigSection):
    truth_path: Optional[StrictStr] = None
    cube_truth_min_voxels: StrictInt = 1


class RuntimeConfig(ConfigSection):
    num_threads: StrictInt = min(4, os.cpu_count() or 1)
    cache_size: StrictInt = 3
    output_dir: StrictStr = "crackscan-out"
    slice_axis: StrictStr = "z"
    slice_index: Optional[StrictInt] = None  # None: middle slice
    figures: StrictBool = False


def _location(loc: Sequence[Union[str, int]]) -> str:
    """('filter', 'scales', 1) -> 'filter.scales[1]'"""
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path = f"{path}.{part}" if path else str(part)
    return path or "config"


def _config_error(error: ValidationError) -> ConfigError:
    first = error.errors()[0]
    message = "unknown configuration key" if first["type"] == "extra_forbidden" else first["msg"]
    return ConfigError(f"{_location(first['loc'])}: {message}")


class PipelineConfig(ConfigSection):
    """Complete run configuration"""
    input: InputConfig = Field(default_factory=InputConfig)
    filter: FilterConfig = Field(default_factory=FilterConfig)
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    detect: DetectConfig = Field(default_factory=DetectConfig)
    evaluate: EvaluateConfig = Field(default_factory=EvaluateConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)

    @classmethod
    def from_dict(cls, data: Any) -> "PipelineConfig":
        try:
            config = cls.model_validate(data)
        except ValidationError as e:
            raise _config_error(e) from None
        config.check()
        return config

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump()

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def feature_signature(self) -> str:
        """Hash of the settings that shape the feature field"""
        shaping = {
            "filter": self.filter.model_dump(),
            "g": self.features.g,
            "standardize": "sd-ddof1",
        }
        canonical = json.dumps(shaping, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def check(self) -> None:
        """Raise ConfigError (or ParameterError) on the first inconsistent field"""
        source = self.input
        if (source.path is None) == (source.phantom is None):
            raise ConfigError("input: exactly one of input.path and input.phantom must be set")
        if source.path is not None and source.dims is not None:
            if len(source.dims) != 3 or any(d <= 0 for d in source.dims):
                raise ConfigError(f"input.dims: three positive voxel counts required, got {source.dims}")
            if source.format not in SAMPLE_FORMATS:
                raise ConfigError(f"input.format: must be one of {SAMPLE_FORMATS}, got {source.format!r}")
        if source.phantom is not None:
            source.phantom.to_spec().validate()

        if self.filter.method not in FILTER_METHODS:
            raise ConfigError(f"filter.method: must be one of {FILTER_METHODS}, got {self.filter.method!r}")
        self.filter.scale_set()
        self.filter.frangi.to_params()
        self.filter.sheet.to_params()
        self.filter.percolation.to_params()
        if self.filter.percolation.candidates not in ("mhe", "frangi", "sheet"):
            raise ConfigError(
                f"filter.percolation.candidates: must be mhe, frangi or sheet, "
                f"got {self.filter.percolation.candidates!r}"
            )

        if self.features.g < 2:
            raise ConfigError(f"features.g: must be >= 2, got {self.features.g}")

        detect = self.detect
        if not 1 <= detect.u < self.features.g:
            raise ConfigError(f"detect.u: must satisfy 1 <= u < g={self.features.g}, got {detect.u}")
        parse_norm(detect.norm)
        if detect.alternative not in ALTERNATIVES:
            raise ConfigError(f"detect.alternative: must be one of {ALTERNATIVES}, got {detect.alternative!r}")
        if not detect.alphas:
            raise ConfigError("detect.alphas: at least one level is required")
        for index, alpha in enumerate(detect.alphas):
            check_alpha(alpha, f"detect.alphas[{index}]")
        if detect.null_path is not None and detect.null_phantom is not None:
            raise ConfigError("detect: set at most one of detect.null_path and detect.null_phantom")
        if detect.null_phantom is not None:
            if detect.null_phantom.crack is not None:
                raise ConfigError("detect.null_phantom.crack: the calibration phantom must be crack-free")
            detect.null_phantom.to_spec().validate()
        if detect.histogram_bins < 1:
            raise ConfigError(f"detect.histogram_bins: must be >= 1, got {detect.histogram_bins}")

        if self.evaluate.cube_truth_min_voxels < 1:
            raise ConfigError(
                f"evaluate.cube_truth_min_voxels: must be >= 1, got {self.evaluate.cube_truth_min_voxels}"
            )

        runtime = self.runtime
        if runtime.num_threads < 1:
            raise ConfigError(f"runtime.num_threads: must be >= 1, got {runtime.num_threads}")
        if runtime.cache_size < 0:
            raise ConfigError(f"runtime.cache_size: must be >= 0, got {runtime.cache_size}")
        if runtime.slice_axis not in ("x", "y", "z"):
            raise ConfigError(f"runtime.slice_axis: must be x, y or z, got {runtime.slice_axis!r}")

    def require_null_source(self) -> None:
        if self.detect.null_path is None and self.detect.null_phantom is None:
            raise ConfigError("detect: a null source (detect.null_path or detect.null_phantom) is required")


def _merge(base: Dict[str, Any], patch: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_override(text: str) -> Tuple[str, Any]:
    """'detect.alphas=[0.05]' -> ('detect.alphas', [0.05]); values parse as JSON, else stay strings"""
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(config: PipelineConfig, overrides: Dict[str, Any]) -> PipelineConfig:
    """New config with dotted-key overrides applied, validated again"""
    patch: Dict[str, Any] = {}
    for key, value in overrides.items():
        nested: Any = value
        for part in reversed(key.split(".")):
            nested = {part: nested}
        patch = _merge(patch, nested)
    return PipelineConfig.from_dict(_merge(config.to_dict(), patch))


def load_config(path: Union[str, Path, None]) -> PipelineConfig:
    """Read a JSON config; None gives the defaults"""
    if path is None:
        return PipelineConfig.from_dict({})
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: {path} is not valid JSON ({e})") from e
    return PipelineConfig.from_dict(data)
