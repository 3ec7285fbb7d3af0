"""
Command-line interface for crackscan
"""
import functools
import logging
import sys
from typing import Any, Dict, Optional, Sequence

import click
from rich.logging import RichHandler

from crackscan import __version__
from crackscan.config import PipelineConfig, apply_overrides, load_config, parse_override
from crackscan.errors import ConfigError, CrackscanError, InputError
from crackscan.evaluation.metrics import cube_truth, evaluate
from crackscan.geometry.features import CHANNEL_NAMES, export_channel_slice
from crackscan.phantom.generator import generate
from crackscan.pipeline import Pipeline, RunRecord
from crackscan.stats.multitest import EmpiricalNull
from crackscan.ui.terminal import ReportConsole, console
from crackscan.volume.io import load_binary_volume

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format="%(message)s",
    datefmt="[%X]",
    handlers=[RichHandler(rich_tracebacks=True, console=console)]
)
logger = logging.getLogger("crackscan")


def _float_list(ctx, param, value: Optional[str]) -> Optional[list]:
    if value is None:
        return None
    try:
        return [float(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}")


def pipeline_options(func):
    """Options shared by every pipeline command"""
    options = [
        click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="JSON configuration file"),
        click.option("--output", "-o", "output_dir", type=click.Path(file_okay=False),
                     help="Output directory (runtime.output_dir)"),
        click.option("--threads", "-n", type=int, help="Number of threads to use"),
        click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="Override a config field, e.g. --set detect.u=2"),
        click.option("--figures/--no-figures", default=None, help="Also write matplotlib PNG figures"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def input_options(func):
    options = [
        click.option("--input", "-i", "input_path", type=click.Path(exists=True, dir_okay=False),
                     help="Raw volume with a JSON sidecar; the configured phantom is used otherwise"),
        click.option("--truth", type=click.Path(exists=True, dir_okay=False),
                     help="Voxel ground truth (u8 raw with sidecar)"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def filter_options(func):
    options = [
        click.option("--filter", "-f", "method", type=click.Choice(["mhe", "frangi", "sheet", "percolation"]),
                     help="Binarization filter"),
        click.option("--scales", callback=_float_list, help="Comma-separated Gaussian scales, e.g. 1,3,5"),
        click.option("--sigma", type=float, help="Single Gaussian scale (shorthand for --scales)"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def build_config(
    config_path: Optional[str],
    overrides: Sequence[str],
    flags: Dict[str, Any],
) -> PipelineConfig:
    """Config file, then --set overrides, then dedicated flags; validated after each step"""
    config = load_config(config_path)
    patch = dict(parse_override(text) for text in overrides)
    patch.update(flags)
    if patch:
        config = apply_overrides(config, patch)
    return config


def put(flags: Dict[str, Any], key: str, value: Any) -> None:
    """Set a dotted override only when the flag was given"""
    if value is not None:
        flags[key] = value


def common_flags(
    output_dir: Optional[str] = None,
    threads: Optional[int] = None,
    figures: Optional[bool] = None,
    input_path: Optional[str] = None,
    truth: Optional[str] = None,
    method: Optional[str] = None,
    scales: Optional[list] = None,
    sigma: Optional[float] = None,
) -> Dict[str, Any]:
    flags: Dict[str, Any] = {}
    put(flags, "runtime.output_dir", output_dir)
    put(flags, "runtime.num_threads", threads)
    put(flags, "runtime.figures", figures)
    put(flags, "evaluate.truth_path", truth)
    put(flags, "filter.method", method)
    put(flags, "filter.scales", [sigma] if sigma is not None else scales)
    if input_path is not None:
        flags["input.path"] = input_path
        flags["input.phantom"] = None
    return flags


def handle_errors(func):
    """Map crackscan errors to their exit codes"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except CrackscanError as e:
            ReportConsole().display_error(str(e))
            sys.exit(e.exit_code)
    return wrapper


# Below this many windows the smallest attainable p-value is coarse
MIN_NULL_WINDOWS = 100


def warn_coarse_null(null: EmpiricalNull, terminal: ReportConsole):
    if null.size < MIN_NULL_WINDOWS:
        terminal.display_warning(
            f"Empirical null holds only {null.size} windows; p-values cannot go below 1/{null.size + 1}"
        )


def finish(pipeline: Pipeline, record: RunRecord, terminal: ReportConsole):
    manifest = pipeline.write_manifest(record)
    terminal.display_stage_timings(pipeline.timings)
    terminal.display_success(f"Wrote {len(record.outputs)} outputs and {manifest}")


@click.group()
@click.version_option(version=__version__, prog_name="crackscan")
@click.option("--verbose", "-v", is_flag=True, help="Log per-scale and per-component detail")
@click.option("--quiet", "-q", is_flag=True, help="Only log warnings and errors")
@click.option("--debug", is_flag=True, help="Print tracebacks for unexpected errors")
def cli(verbose: bool, quiet: bool, debug: bool):
    """crackscan - crack pre-localization in 3D CT volumes of concrete"""
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif quiet:
        logging.getLogger().setLevel(logging.WARNING)


@cli.command()
@pipeline_options
@click.option("--seed", type=int, help="Phantom random seed")
@click.option("--homogeneous", is_flag=True, help="Leave out the crack (calibration volume)")
@handle_errors
def phantom(config_path, output_dir, threads, overrides, figures, seed, homogeneous):
    """Generate a synthetic crack phantom with its voxel truth"""
    flags = common_flags(output_dir, threads, figures)
    put(flags, "input.phantom.seed", seed)
    if homogeneous:
        flags["input.phantom.crack"] = None
    config = build_config(config_path, overrides, flags)
    if config.input.phantom is None:
        raise ConfigError("input.phantom: the phantom command needs a phantom input")

    terminal = ReportConsole()
    pipeline = Pipeline(config)
    terminal.display_header("phantom", config.config_hash(), pipeline.describe_input())
    record = RunRecord("phantom")
    image, truth = pipeline.load_input()
    pipeline.write_volume(image, "phantom", record)
    pipeline.write_mask(truth, "phantom_truth", record, image=image)
    terminal.display_info(f"{truth.count()} crack voxels of {truth.size}")
    finish(pipeline, record, terminal)


@cli.command()
@pipeline_options
@input_options
@filter_options
@click.option("--eigen-slices", is_flag=True, help="Also export eigenvalue slices at the smallest scale")
@handle_errors
def binarize(config_path, output_dir, threads, overrides, figures, input_path, truth, method, scales, sigma,
             eigen_slices):
    """Segment crack candidates with a Hessian-based filter"""
    config = build_config(
        config_path, overrides, common_flags(output_dir, threads, figures, input_path, truth, method, scales, sigma)
    )
    terminal = ReportConsole()
    pipeline = Pipeline(config)
    terminal.display_header("binarize", config.config_hash(), pipeline.describe_input())
    record = RunRecord("binarize")
    image, _ = pipeline.load_input()
    mask = pipeline.binarize(image)
    pipeline.write_mask(mask, f"mask_{config.filter.method}", record, image=image)
    if pipeline.last_percolation is not None:
        result = pipeline.last_percolation
        pipeline.write_mask(result.material, "material", record)
        terminal.display_info(f"{len(result.accepted)} of {len(result.clusters)} percolation clusters accepted")
    if eigen_slices:
        pipeline.write_eigen_slices(image, record)
    terminal.display_info(f"{mask.count()} of {mask.size} voxels marked")
    finish(pipeline, record, terminal)


@cli.command()
@pipeline_options
@input_options
@filter_options
@click.option("-g", "g", type=int, help="Cubes per axis (features.g)")
@handle_errors
def features(config_path, output_dir, threads, overrides, figures, input_path, truth, method, scales, sigma, g):
    """Binarize, then compute the standardized per-cube feature field"""
    flags = common_flags(output_dir, threads, figures, input_path, truth, method, scales, sigma)
    put(flags, "features.g", g)
    config = build_config(config_path, overrides, flags)
    terminal = ReportConsole()
    pipeline = Pipeline(config)
    terminal.display_header("features", config.config_hash(), pipeline.describe_input())
    record = RunRecord("features")
    image, _ = pipeline.load_input()
    grid = pipeline.features(pipeline.binarize(image))
    record.outputs.append(str(grid.to_csv(pipeline.output_path("features.csv"))))
    axis = config.runtime.slice_axis
    for channel in CHANNEL_NAMES:
        path = export_channel_slice(grid, channel, axis, grid.g // 2, pipeline.output_path(f"{channel}_{axis}.pgm"))
        record.outputs.append(str(path))
    finish(pipeline, record, terminal)


@cli.command()
@pipeline_options
@input_options
@filter_options
@click.option("-g", "g", type=int, help="Cubes per axis (features.g)")
@click.option("-u", "u", type=int, help="Scan window edge in cubes (detect.u)")
@handle_errors
def calibrate(config_path, output_dir, threads, overrides, figures, input_path, truth, method, scales, sigma, g, u):
    """Build the empirical null from a crack-free volume

    The volume is --input when given, otherwise the configured calibration phantom
    (detect.null_phantom).
    """
    flags = common_flags(output_dir, threads, figures, input_path, truth, method, scales, sigma)
    put(flags, "features.g", g)
    put(flags, "detect.u", u)
    config = build_config(config_path, overrides, flags)
    terminal = ReportConsole()
    pipeline = Pipeline(config)
    record = RunRecord("calibrate")
    if config.input.path is not None:
        terminal.display_header("calibrate", config.config_hash(), pipeline.describe_input())
        image, _ = pipeline.load_input()
    else:
        source = config.detect.null_phantom
        if source is None:
            raise ConfigError("detect.null_phantom: calibrate needs --input or a calibration phantom")
        terminal.display_header("calibrate", config.config_hash(), f"phantom seed={source.seed} (homogeneous)")
        with pipeline.stage("load"):
            image, _ = generate(source.to_spec())
    null = pipeline.calibrate(image)
    pipeline.write_null(null, record)
    terminal.display_null(null)
    warn_coarse_null(null, terminal)
    finish(pipeline, record, terminal)


@cli.command()
@pipeline_options
@input_options
@filter_options
@click.option("-g", "g", type=int, help="Cubes per axis (features.g)")
@click.option("-u", "u", type=int, help="Scan window edge in cubes (detect.u)")
@click.option("--alpha", "-a", "alphas", type=float, multiple=True, help="FDR level; repeat for several")
@click.option("--null", "null_path", type=click.Path(exists=True, dir_okay=False),
              help="Empirical null CSV written by calibrate")
@handle_errors
def detect(config_path, output_dir, threads, overrides, figures, input_path, truth, method, scales, sigma, g, u,
           alphas, null_path):
    """Scan-test the feature field and flag crack cubes"""
    flags = common_flags(output_dir, threads, figures, input_path, truth, method, scales, sigma)
    put(flags, "features.g", g)
    put(flags, "detect.u", u)
    put(flags, "detect.alphas", list(alphas) or None)
    if null_path is not None:
        flags["detect.null_path"] = null_path
        flags["detect.null_phantom"] = None
    config = build_config(config_path, overrides, flags)
    terminal = ReportConsole()
    pipeline = Pipeline(config)
    terminal.display_header("detect", config.config_hash(), pipeline.describe_input())
    record = RunRecord("detect")
    image, _ = pipeline.load_input()
    result = pipeline.detect(image)
    if config.detect.null_path is None:
        pipeline.write_null(result.null, record)
    warn_coarse_null(result.null, terminal)
    pipeline.write_mask(result.mask, f"mask_{config.filter.method}", record)
    pipeline.write_detection(result, image, record)
    terminal.display_reports(result.reports)
    finish(pipeline, record, terminal)


def _load_mask(path: Optional[str]):
    return None if path is None else load_binary_volume(path)


@cli.command("evaluate")
@pipeline_options
@input_options
@filter_options
@click.option("-g", "g", type=int, help="Cubes per axis (features.g)")
@click.option("--alpha", "-a", "alphas", type=float, multiple=True, help="FDR level; repeat for several")
@click.option("--pred", type=click.Path(exists=True, dir_okay=False), help="Predicted voxel mask")
@click.option("--cubes", type=click.Path(exists=True, dir_okay=False), help="Predicted cube mask (g^3)")
@click.option("--stage", "stage_name", default="prediction", help="Row label for --pred/--cubes")
@handle_errors
def evaluate_cmd(config_path, output_dir, threads, overrides, figures, input_path, truth, method, scales, sigma, g,
                 alphas, pred, cubes, stage_name):
    """Precision, recall and F1 against ground truth

    With --pred and/or --cubes the given masks are scored against --truth. Without
    them the full pipeline runs on the input and every stage is scored.
    """
    flags = common_flags(output_dir, threads, figures, input_path, truth, method, scales, sigma)
    put(flags, "features.g", g)
    put(flags, "detect.alphas", list(alphas) or None)
    config = build_config(config_path, overrides, flags)
    terminal = ReportConsole()
    pipeline = Pipeline(config)
    record = RunRecord("evaluate")

    if pred is not None or cubes is not None:
        if config.evaluate.truth_path is None:
            raise ConfigError("evaluate.truth_path: --truth is required with --pred or --cubes")
        terminal.display_header("evaluate", config.config_hash(), pred or cubes)
        truth_mask = load_binary_volume(config.evaluate.truth_path)
        rows = []
        with pipeline.stage("evaluate"):
            predicted = _load_mask(pred)
            if predicted is not None:
                rows.append(evaluate(stage_name, "voxel", predicted, truth_mask))
            flagged = _load_mask(cubes)
            if flagged is not None:
                side = flagged.dims[0]
                if len(set(flagged.dims)) != 1:
                    raise InputError(f"{cubes}: a cube mask must be g x g x g, got {flagged.dims}")
                truth_cubes = cube_truth(truth_mask, side, config.evaluate.cube_truth_min_voxels)
                rows.append(evaluate(stage_name, "cube", flagged, truth_cubes))
    else:
        terminal.display_header("evaluate", config.config_hash(), pipeline.describe_input())
        image, truth_mask = pipeline.load_input()
        if truth_mask is None:
            raise ConfigError("evaluate.truth_path: ground truth is required for a raw input")
        result = pipeline.detect(image)
        with pipeline.stage("evaluate"):
            rows = pipeline.evaluate_detection(result, truth_mask)
        terminal.display_reports(result.reports)

    pipeline.save_metrics(rows, "metrics.csv", record)
    terminal.display_metrics(rows)
    finish(pipeline, record, terminal)


@cli.command()
@pipeline_options
@input_options
@click.option("--scales", callback=_float_list, help="Comma-separated Gaussian scales, e.g. 1,3,5")
@handle_errors
def compare(config_path, output_dir, threads, overrides, figures, input_path, truth, scales):
    """Run every binarization filter on one input and score each against truth"""
    config = build_config(
        config_path, overrides, common_flags(output_dir, threads, figures, input_path, truth, scales=scales)
    )
    terminal = ReportConsole()
    pipeline = Pipeline(config, share_hessians=True)
    terminal.display_header("compare", config.config_hash(), pipeline.describe_input())
    record = RunRecord("compare")
    image, truth_mask = pipeline.load_input()
    if truth_mask is None:
        raise ConfigError("evaluate.truth_path: ground truth is required for a raw input")
    rows, runtimes = pipeline.compare(image, truth_mask)
    pipeline.save_metrics(rows, "compare.csv", record)
    terminal.display_metrics(rows, runtimes=runtimes)
    finish(pipeline, record, terminal)


def main():
    """Main entry point for the CLI"""
    try:
        cli(standalone_mode=False)
    except click.exceptions.Abort:
        console.print("\n[yellow]Interrupted[/yellow]")
        sys.exit(130)
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted[/yellow]")
        sys.exit(130)
    except click.ClickException as e:
        e.show()
        sys.exit(e.exit_code)
    except CrackscanError as e:
        ReportConsole().display_error(str(e))
        sys.exit(e.exit_code)
    except Exception as e:
        console.print(f"\n[red]crackscan failed:[/red] {str(e)}")
        if "--debug" in sys.argv:
            console.print_exception()
        sys.exit(1)


if __name__ == "__main__":
    main()
