"""
Raw volume I/O and slice export

A raw volume is a headerless little-endian sample buffer (x fastest) with a
sidecar JSON descriptor ``<file>.json``: {"dims": [nx, ny, nz], "format": ...,
"spacing": [...]}. Slices are written as binary PGM through Pillow.
"""
import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from crackscan.errors import InputError, NumericError, VolumeIOError
from crackscan.volume.volume import AXIS_INDEX, BinaryVolume, Dims, ScalarVolume

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SAMPLE_TYPES = {
    "u8": np.dtype("u1"),
    "u16": np.dtype("<u2"),
    "f32": np.dtype("<f4"),
}

SAMPLE_MAX = {"u8": 255.0, "u16": 65535.0}


def _sample_type(sample_format: str) -> np.dtype:
    try:
        return SAMPLE_TYPES[sample_format]
    except KeyError:
        raise InputError(
            f"unknown sample format {sample_format!r}, expected one of {sorted(SAMPLE_TYPES)}"
        ) from None


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_raw(path: PathLike, dims: Dims, sample_format: str) -> ScalarVolume:
    """Read a headerless raw file and map its samples to [0, 1]"""
    path = Path(path)
    dtype = _sample_type(sample_format)
    nx, ny, nz = (int(d) for d in dims)
    expected = nx * ny * nz * dtype.itemsize
    try:
        size = path.stat().st_size
    except OSError as e:
        raise VolumeIOError(f"cannot read {path}: {e}") from e
    if size != expected:
        raise InputError(
            f"{path}: file size {size} does not match dims {tuple(dims)} "
            f"with {sample_format} samples ({expected} bytes)"
        )
    try:
        samples = np.fromfile(path, dtype=dtype)
    except OSError as e:
        raise VolumeIOError(f"cannot read {path}: {e}") from e

    if sample_format == "f32":
        if not np.isfinite(samples).all():
            raise NumericError(f"{path}: non-finite samples in f32 volume")
        values = np.clip(samples, 0.0, 1.0).astype(np.float32)
    else:
        values = (samples.astype(np.float64) / SAMPLE_MAX[sample_format]).astype(np.float32)

    logger.debug(f"Loaded {path} ({nx}x{ny}x{nz}, {sample_format})")
    return ScalarVolume.from_flat(values, (nx, ny, nz))


def save_raw(
    volume: Union[ScalarVolume, BinaryVolume],
    path: PathLike,
    sample_format: str = "f32",
    spacing: Optional[Sequence[float]] = None,
) -> Path:
    """Write a volume as raw samples plus its sidecar descriptor"""
    path = Path(path)
    dtype = _sample_type(sample_format)
    data = volume.data
    if isinstance(volume, BinaryVolume):
        samples = data.astype(dtype)
    elif sample_format == "f32":
        samples = data.astype(dtype)
    else:
        scaled = np.floor(np.clip(data.astype(np.float64), 0.0, 1.0) * SAMPLE_MAX[sample_format] + 0.5)
        samples = scaled.astype(dtype)

    descriptor = {
        "dims": list(volume.dims),
        "format": sample_format,
        "kind": "binary" if isinstance(volume, BinaryVolume) else "scalar",
    }
    if spacing is not None:
        descriptor["spacing"] = [float(s) for s in spacing]

    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        samples.tofile(path)
        with open(sidecar_path(path), "w") as f:
            json.dump(descriptor, f, indent=2)
    except OSError as e:
        raise VolumeIOError(f"cannot write {path}: {e}") from e
    return path


def read_descriptor(path: PathLike) -> dict:
    meta_path = sidecar_path(path)
    try:
        with open(meta_path, "r") as f:
            descriptor = json.load(f)
    except OSError as e:
        raise VolumeIOError(f"cannot read descriptor {meta_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"{meta_path}: invalid JSON ({e})") from e
    if "dims" not in descriptor or "format" not in descriptor:
        raise InputError(f"{meta_path}: descriptor needs 'dims' and 'format'")
    return descriptor


def load_volume(path: PathLike) -> ScalarVolume:
    """Read a raw volume using its sidecar descriptor"""
    descriptor = read_descriptor(path)
    return load_raw(path, tuple(descriptor["dims"]), descriptor["format"])


def save_binary_volume(mask: BinaryVolume, path: PathLike) -> Path:
    return save_raw(mask, path, sample_format="u8")


def load_binary_volume(path: PathLike) -> BinaryVolume:
    descriptor = read_descriptor(path)
    if descriptor["format"] != "u8":
        raise InputError(f"{path}: binary volumes are stored as u8, got {descriptor['format']}")
    dims = tuple(descriptor["dims"])
    nx, ny, nz = dims
    path = Path(path)
    try:
        samples = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise VolumeIOError(f"cannot read {path}: {e}") from e
    if samples.size != nx * ny * nz:
        raise InputError(f"{path}: {samples.size} samples do not match dims {dims}")
    return BinaryVolume.from_flat(samples, dims)


def slice_image(volume: Union[ScalarVolume, BinaryVolume], axis: str, index: int) -> np.ndarray:
    """8-bit image of one axis-aligned slice; rows/columns follow the remaining axes in z, y, x order"""
    if axis not in AXIS_INDEX:
        raise InputError(f"axis must be one of x, y, z, got {axis!r}")
    numpy_axis = AXIS_INDEX[axis]
    extent = volume.data.shape[numpy_axis]
    if not 0 <= index < extent:
        raise InputError(f"slice index {index} out of range for axis {axis} of size {extent}")
    plane = np.take(volume.data, index, axis=numpy_axis)
    if isinstance(volume, BinaryVolume):
        return (plane.astype(np.uint8) * 255).astype(np.uint8)
    values = np.clip(plane.astype(np.float64), 0.0, 1.0)
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def write_pgm(image: np.ndarray, path: PathLike) -> Path:
    """Write a 2D uint8 array as binary PGM"""
    path = Path(path)
    pixels = np.ascontiguousarray(image, dtype=np.uint8)
    if pixels.ndim != 2:
        raise InputError(f"PGM export needs a 2D image, got shape {pixels.shape}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path, format="PPM")
    except OSError as e:
        raise VolumeIOError(f"cannot write {path}: {e}") from e
    return path


def read_pgm(path: PathLike) -> np.ndarray:
    """8-bit grayscale image as a (height, width) uint8 array"""
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise InputError(f"{path}: expected an 8-bit grayscale PGM, got mode {img.mode}")
            return np.asarray(img, dtype=np.uint8).copy()
    except UnidentifiedImageError:
        raise InputError(f"{path}: not a binary PGM file") from None
    except OSError as e:
        raise VolumeIOError(f"cannot read {path}: {e}") from e


def export_slice(
    volume: Union[ScalarVolume, BinaryVolume], axis: str, index: int, path: PathLike
) -> Path:
    """Export one slice as an 8-bit PGM; binary volumes map 1 to 255"""
    return write_pgm(slice_image(volume, axis, index), path)


def overlay_image(
    volume: ScalarVolume, mask: BinaryVolume, axis: str, index: int, strength: float = 0.5
) -> np.ndarray:
    """Gray slice with masked voxels brightened towards white"""
    base = slice_image(volume, axis, index).astype(np.float64)
    flags = slice_image(mask, axis, index) > 0
    base[flags] = base[flags] + strength * (255.0 - base[flags])
    return np.floor(base + 0.5).astype(np.uint8)
