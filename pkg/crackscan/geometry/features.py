"""
Per-cube geometry of a binary segmentation

The mask is cut into g^3 congruent cubes. Each cube q yields the raw triple

    a_q = S_q / V_q      surface density (0 for an empty cube)
    b_q = V_q            foreground voxel count
    c_q = sd_r(S_q,r)    spread of the projection areas over 13 lattice directions

and every channel is divided by its grid-wide sample sd. Cracks are thin and
flat, so their projection areas vary strongly with direction; pores do not.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from crackscan.errors import InputError, ParameterError
from crackscan.utils.threading import parallel_process
from crackscan.volume.io import write_pgm
from crackscan.volume.volume import BinaryVolume, Dims

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Direction = Tuple[int, int, int]

# Recommended cube volume range, in voxels
MIN_CUBE_VOLUME = 15 ** 3
MAX_CUBE_VOLUME = 30 ** 3

# 13 unordered lattice directions with a fixed integer basis of the orthogonal plane
DIRECTIONS: Dict[Direction, Tuple[Direction, Direction]] = {
    (1, 0, 0): ((0, 1, 0), (0, 0, 1)),
    (0, 1, 0): ((1, 0, 0), (0, 0, 1)),
    (0, 0, 1): ((1, 0, 0), (0, 1, 0)),
    (1, 1, 0): ((1, -1, 0), (0, 0, 1)),
    (1, -1, 0): ((1, 1, 0), (0, 0, 1)),
    (1, 0, 1): ((1, 0, -1), (0, 1, 0)),
    (1, 0, -1): ((1, 0, 1), (0, 1, 0)),
    (0, 1, 1): ((1, 0, 0), (0, 1, -1)),
    (0, 1, -1): ((1, 0, 0), (0, 1, 1)),
    (1, 1, 1): ((1, -1, 0), (1, 1, -2)),
    (1, 1, -1): ((1, -1, 0), (1, 1, 2)),
    (1, -1, 1): ((1, 1, 0), (1, -1, -2)),
    (-1, 1, 1): ((1, 1, 0), (1, -1, 2)),
}

CHANNEL_NAMES = ("a", "b", "c")

CSV_FIELDS = ["qx", "qy", "qz", "a", "b", "c", "a_star", "b_star", "c_star"]


@dataclass(frozen=True)
class CubePartition:
    """g^3 congruent cubes; voxels past g * cube side are trimmed"""
    g: int
    dims: Dims
    cube_dims: Dims
    remainder: Dims

    @property
    def cube_volume(self) -> int:
        cx, cy, cz = self.cube_dims
        return cx * cy * cz

    @property
    def cube_count(self) -> int:
        return self.g ** 3

    def cube_slices(self, qx: int, qy: int, qz: int) -> Tuple[slice, slice, slice]:
        """numpy slices (z, y, x) of cube q, 0-based"""
        cx, cy, cz = self.cube_dims
        return (
            slice(qz * cz, (qz + 1) * cz),
            slice(qy * cy, (qy + 1) * cy),
            slice(qx * cx, (qx + 1) * cx),
        )

    def blocks(self, mask: BinaryVolume) -> np.ndarray:
        """Cubes as an array indexed [qz, qy, qx, z, y, x]"""
        g = self.g
        cx, cy, cz = self.cube_dims
        trimmed = mask.data[: g * cz, : g * cy, : g * cx]
        return trimmed.reshape(g, cz, g, cy, g, cx).transpose(0, 2, 4, 1, 3, 5)

    def paint(self, cubes: np.ndarray) -> np.ndarray:
        """Nearest-neighbour upsampling of a [qz, qy, qx] grid to voxel space"""
        cx, cy, cz = self.cube_dims
        nx, ny, nz = self.dims
        painted = np.zeros((nz, ny, nx), dtype=cubes.dtype)
        g = self.g
        painted[: g * cz, : g * cy, : g * cx] = np.repeat(
            np.repeat(np.repeat(cubes, cz, axis=0), cy, axis=1), cx, axis=2
        )
        return painted


def partition(volume: BinaryVolume, g: int) -> CubePartition:
    dims = volume.dims
    if int(g) != g or g < 2:
        raise ParameterError(f"features.g: must be an integer >= 2, got {g}")
    if g > min(dims):
        raise ParameterError(f"features.g: {g} cubes per axis exceed the smallest dimension of {dims}")
    g = int(g)
    cube_dims = tuple(d // g for d in dims)
    remainder = tuple(d - g * c for d, c in zip(dims, cube_dims))
    result = CubePartition(g=g, dims=dims, cube_dims=cube_dims, remainder=remainder)
    if any(remainder):
        logger.info(f"Partition g={g}: trimming {remainder} trailing voxels per axis")
    if not MIN_CUBE_VOLUME <= result.cube_volume <= MAX_CUBE_VOLUME:
        logger.warning(
            f"Partition g={g}: cube of {cube_dims} voxels lies outside the recommended "
            f"range [15^3, 30^3]"
        )
    return result


def _as_array(cube: Union[BinaryVolume, np.ndarray]) -> np.ndarray:
    data = cube.data if isinstance(cube, BinaryVolume) else np.asarray(cube)
    if data.ndim != 3:
        raise InputError(f"cube must be 3-dimensional, got shape {data.shape}")
    return data.astype(bool)


def _check_direction(direction: Sequence[int]) -> Direction:
    key = tuple(int(v) for v in direction)
    if key in DIRECTIONS:
        return key
    flipped = tuple(-v for v in key)
    if flipped in DIRECTIONS:
        return flipped
    raise ParameterError(f"direction {tuple(direction)} is not one of the 13 lattice directions")


# ---------------------------------------------------------------------------
# Block-wise statistics, [qz, qy, qx, z, y, x] arrays
# ---------------------------------------------------------------------------

def _block_volumes(blocks: np.ndarray) -> np.ndarray:
    return blocks.sum(axis=(3, 4, 5), dtype=np.int64)


def _block_surfaces(blocks: np.ndarray) -> np.ndarray:
    """Exposed faces: 6 V minus two faces per adjacent foreground pair inside the cube"""
    solid = blocks.astype(bool)
    pairs = (solid[:, :, :, 1:] & solid[:, :, :, :-1]).sum(axis=(3, 4, 5), dtype=np.int64)
    pairs += (solid[:, :, :, :, 1:] & solid[:, :, :, :, :-1]).sum(axis=(3, 4, 5), dtype=np.int64)
    pairs += (solid[..., 1:] & solid[..., :-1]).sum(axis=(3, 4, 5), dtype=np.int64)
    return 6 * _block_volumes(solid) - 2 * pairs


def _block_projections(blocks: np.ndarray, direction: Direction) -> np.ndarray:
    """Distinct lines along the direction through foreground voxel centres, per cube"""
    g = blocks.shape[:3]
    extent = blocks.shape[3:]  # (cz, cy, cx)
    qz, qy, qx, z, y, x = np.nonzero(blocks)
    counts = np.zeros(g, dtype=np.int64)
    if qz.size == 0:
        return counts

    cube_index = (qz.astype(np.int64) * g[1] + qy) * g[2] + qx
    coords = (x.astype(np.int64), y.astype(np.int64), z.astype(np.int64))
    sides = (extent[2], extent[1], extent[0])

    keys = []
    spans = []
    for basis in DIRECTIONS[direction]:
        low = sum(min(0, b * (s - 1)) for b, s in zip(basis, sides))
        high = sum(max(0, b * (s - 1)) for b, s in zip(basis, sides))
        keys.append(sum(b * c for b, c in zip(basis, coords)) - low)
        spans.append(high - low + 1)

    encoded = (cube_index * spans[0] + keys[0]) * spans[1] + keys[1]
    lines = np.unique(encoded)
    owners = lines // (spans[0] * spans[1])
    return np.bincount(owners, minlength=counts.size).reshape(g)


def _standardize(channel: np.ndarray) -> np.ndarray:
    values = channel.astype(np.float64)
    if values.size < 2:
        return np.zeros_like(values)
    sd = float(values.std(ddof=1))
    if sd == 0.0:
        return np.zeros_like(values)
    return values / sd


# ---------------------------------------------------------------------------
# Single-cube operations
# ---------------------------------------------------------------------------

def surface_area(cube: Union[BinaryVolume, np.ndarray]) -> float:
    """Foreground faces whose 6-neighbour is background or outside the cube"""
    data = _as_array(cube)
    return float(_block_surfaces(data[np.newaxis, np.newaxis, np.newaxis])[0, 0, 0])


def foreground_volume(cube: Union[BinaryVolume, np.ndarray]) -> float:
    return float(np.count_nonzero(_as_array(cube)))


def projection_area(cube: Union[BinaryVolume, np.ndarray], direction: Sequence[int]) -> float:
    """Occupied cells after projecting voxel centres along one of the 13 directions"""
    key = _check_direction(direction)
    data = _as_array(cube)
    return float(_block_projections(data[np.newaxis, np.newaxis, np.newaxis], key)[0, 0, 0])


# ---------------------------------------------------------------------------
# Feature grid
# ---------------------------------------------------------------------------

@dataclass
class FeatureGrid:
    """Raw and standardized feature triples, arrays indexed [qz, qy, qx, channel]"""
    g: int
    raw: np.ndarray
    standardized: np.ndarray
    cube_dims: Optional[Dims] = None

    def __post_init__(self):
        expected = (self.g, self.g, self.g, 3)
        if self.raw.shape != expected or self.standardized.shape != expected:
            raise InputError(
                f"feature grid arrays must have shape {expected}, "
                f"got {self.raw.shape} and {self.standardized.shape}"
            )

    @classmethod
    def from_raw(cls, raw: np.ndarray, cube_dims: Optional[Dims] = None) -> "FeatureGrid":
        raw = np.asarray(raw, dtype=np.float64)
        standardized = np.stack([_standardize(raw[..., k]) for k in range(3)], axis=-1)
        return cls(g=raw.shape[0], raw=raw, standardized=standardized, cube_dims=cube_dims)

    @property
    def field(self) -> np.ndarray:
        """The standardized triples the scan statistics run on"""
        return self.standardized

    def at(self, qx: int, qy: int, qz: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.raw[qz, qy, qx], self.standardized[qz, qy, qx]

    def channel_images(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Standardized channels A*, B*, C* as g^3 arrays"""
        return tuple(self.standardized[..., k] for k in range(3))

    def to_csv(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        g = self.g
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_FIELDS)
            for qz in range(g):
                for qy in range(g):
                    for qx in range(g):
                        raw = self.raw[qz, qy, qx]
                        std = self.standardized[qz, qy, qx]
                        writer.writerow([qx, qy, qz, *(repr(float(v)) for v in raw), *(repr(float(v)) for v in std)])
        return path

    @classmethod
    def from_csv(cls, path: PathLike) -> "FeatureGrid":
        path = Path(path)
        try:
            with open(path, "r", newline="") as f:
                rows = list(csv.DictReader(f))
        except OSError as e:
            raise InputError(f"cannot read feature grid {path}: {e}") from e
        g = round(len(rows) ** (1.0 / 3.0))
        if not rows or g ** 3 != len(rows):
            raise InputError(f"{path}: {len(rows)} rows do not form a g^3 grid")
        raw = np.zeros((g, g, g, 3))
        standardized = np.zeros((g, g, g, 3))
        try:
            for row in rows:
                q = (int(row["qz"]), int(row["qy"]), int(row["qx"]))
                raw[q] = [float(row[name]) for name in CHANNEL_NAMES]
                standardized[q] = [float(row[f"{name}_star"]) for name in CHANNEL_NAMES]
        except (KeyError, ValueError, IndexError) as e:
            raise InputError(f"{path}: malformed feature row ({e})") from e
        return cls(g=g, raw=raw, standardized=standardized)


def feature_grid(volume: BinaryVolume, g: int, num_threads: Optional[int] = 1) -> FeatureGrid:
    """Raw and standardized per-cube statistics of a binary segmentation"""
    layout = partition(volume, g)
    blocks = layout.blocks(volume)
    logger.info(f"Features: {layout.cube_count} cubes of {layout.cube_dims} voxels")

    volumes = _block_volumes(blocks)
    surfaces = _block_surfaces(blocks)
    projections = parallel_process(
        list(DIRECTIONS),
        lambda direction: _block_projections(blocks, direction),
        num_threads=num_threads,
        description="Projections",
    )
    areas = np.stack(projections, axis=-1).astype(np.float64)

    density = np.where(volumes > 0, surfaces / np.maximum(volumes, 1), 0.0)
    spread = areas.std(axis=-1, ddof=1)
    raw = np.stack([density, volumes.astype(np.float64), spread], axis=-1)
    return FeatureGrid.from_raw(raw, cube_dims=layout.cube_dims)


def export_channel_slice(grid: FeatureGrid, channel: str, axis: str, index: int, path: PathLike) -> Path:
    """Write one slice of a standardized channel as PGM, scaled by the channel maximum"""
    if channel not in CHANNEL_NAMES:
        raise ParameterError(f"channel must be one of {CHANNEL_NAMES}, got {channel!r}")
    axes = {"x": 2, "y": 1, "z": 0}
    if axis not in axes:
        raise InputError(f"axis must be one of x, y, z, got {axis!r}")
    if not 0 <= index < grid.g:
        raise InputError(f"slice index {index} out of range for a grid of {grid.g}")
    values = grid.standardized[..., CHANNEL_NAMES.index(channel)]
    plane = np.take(values, index, axis=axes[axis])
    peak = float(np.abs(values).max())
    scaled = np.abs(plane) / peak if peak > 0 else np.zeros_like(plane)
    return write_pgm(np.floor(scaled * 255.0 + 0.5).astype(np.uint8), path)
