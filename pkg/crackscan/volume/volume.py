"""
Dense 3D volume containers

Arrays are stored as numpy arrays shaped (nz, ny, nx) in C order, so the flat
buffer index of voxel (x, y, z) is x + nx * (y + ny * z). ``dims`` is always
reported as (nx, ny, nz).
"""
import hashlib
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from crackscan.errors import InputError

logger = logging.getLogger(__name__)

Dims = Tuple[int, int, int]

# numpy axis for each spatial axis name
AXIS_INDEX = {"x": 2, "y": 1, "z": 0}


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


def _check_dims(dims: Dims) -> Dims:
    if len(dims) != 3 or any(int(d) <= 0 for d in dims):
        raise InputError(f"dims must be three positive voxel counts, got {tuple(dims)}")
    return int(dims[0]), int(dims[1]), int(dims[2])


@dataclass(frozen=True)
class ScalarVolume:
    """Gray-value image I, nominal range [0, 1], stored as float32"""
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InputError(f"volume data must be 3-dimensional, got shape {self.data.shape}")
        object.__setattr__(self, "data", _frozen(self.data.astype(np.float32, copy=False)))

    @classmethod
    def from_flat(cls, values: np.ndarray, dims: Dims) -> "ScalarVolume":
        """Build a volume from a flat x-fastest buffer"""
        nx, ny, nz = _check_dims(dims)
        values = np.asarray(values)
        if values.size != nx * ny * nz:
            raise InputError(f"data length {values.size} does not match dims {dims}")
        return cls(values.reshape(nz, ny, nx))

    @property
    def dims(self) -> Dims:
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def flat(self) -> np.ndarray:
        return self.data.ravel()

    def at(self, x: int, y: int, z: int) -> float:
        return float(self.data[z, y, x])

    def fingerprint(self) -> str:
        """Content digest, used as a cache key"""
        digest = hashlib.sha1(self.data.tobytes())
        digest.update(repr(self.data.shape).encode())
        return digest.hexdigest()

    def __repr__(self):
        return f"ScalarVolume(dims={self.dims})"


@dataclass(frozen=True)
class BinaryVolume:
    """Segmentation mask with values in {0, 1}, stored as uint8"""
    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InputError(f"mask data must be 3-dimensional, got shape {self.data.shape}")
        data = self.data
        if data.dtype != np.uint8:
            if data.dtype != bool and not np.isin(data, (0, 1)).all():
                raise InputError("binary volume values must be 0 or 1")
            data = data.astype(np.uint8)
        elif data.size and data.max() > 1:
            raise InputError("binary volume values must be 0 or 1")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_flat(cls, values: np.ndarray, dims: Dims) -> "BinaryVolume":
        nx, ny, nz = _check_dims(dims)
        values = np.asarray(values)
        if values.size != nx * ny * nz:
            raise InputError(f"data length {values.size} does not match dims {dims}")
        return cls(values.reshape(nz, ny, nx))

    @classmethod
    def zeros(cls, dims: Dims) -> "BinaryVolume":
        nx, ny, nz = _check_dims(dims)
        return cls(np.zeros((nz, ny, nx), dtype=np.uint8))

    @property
    def dims(self) -> Dims:
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def flat(self) -> np.ndarray:
        return self.data.ravel()

    @property
    def mask(self) -> np.ndarray:
        return self.data.astype(bool)

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def at(self, x: int, y: int, z: int) -> int:
        return int(self.data[z, y, x])

    def union(self, other: "BinaryVolume") -> "BinaryVolume":
        require_same_dims(self, other)
        return BinaryVolume(np.maximum(self.data, other.data))

    def __repr__(self):
        return f"BinaryVolume(dims={self.dims}, foreground={self.count()})"


def require_same_dims(first, second, what: str = "volumes") -> None:
    """Raise InputError unless both volumes share dims"""
    if first.dims != second.dims:
        raise InputError(f"{what} have different dims: {first.dims} vs {second.dims}")


def normalize(volume: ScalarVolume) -> ScalarVolume:
    """Affine min-max rescale to [0, 1]; constant volumes map to all-zero"""
    data = volume.data.astype(np.float64)
    low = data.min()
    high = data.max()
    if high <= low:
        logger.debug("normalize: constant volume, mapping to zero")
        return ScalarVolume(np.zeros_like(data, dtype=np.float32))
    return ScalarVolume((data - low) / (high - low))
