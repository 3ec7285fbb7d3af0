"""
Synthetic concrete-like volumes with exact ground truth

Background is independent Gaussian gray noise. A planar crack is the slab of
voxels within w/2 of a plane and gets a darker mean; spherical pores are dark
confounders that stay 0 in the truth mask. All randomness comes from one
seeded numpy Generator, drawn in a fixed order.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from crackscan.errors import ParameterError
from crackscan.volume.volume import BinaryVolume, Dims, ScalarVolume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CrackSpec:
    """Planar crack |n . p - offset| <= width / 2, p = (x, y, z)"""
    normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: Optional[float] = None  # None: plane through the volume centre voxel
    width: float = 5.0
    mean: float = 0.25

    def unit_normal(self) -> np.ndarray:
        normal = np.asarray(self.normal, dtype=np.float64)
        length = float(np.linalg.norm(normal)) if normal.shape == (3,) else 0.0
        if not math.isfinite(length) or length < 1e-12:
            raise ParameterError(f"phantom.crack.normal: degenerate normal vector {self.normal}")
        return normal / length


@dataclass(frozen=True)
class PoreSpec:
    count: int = 0
    radius_min: float = 2.0
    radius_max: float = 4.0
    mean: float = 0.2


@dataclass(frozen=True)
class PhantomSpec:
    dims: Dims = (128, 128, 128)
    seed: int = 0
    background_mean: float = 0.7
    background_sd: float = 0.05
    crack: Optional[CrackSpec] = field(default_factory=CrackSpec)
    pores: Optional[PoreSpec] = None

    def validate(self) -> None:
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise ParameterError(f"phantom.dims: three positive voxel counts required, got {self.dims}")
        if not 0 <= self.background_mean <= 1:
            raise ParameterError(f"phantom.background_mean: must lie in [0, 1], got {self.background_mean}")
        if not self.background_sd >= 0:
            raise ParameterError(f"phantom.background_sd: must be >= 0, got {self.background_sd}")
        if self.crack is not None:
            self.crack.unit_normal()
            if not 0 <= self.crack.mean < self.background_mean:
                raise ParameterError(
                    f"phantom.crack.mean: must satisfy 0 <= mean < background_mean "
                    f"({self.background_mean}), got {self.crack.mean}"
                )
            if not self.crack.width >= 1:
                raise ParameterError(f"phantom.crack.width: must be >= 1, got {self.crack.width}")
        if self.pores is not None:
            if self.pores.count < 0:
                raise ParameterError(f"phantom.pores.count: must be >= 0, got {self.pores.count}")
            if not 0 < self.pores.radius_min <= self.pores.radius_max:
                raise ParameterError(
                    f"phantom.pores: need 0 < radius_min <= radius_max, "
                    f"got {self.pores.radius_min}, {self.pores.radius_max}"
                )
            if not 0 <= self.pores.mean <= 1:
                raise ParameterError(f"phantom.pores.mean: must lie in [0, 1], got {self.pores.mean}")


def crack_slab(dims: Dims, crack: CrackSpec) -> np.ndarray:
    """Boolean (nz, ny, nx) mask of the voxels within width/2 of the crack plane"""
    nx, ny, nz = (int(d) for d in dims)
    n = crack.unit_normal()
    offset = crack.offset
    if offset is None:
        offset = float(np.dot(n, [nx // 2, ny // 2, nz // 2]))
    zz, yy, xx = np.ogrid[:nz, :ny, :nx]
    distance = np.abs(n[0] * xx + n[1] * yy + n[2] * zz - offset)
    return distance <= crack.width / 2.0


def _place_pores(
    rng: np.random.Generator, gray: np.ndarray, pores: PoreSpec, sd: float
) -> int:
    nz, ny, nx = gray.shape
    marked = 0
    for _ in range(pores.count):
        centre = rng.uniform([0, 0, 0], [nx, ny, nz])
        radius = rng.uniform(pores.radius_min, pores.radius_max)
        lo = np.maximum(np.floor(centre - radius).astype(int), 0)
        hi = np.minimum(np.ceil(centre + radius).astype(int) + 1, [nx, ny, nz])
        zz, yy, xx = np.ogrid[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]]
        ball = (xx - centre[0]) ** 2 + (yy - centre[1]) ** 2 + (zz - centre[2]) ** 2 <= radius ** 2
        region = gray[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]]
        region[ball] = rng.normal(pores.mean, sd, int(ball.sum()))
        marked += int(ball.sum())
    return marked


def generate(spec: PhantomSpec) -> Tuple[ScalarVolume, BinaryVolume]:
    """Gray volume and voxel-exact crack truth; identical spec gives identical output"""
    spec.validate()
    nx, ny, nz = (int(d) for d in spec.dims)
    rng = np.random.default_rng(spec.seed)

    gray = rng.normal(spec.background_mean, spec.background_sd, (nz, ny, nx))
    truth = np.zeros((nz, ny, nx), dtype=np.uint8)

    if spec.pores is not None and spec.pores.count:
        marked = _place_pores(rng, gray, spec.pores, spec.background_sd)
        logger.debug(f"Phantom: {spec.pores.count} pores over {marked} voxels")

    if spec.crack is not None:
        slab = crack_slab(spec.dims, spec.crack)
        gray[slab] = rng.normal(spec.crack.mean, spec.background_sd, int(slab.sum()))
        truth[slab] = 1
        logger.debug(f"Phantom: crack slab of {int(slab.sum())} voxels")

    np.clip(gray, 0.0, 1.0, out=gray)
    return ScalarVolume(gray), BinaryVolume(truth)


def generate_homogeneous(
    dims: Dims,
    seed: int,
    mean: float = 0.7,
    sd: float = 0.05,
    pores: Optional[PoreSpec] = None,
) -> ScalarVolume:
    """Crack-free background noise, the calibration volume for the empirical null"""
    volume, _ = generate(
        PhantomSpec(dims=tuple(dims), seed=seed, background_mean=mean, background_sd=sd, crack=None, pores=pores)
    )
    return volume

