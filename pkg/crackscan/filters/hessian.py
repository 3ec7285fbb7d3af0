"""
Hessian-based crack filters

Smoothed second derivatives, per-voxel eigen-analysis, the Frangi, Sheet and
Maximal Hessian Entry (MHE) responses, 3-sigma binarization and multi-scale
combination.

Dark cracks in bright material have a positive second derivative across the
crack plane, so every response keys on positive curvature.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from crackscan.errors import NumericError, ParameterError
from crackscan.utils.cache import HessianCache
from crackscan.utils.threading import parallel_process
from crackscan.volume.volume import BinaryVolume, Dims, ScalarVolume

logger = logging.getLogger(__name__)

# Channel order of the six unique Hessian entries
CHANNELS = ("h11", "h12", "h13", "h22", "h23", "h33")

# Relative tolerance for treating lambda2 as zero in the Frangi response
LAMBDA2_ZERO_TOL = 1e-12

# Slab height (z planes) for the eigen-analysis work items
EIGEN_SLAB = 16


@dataclass(frozen=True)
class HessianVolume:
    """Six unique entries of the smoothed Hessian at scale sigma"""
    sigma: float
    h11: np.ndarray
    h12: np.ndarray
    h13: np.ndarray
    h22: np.ndarray
    h23: np.ndarray
    h33: np.ndarray

    @property
    def dims(self) -> Dims:
        nz, ny, nx = self.h11.shape
        return nx, ny, nz

    def channels(self) -> Tuple[np.ndarray, ...]:
        return tuple(getattr(self, name) for name in CHANNELS)

    def matrix_at(self, x: int, y: int, z: int) -> np.ndarray:
        h11, h12, h13, h22, h23, h33 = (float(c[z, y, x]) for c in self.channels())
        return np.array([[h11, h12, h13], [h12, h22, h23], [h13, h23, h33]])


@dataclass(frozen=True)
class EigenTriple:
    """Eigenvalues ordered by magnitude, |l1| <= |l2| <= |l3|"""
    l1: float
    l2: float
    l3: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return self.l1, self.l2, self.l3


@dataclass(frozen=True)
class EigenVolumes:
    """Per-voxel eigenvalues of a HessianVolume"""
    l1: np.ndarray
    l2: np.ndarray
    l3: np.ndarray


@dataclass(frozen=True)
class FrangiParams:
    """Frangi sensitivities; c=None means half the largest Hessian norm at each scale"""
    a: float = 0.3
    b: float = 0.3
    c: Optional[float] = None

    def __post_init__(self):
        if not self.a > 0 or not self.b > 0:
            raise ParameterError(f"frangi: a and b must be positive, got a={self.a}, b={self.b}")
        if self.c is not None and not self.c > 0:
            raise ParameterError(f"frangi: c must be positive, got {self.c}")


@dataclass(frozen=True)
class SheetParams:
    delta: float = 1.0
    rho: float = 1.0

    def __post_init__(self):
        if not self.delta >= 0:
            raise ParameterError(f"sheet: delta must be >= 0, got {self.delta}")
        if not 0 < self.rho <= 1:
            raise ParameterError(f"sheet: rho must lie in (0, 1], got {self.rho}")


@dataclass(frozen=True)
class ScaleSet:
    """Strictly ascending, nonempty set of positive scales"""
    sigmas: Tuple[float, ...] = (1.0, 3.0, 5.0)

    def __post_init__(self):
        sigmas = tuple(float(s) for s in self.sigmas)
        if not sigmas:
            raise ParameterError("scales: at least one sigma is required")
        if any(not s > 0 for s in sigmas):
            raise ParameterError(f"scales: every sigma must be positive, got {sigmas}")
        if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
            raise ParameterError(f"scales: sigmas must be strictly ascending, got {sigmas}")
        object.__setattr__(self, "sigmas", sigmas)

    @classmethod
    def of(cls, sigmas: Iterable[float]) -> "ScaleSet":
        return cls(tuple(sigmas))

    def __iter__(self):
        return iter(self.sigmas)

    def __len__(self) -> int:
        return len(self.sigmas)


# ---------------------------------------------------------------------------
# Gaussian derivative kernels
# ---------------------------------------------------------------------------

def kernel_radius(sigma: float) -> int:
    return int(math.ceil(3.0 * sigma))


def gaussian_kernels(sigma: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sampled 1-D factors of G(p, sigma) = (2 pi sigma)^(-3/2) exp(-|p|^2 / (2 sigma^2))

    Returns the smoothing kernel and its first and second derivatives on
    offsets -R..R, R = ceil(3 sigma). The derivative kernels are moment
    corrected so that, after truncation, constants differentiate to zero and
    linear/quadratic profiles differentiate exactly.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    radius = kernel_radius(sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    s2 = sigma * sigma

    g0 = (2.0 * math.pi * sigma) ** -0.5 * np.exp(-x * x / (2.0 * s2))
    mass = g0.sum()

    g1 = -x / s2 * g0
    g1 *= -mass / np.dot(x, g1)

    g2 = (x * x / (s2 * s2) - 1.0 / s2) * g0
    g2 -= (g2.sum() / mass) * g0
    g2 *= 2.0 * mass / np.dot(x * x, g2)

    return g0, g1, g2


def _convolve(data: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    return ndimage.convolve1d(data, weights, axis=axis, output=np.float64, mode="reflect")


def gaussian_hessian(image: ScalarVolume, sigma: float) -> HessianVolume:
    """Smoothed second derivatives sigma * (I * d2G / dp_i dp_j), computed separably

    Axis 1 is x (numpy axis 2), axis 3 is z (numpy axis 0).
    """
    g0, g1, g2 = gaussian_kernels(sigma)
    data = image.data.astype(np.float64)
    logger.debug(f"Hessian at sigma={sigma} (radius {kernel_radius(sigma)})")

    # z pass, then y, then x; 15 one-dimensional passes for six channels
    z0 = _convolve(data, g0, 0)
    z1 = _convolve(data, g1, 0)
    z2 = _convolve(data, g2, 0)

    y0z0 = _convolve(z0, g0, 1)
    y1z0 = _convolve(z0, g1, 1)
    y2z0 = _convolve(z0, g2, 1)
    del z0
    y0z1 = _convolve(z1, g0, 1)
    y1z1 = _convolve(z1, g1, 1)
    del z1
    y0z2 = _convolve(z2, g0, 1)
    del z2

    h11 = _convolve(y0z0, g2, 2)
    del y0z0
    h22 = _convolve(y2z0, g0, 2)
    del y2z0
    h12 = _convolve(y1z0, g1, 2)
    del y1z0
    h13 = _convolve(y0z1, g1, 2)
    del y0z1
    h23 = _convolve(y1z1, g0, 2)
    del y1z1
    h33 = _convolve(y0z2, g0, 2)
    del y0z2

    for channel in (h11, h12, h13, h22, h23, h33):
        channel *= sigma
    return HessianVolume(sigma=float(sigma), h11=h11, h12=h12, h13=h13, h22=h22, h23=h23, h33=h33)


def cached_hessian(
    image: ScalarVolume, sigma: float, cache: Optional[HessianCache] = None
) -> HessianVolume:
    """gaussian_hessian through an optional LRU cache"""
    if cache is None:
        return gaussian_hessian(image, sigma)
    return cache.get_or_compute(image.fingerprint(), sigma, lambda: gaussian_hessian(image, sigma))


# ---------------------------------------------------------------------------
# Eigen-analysis
# ---------------------------------------------------------------------------

def _eigvals_batch(
    h11: np.ndarray, h12: np.ndarray, h13: np.ndarray,
    h22: np.ndarray, h23: np.ndarray, h33: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form eigenvalues of symmetric 3x3 matrices, sorted by |value|

    Trigonometric solution of the characteristic cubic. Near a double root the
    isolated root is kept and the pair is recovered from the deflated quadratic.
    Diagonal matrices return their diagonal exactly.
    """
    h11, h12, h13, h22, h23, h33 = (np.asarray(h, dtype=np.float64) for h in (h11, h12, h13, h22, h23, h33))

    p1 = h12 * h12 + h13 * h13 + h23 * h23
    q = (h11 + h22 + h33) / 3.0
    d11 = h11 - q
    d22 = h22 - q
    d33 = h33 - q
    p2 = d11 * d11 + d22 * d22 + d33 * d33 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0, p, 1.0)

    b11 = d11 / safe_p
    b22 = d22 / safe_p
    b33 = d33 / safe_p
    b12 = h12 / safe_p
    b13 = h13 / safe_p
    b23 = h23 / safe_p
    det_b = (
        b11 * (b22 * b33 - b23 * b23)
        - b12 * (b12 * b33 - b23 * b13)
        + b13 * (b12 * b23 - b22 * b13)
    )
    r = np.clip(det_b / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0

    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3

    near_double = np.abs(r) > 1.0 - 1e-6
    if np.any(near_double):
        isolated = np.where(r >= 0, e1, e3)
        pair_sum = 3.0 * q - isolated
        minors = h11 * h22 + h11 * h33 + h22 * h33 - p1
        pair_product = minors - isolated * pair_sum
        half = pair_sum / 2.0
        spread = np.sqrt(np.maximum(half * half - pair_product, 0.0))
        high = np.where(r >= 0, isolated, half + spread)
        low = np.where(r >= 0, half - spread, isolated)
        middle = np.where(r >= 0, half + spread, half - spread)
        e1 = np.where(near_double, high, e1)
        e2 = np.where(near_double, middle, e2)
        e3 = np.where(near_double, low, e3)

    diagonal = p1 == 0
    if np.any(diagonal):
        e1 = np.where(diagonal, h11, e1)
        e2 = np.where(diagonal, h22, e2)
        e3 = np.where(diagonal, h33, e3)

    values = np.stack(np.broadcast_arrays(e1, e2, e3), axis=-1)
    # signed ascending first, then a stable sort by magnitude keeps ties in signed order
    values = np.sort(values, axis=-1)
    order = np.argsort(np.abs(values), axis=-1, kind="stable")
    values = np.take_along_axis(values, order, axis=-1)
    return values[..., 0], values[..., 1], values[..., 2]


def eigenvalues_sym3(h: Sequence) -> EigenTriple:
    """Eigenvalues of one symmetric 3x3 matrix (3x3 array or the six unique entries)

    Entries are read as (h11, h12, h13, h22, h23, h33) when six values are given.
    """
    values = np.asarray(h, dtype=np.float64)
    if values.shape == (3, 3):
        entries = (values[0, 0], values[0, 1], values[0, 2], values[1, 1], values[1, 2], values[2, 2])
    elif values.shape == (6,):
        entries = tuple(values)
    else:
        raise ParameterError(f"expected a 3x3 matrix or six entries, got shape {values.shape}")
    if not np.all(np.isfinite(entries)):
        raise NumericError(f"non-finite Hessian entries: {entries}")
    l1, l2, l3 = _eigvals_batch(*(np.float64(e) for e in entries))
    return EigenTriple(float(l1), float(l2), float(l3))


def hessian_eigenvalues(hv: HessianVolume, num_threads: Optional[int] = 1) -> EigenVolumes:
    """Eigenvalues at every voxel, computed slab-parallel along z"""
    nz = hv.h11.shape[0]
    slabs = [slice(start, min(start + EIGEN_SLAB, nz)) for start in range(0, nz, EIGEN_SLAB)]

    def solve(slab: slice) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _eigvals_batch(*(channel[slab] for channel in hv.channels()))

    parts = parallel_process(slabs, solve, num_threads=num_threads, description="Eigenvalues")
    l1 = np.concatenate([part[0] for part in parts], axis=0)
    l2 = np.concatenate([part[1] for part in parts], axis=0)
    l3 = np.concatenate([part[2] for part in parts], axis=0)
    if not (np.isfinite(l1).all() and np.isfinite(l2).all() and np.isfinite(l3).all()):
        raise NumericError(f"non-finite eigenvalues at sigma={hv.sigma}")
    return EigenVolumes(l1=l1, l2=l2, l3=l3)


# ---------------------------------------------------------------------------
# Responses
# ---------------------------------------------------------------------------

def frangi_from_eigenvalues(
    l1: np.ndarray, l2: np.ndarray, l3: np.ndarray, params: FrangiParams
) -> np.ndarray:
    l1, l2, l3 = (np.asarray(v, dtype=np.float64) for v in (l1, l2, l3))
    norm = np.sqrt(l1 * l1 + l2 * l2 + l3 * l3)
    c = params.c
    if c is None:
        peak = float(norm.max()) if norm.size else 0.0
        c = 0.5 * peak if peak > 0 else 1.0

    bright_plate = l3 > 0
    l2_zero = np.abs(l2) <= LAMBDA2_ZERO_TOL * (1.0 + norm)
    safe_l3 = np.where(bright_plate, l3, 1.0)
    q_a = np.abs(l2 / safe_l3)
    denom = np.sqrt(np.abs(l2 * l3))
    q_b = np.abs(l1) / np.where(l2_zero | ~bright_plate, 1.0, denom)

    structure = 1.0 - np.exp(-(norm * norm) / c)
    plate = np.exp(-(q_a * q_a) / params.a)
    blob = np.where(l2_zero, 1.0, np.exp(-(q_b * q_b) / params.b))
    return np.where(bright_plate, plate * blob * structure, 0.0)


def frangi_response(
    hv: HessianVolume, params: FrangiParams, num_threads: Optional[int] = 1
) -> ScalarVolume:
    """Frangi plate response at the Hessian's scale"""
    eig = hessian_eigenvalues(hv, num_threads=num_threads)
    return ScalarVolume(frangi_from_eigenvalues(eig.l1, eig.l2, eig.l3, params))


def sheet_factor(ls: np.ndarray, lt: np.ndarray, params: SheetParams) -> np.ndarray:
    """Three-branch factor g(ls, lt), evaluated top-down and falling through to 0"""
    ls = np.asarray(ls, dtype=np.float64)
    lt_abs = np.abs(np.asarray(lt, dtype=np.float64))
    safe_lt = np.where(lt_abs > 0, lt_abs, 1.0)
    first = (ls <= 0) & (lt_abs >= np.abs(ls)) & (lt_abs > 0)
    second = ~first & (ls > 0) & (lt_abs >= params.rho * ls) & (lt_abs > 0)
    base = np.where(first, 1.0 + ls / safe_lt, np.where(second, 1.0 - params.rho * ls / safe_lt, 0.0))
    powered = np.power(np.maximum(base, 0.0), params.delta)
    return np.where(first | second, powered, 0.0)


def sheet_from_eigenvalues(
    l1: np.ndarray, l2: np.ndarray, l3: np.ndarray, params: SheetParams
) -> np.ndarray:
    l3 = np.asarray(l3, dtype=np.float64)
    value = l3 * sheet_factor(l1, l3, params) * sheet_factor(l2, l3, params)
    return np.where(l3 > 0, value, 0.0)


def sheet_response(
    hv: HessianVolume, params: SheetParams, num_threads: Optional[int] = 1
) -> ScalarVolume:
    """Sheet filter response at the Hessian's scale"""
    eig = hessian_eigenvalues(hv, num_threads=num_threads)
    return ScalarVolume(sheet_from_eigenvalues(eig.l1, eig.l2, eig.l3, params))


def mhe_response(hv: HessianVolume) -> ScalarVolume:
    """Maximal Hessian Entry: max over the six unique entries and 0"""
    response = np.zeros_like(hv.h11)
    for channel in hv.channels():
        np.maximum(response, channel, out=response)
    return ScalarVolume(response)


def three_sigma_threshold(values: np.ndarray) -> Optional[float]:
    """mu + 3 sd with the N-1 sample deviation; None when the spread is zero"""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return None
    sd = float(values.std(ddof=1))
    if sd == 0.0:
        return None
    return float(values.mean()) + 3.0 * sd


def three_sigma_binarize(response: ScalarVolume) -> BinaryVolume:
    """Mark voxels at or above mu + 3 sd of the response; zero spread gives an empty mask"""
    threshold = three_sigma_threshold(response.data)
    if threshold is None:
        return BinaryVolume(np.zeros(response.data.shape, dtype=np.uint8))
    return BinaryVolume(response.data.astype(np.float64) >= threshold)


# ---------------------------------------------------------------------------
# Multi-scale combination
# ---------------------------------------------------------------------------

def multiscale_mhe(
    image: ScalarVolume,
    scales: ScaleSet,
    cache: Optional[HessianCache] = None,
    num_threads: Optional[int] = 1,
) -> BinaryVolume:
    """Union over scales of the 3-sigma binarized MHE responses"""

    def binarized(sigma: float) -> np.ndarray:
        mask = three_sigma_binarize(mhe_response(cached_hessian(image, sigma, cache)))
        logger.debug(f"MHE sigma={sigma}: {mask.count()} voxels marked")
        return mask.data

    masks = parallel_process(list(scales), binarized, num_threads=num_threads, description="MHE scales")
    combined = masks[0].copy()
    for mask in masks[1:]:
        np.maximum(combined, mask, out=combined)
    return BinaryVolume(combined)


def _multiscale_response(
    image: ScalarVolume,
    scales: ScaleSet,
    cache: Optional[HessianCache],
    single: Callable[[HessianVolume], ScalarVolume],
) -> ScalarVolume:
    """Voxelwise maximum of single(Hessian at sigma) over the scales"""
    combined: Optional[np.ndarray] = None
    for sigma in scales:
        response = single(cached_hessian(image, sigma, cache)).data
        combined = response.copy() if combined is None else np.maximum(combined, response)
    return ScalarVolume(combined)


def multiscale_frangi(
    image: ScalarVolume,
    scales: ScaleSet,
    params: FrangiParams,
    cache: Optional[HessianCache] = None,
    num_threads: Optional[int] = 1,
) -> ScalarVolume:
    """Voxelwise maximum of the Frangi responses over the scale set"""
    return _multiscale_response(
        image, scales, cache,
        lambda hv: frangi_response(hv, params, num_threads=num_threads),
    )


def multiscale_sheet(
    image: ScalarVolume,
    scales: ScaleSet,
    params: SheetParams,
    cache: Optional[HessianCache] = None,
    num_threads: Optional[int] = 1,
) -> ScalarVolume:
    """Voxelwise maximum of the Sheet responses over the scale set"""
    return _multiscale_response(
        image, scales, cache,
        lambda hv: sheet_response(hv, params, num_threads=num_threads),
    )
