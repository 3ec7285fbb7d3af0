"""
Hessian-seeded percolation

Each connected component of the candidate mask H seeds a cluster P that grows by
admitting neighbours darker than a rising gray threshold t, inside a cubic
window of half-width M around the component centroid. A cluster that keeps a
large enough share of H voxels is labelled crack; the rest are rejected, and
their rarely visited voxels are labelled material.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from crackscan.errors import ParameterError
from crackscan.utils.threading import parallel_process
from crackscan.volume.volume import BinaryVolume, ScalarVolume, require_same_dims

logger = logging.getLogger(__name__)

# Stop reasons recorded per cluster
STOP_BOUNDARY = "boundary"
STOP_EXHAUSTED = "exhausted"
STOP_STALLED = "stalled"


@dataclass(frozen=True)
class PercolationParams:
    epsilon: float = 0.01
    M: int = 3
    r: float = 0.6
    tau_max: int = 4
    connectivity: int = 26

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ParameterError(f"percolation: M must be a positive integer, got {self.M}")
        if not 0 < self.r <= 1:
            raise ParameterError(f"percolation: r must lie in (0, 1], got {self.r}")
        if int(self.tau_max) != self.tau_max or self.tau_max < 1:
            raise ParameterError(f"percolation: tau_max must be a positive integer, got {self.tau_max}")
        if self.connectivity not in (6, 26):
            raise ParameterError(f"percolation: connectivity must be 6 or 26, got {self.connectivity}")

    def structure(self) -> np.ndarray:
        return ndimage.generate_binary_structure(3, 1 if self.connectivity == 6 else 3)


@dataclass
class ClusterRecord:
    """Outcome of growing one seed component"""
    label: int
    centroid: Tuple[int, int, int]
    seed_count: int
    size: int
    hits: int
    sweeps: int
    stop_reason: str
    thresholds: List[float] = field(default_factory=list)
    accepted: bool = False

    @property
    def ratio(self) -> float:
        return self.hits / self.size if self.size else 0.0


@dataclass
class PercolationResult:
    mask: BinaryVolume
    material: BinaryVolume
    visits: np.ndarray
    clusters: List[ClusterRecord]

    @property
    def accepted(self) -> List[ClusterRecord]:
        return [c for c in self.clusters if c.accepted]


def _raise_threshold(t: float, peak: float, epsilon: float) -> float:
    """Next threshold; never below the current one"""
    return max(max(peak, t) + epsilon, t)


@dataclass
class _Grown:
    record: ClusterRecord
    box: Tuple[slice, slice, slice]
    region: np.ndarray
    visits: np.ndarray


def _grow(
    label: int,
    labels: np.ndarray,
    box: Tuple[slice, slice, slice],
    gray: np.ndarray,
    params: PercolationParams,
) -> _Grown:
    shape = gray.shape
    seeds = np.argwhere(labels[box] == label) + np.array([s.start for s in box])
    # centroid rounded half-up, numpy order (z, y, x)
    centre = np.floor(seeds.mean(axis=0) + 0.5).astype(int)
    M = int(params.M)

    # working crop: seed bounding box plus the window, clipped to the volume
    lo = np.minimum(seeds.min(axis=0), centre - M).clip(min=0)
    hi = np.minimum(np.maximum(seeds.max(axis=0), centre + M) + 1, shape)
    crop = tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))

    zz, yy, xx = np.ogrid[crop[0], crop[1], crop[2]]
    distance = np.maximum(np.maximum(abs(zz - centre[0]), abs(yy - centre[1])), abs(xx - centre[2]))
    window = distance <= M
    shell = distance == M

    local_gray = gray[crop]
    seed_mask = labels[crop] == label
    grown = seed_mask.copy()
    visits = np.zeros(local_gray.shape, dtype=np.int32)
    structure = params.structure()

    t = float(local_gray[seed_mask].max()) + params.epsilon
    thresholds = [t]
    sweeps = 0
    while True:
        if np.any(grown & shell):
            reason = STOP_BOUNDARY
            break
        frontier = ndimage.binary_dilation(grown, structure=structure) & window & ~grown
        if not frontier.any():
            reason = STOP_EXHAUSTED
            break
        sweeps += 1
        visits[frontier] += 1
        admitted = frontier & (local_gray < t)
        grew = bool(admitted.any())
        grown |= admitted
        next_t = _raise_threshold(t, float(local_gray[grown].max()), params.epsilon)
        if not grew and next_t == t:
            reason = STOP_STALLED
            break
        t = next_t
        thresholds.append(t)

    size = int(np.count_nonzero(grown))
    hits = int(np.count_nonzero(grown & seed_mask))
    record = ClusterRecord(
        label=int(label),
        centroid=(int(centre[2]), int(centre[1]), int(centre[0])),
        seed_count=int(seeds.shape[0]),
        size=size,
        hits=hits,
        sweeps=sweeps,
        stop_reason=reason,
        thresholds=thresholds,
    )
    record.accepted = record.ratio >= params.r
    logger.debug(
        f"Cluster {label}: {size} voxels after {sweeps} sweeps ({reason}), "
        f"ratio {record.ratio:.3f}, {'accepted' if record.accepted else 'rejected'}"
    )
    return _Grown(record=record, box=crop, region=grown, visits=visits)


def percolate(
    image: ScalarVolume,
    candidates: BinaryVolume,
    params: Optional[PercolationParams] = None,
    num_threads: Optional[int] = 1,
) -> PercolationResult:
    """Grow every candidate component and collect crack, material and visit counts"""
    params = params or PercolationParams()
    require_same_dims(image, candidates, "image and candidate mask")

    gray = image.data
    labels, count = ndimage.label(candidates.data, structure=params.structure())
    crack = np.zeros(gray.shape, dtype=np.uint8)
    material = np.zeros(gray.shape, dtype=np.uint8)
    visits = np.zeros(gray.shape, dtype=np.int32)
    if count == 0:
        logger.info("Percolation: empty candidate set, nothing to grow")
        return PercolationResult(BinaryVolume(crack), BinaryVolume(material), visits, [])

    logger.info(f"Percolation: growing {count} candidate components")
    boxes = ndimage.find_objects(labels)
    jobs = [(index + 1, box) for index, box in enumerate(boxes) if box is not None]
    results = parallel_process(
        jobs,
        lambda job: _grow(job[0], labels, job[1], gray, params),
        num_threads=num_threads,
        description="Percolation",
    )

    # merge in label order; unions and sums commute
    for grown in results:
        visits[grown.box] += grown.visits
        if grown.record.accepted:
            crack[grown.box] |= grown.region.astype(np.uint8)
        else:
            touched = grown.region | (grown.visits > 0)
            rarely = touched & (grown.visits <= params.tau_max)
            material[grown.box] |= rarely.astype(np.uint8)
    material &= 1 - crack

    clusters = [grown.record for grown in results]
    accepted = sum(1 for c in clusters if c.accepted)
    logger.info(f"Percolation: {accepted} of {len(clusters)} clusters accepted as crack")
    return PercolationResult(BinaryVolume(crack), BinaryVolume(material), visits, clusters)


def hessian_percolation(
    image: ScalarVolume,
    candidates: BinaryVolume,
    params: Optional[PercolationParams] = None,
    num_threads: Optional[int] = 1,
) -> BinaryVolume:
    """Union of the accepted clusters"""
    return percolate(image, candidates, params, num_threads=num_threads).mask
