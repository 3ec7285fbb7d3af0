"""
Precision, recall and F1 against ground truth, per voxel and per cube
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np

from crackscan.geometry.features import partition
from crackscan.volume.volume import BinaryVolume, require_same_dims

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

METRIC_FIELDS = ["stage", "level", "precision", "recall", "f1"]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricRow:
    """One (stage, level) line of a metrics table"""
    stage: str
    level: str
    precision: float
    recall: float
    f1: float


def confusion(pred: BinaryVolume, truth: BinaryVolume) -> ConfusionCounts:
    require_same_dims(pred, truth, "prediction and truth")
    p = pred.mask
    t = truth.mask
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size) - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def prf1(counts: ConfusionCounts) -> Tuple[float, float, float]:
    """Precision, recall and F1; each ratio is 0 when its denominator is 0"""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = f1_score(precision, recall)
    return precision, recall, f1


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def cube_truth(truth: BinaryVolume, g: int, min_voxels: int = 1) -> BinaryVolume:
    """g^3 mask of cubes holding at least min_voxels truth voxels"""
    layout = partition(truth, g)
    counts = layout.blocks(truth).sum(axis=(3, 4, 5), dtype=np.int64)
    return BinaryVolume(counts >= max(int(min_voxels), 1))


def evaluate(stage: str, level: str, pred: BinaryVolume, truth: BinaryVolume) -> MetricRow:
    counts = confusion(pred, truth)
    precision, recall, f1 = prf1(counts)
    logger.info(f"{stage} ({level}): P={precision:.4f} R={recall:.4f} F1={f1:.4f}")
    return MetricRow(stage=stage, level=level, precision=precision, recall=recall, f1=f1)


def write_metrics(rows: Iterable[MetricRow], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_FIELDS)
        for row in rows:
            writer.writerow([row.stage, row.level, repr(row.precision), repr(row.recall), repr(row.f1)])
    return path


def read_metrics(path: PathLike) -> List[MetricRow]:
    with open(path, "r", newline="") as f:
        return [
            MetricRow(
                stage=row["stage"],
                level=row["level"],
                precision=float(row["precision"]),
                recall=float(row["recall"]),
                f1=float(row["f1"]),
            )
            for row in csv.DictReader(f)
        ]
