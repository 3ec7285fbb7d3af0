"""
Scan statistics over the feature grid

For every cubic window J of side u on the g^3 grid, the change-in-mean CUSUM

    T(J) = || mean(field over J) - mean(field outside J) ||_p

is compared against an empirical null built on a crack-free volume. The
resulting p-values go through the Benjamini-Hochberg step-up rule, and every
cube is flagged by a vote over the windows that contain it.

With alternative="greater" only components where the window mean exceeds the
complement mean enter the norm. A window then never tests significant merely
because the rest of the grid holds the crack.
"""
import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from crackscan.errors import CalibrationError, InputError, ParameterError
from crackscan.geometry.features import FeatureGrid
from crackscan.volume.volume import BinaryVolume

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Norm = Union[float, str]

NULL_HEADER = "T"
# "greater" keeps only increases of the window mean over the complement mean
ALTERNATIVES = ("two-sided", "greater")
REPORT_FIELDS = ["a", "b", "c", "u", "T", "p", "decision"]


@dataclass(frozen=True)
class ScanWindow:
    """Window of side u anchored at (a, b, c), 1-based along (x, y, z)"""
    a: int
    b: int
    c: int
    u: int

    def contains(self, qx: int, qy: int, qz: int) -> bool:
        """Membership of the 1-based cube (qx, qy, qz)"""
        return (
            self.a <= qx < self.a + self.u
            and self.b <= qy < self.b + self.u
            and self.c <= qz < self.c + self.u
        )

    def slices(self) -> Tuple[slice, slice, slice]:
        """numpy slices (z, y, x) into a [qz, qy, qx] grid"""
        return (
            slice(self.c - 1, self.c - 1 + self.u),
            slice(self.b - 1, self.b - 1 + self.u),
            slice(self.a - 1, self.a - 1 + self.u),
        )


def parse_norm(norm: Norm) -> float:
    """'inf' or a real p >= 1"""
    if isinstance(norm, str):
        if norm.strip().lower() in ("inf", "infinity", "max"):
            return math.inf
        try:
            norm = float(norm)
        except ValueError:
            raise ParameterError(f"detect.norm: expected 'inf' or a number >= 1, got {norm!r}") from None
    value = float(norm)
    if not value >= 1:
        raise ParameterError(f"detect.norm: p must be >= 1, got {norm}")
    return value


def norm_label(norm: Norm) -> str:
    value = parse_norm(norm)
    return "inf" if math.isinf(value) else repr(value)


def _check_window_size(g: int, u: int) -> None:
    if int(u) != u or not 1 <= u <= g:
        raise ParameterError(f"detect.u: window side must satisfy 1 <= u <= g={g}, got {u}")


def enumerate_windows(g: int, u: int) -> List[ScanWindow]:
    """All (g-u+1)^3 windows, lexicographic in (a, b, c) with a slowest"""
    _check_window_size(g, u)
    n = g - u + 1
    return [
        ScanWindow(a, b, c, u)
        for a in range(1, n + 1)
        for b in range(1, n + 1)
        for c in range(1, n + 1)
    ]


def window_anchors(g: int, u: int) -> np.ndarray:
    """Anchors (a, b, c) as an (N, 3) array in enumerate_windows order"""
    _check_window_size(g, u)
    n = g - u + 1
    grid = np.indices((n, n, n)).reshape(3, -1).T
    return grid + 1


def _field_array(field: Union[FeatureGrid, np.ndarray]) -> np.ndarray:
    values = field.field if isinstance(field, FeatureGrid) else np.asarray(field, dtype=np.float64)
    if values.ndim != 4 or values.shape[0] != values.shape[1] or values.shape[1] != values.shape[2]:
        raise InputError(f"field must be shaped (g, g, g, k), got {values.shape}")
    return values.astype(np.float64)


def check_alternative(alternative: str) -> str:
    if alternative not in ALTERNATIVES:
        raise ParameterError(f"detect.alternative: must be one of {ALTERNATIVES}, got {alternative!r}")
    return alternative


def _vector_norm(diff: np.ndarray, norm: float, alternative: str = "two-sided") -> np.ndarray:
    if alternative == "greater":
        diff = np.maximum(diff, 0.0)
    return np.linalg.norm(diff, ord=np.inf if math.isinf(norm) else norm, axis=-1)


def cusum(
    field: Union[FeatureGrid, np.ndarray],
    window: ScanWindow,
    norm: Norm = "inf",
    alternative: str = "two-sided",
) -> float:
    """CUSUM statistic of a single window"""
    values = _field_array(field)
    g = values.shape[0]
    p = parse_norm(norm)
    check_alternative(alternative)
    if window.u >= g:
        raise ParameterError("a window covering the whole grid has an empty complement")
    n = g - window.u + 1
    if not all(1 <= v <= n for v in (window.a, window.b, window.c)):
        raise ParameterError(f"window {window} does not fit a grid of {g}")

    inside = np.zeros(values.shape[:3], dtype=bool)
    inside[window.slices()] = True
    diff = values[inside].mean(axis=0) - values[~inside].mean(axis=0)
    return float(_vector_norm(diff, p, alternative))


def cusum_all(
    field: Union[FeatureGrid, np.ndarray],
    u: int,
    norm: Norm = "inf",
    alternative: str = "two-sided",
) -> np.ndarray:
    """CUSUM of every window of side u, in enumerate_windows order

    Window sums come from a zero-padded 3-D prefix sum, so the cost is linear
    in the number of windows.
    """
    values = _field_array(field)
    g = values.shape[0]
    _check_window_size(g, u)
    if u == g:
        raise ParameterError("a window covering the whole grid has an empty complement")
    p = parse_norm(norm)
    check_alternative(alternative)

    # centring leaves T unchanged and keeps the prefix sums small
    values = values - values.mean(axis=(0, 1, 2))
    prefix = np.zeros((g + 1, g + 1, g + 1, values.shape[3]))
    prefix[1:, 1:, 1:] = values.cumsum(axis=0).cumsum(axis=1).cumsum(axis=2)

    n = g - u + 1
    lo = slice(0, n)
    hi = slice(u, u + n)
    inside_sum = (
        prefix[hi, hi, hi]
        - prefix[lo, hi, hi] - prefix[hi, lo, hi] - prefix[hi, hi, lo]
        + prefix[lo, lo, hi] + prefix[lo, hi, lo] + prefix[hi, lo, lo]
        - prefix[lo, lo, lo]
    )
    total = prefix[g, g, g]
    inside_count = u ** 3
    outside_count = g ** 3 - inside_count
    diff = inside_sum / inside_count - (total - inside_sum) / outside_count
    statistics = _vector_norm(diff, p, alternative)  # indexed [c, b, a]
    return statistics.transpose(2, 1, 0).ravel()


# ---------------------------------------------------------------------------
# Empirical null
# ---------------------------------------------------------------------------

@dataclass
class EmpiricalNull:
    """Sorted CUSUM values of a crack-free volume, with the settings they depend on"""
    values: np.ndarray
    g: int
    u: int
    norm: str = "inf"
    signature: Optional[str] = None
    alternative: str = "two-sided"

    def __post_init__(self):
        values = np.sort(np.asarray(self.values, dtype=np.float64))
        if values.size == 0:
            raise CalibrationError("empirical null is empty")
        if self.alternative not in ALTERNATIVES:
            raise CalibrationError(f"empirical null: unknown alternative {self.alternative!r}")
        self.values = values

    @property
    def size(self) -> int:
        return int(self.values.size)

    def metadata(self) -> dict:
        meta = asdict(self)
        meta.pop("values")
        meta["count"] = self.size
        return meta

    def check_compatible(
        self,
        g: int,
        u: int,
        norm: Norm,
        signature: Optional[str] = None,
        alternative: Optional[str] = None,
    ) -> None:
        """Raise CalibrationError unless the null was built for these settings"""
        problems = []
        if self.g != g:
            problems.append(f"g={self.g} (query {g})")
        if self.u != u:
            problems.append(f"u={self.u} (query {u})")
        if self.norm != norm_label(norm):
            problems.append(f"norm={self.norm} (query {norm_label(norm)})")
        if alternative is not None and self.alternative != alternative:
            problems.append(f"alternative={self.alternative} (query {alternative})")
        if signature is not None and self.signature is not None and self.signature != signature:
            problems.append("feature settings differ")
        if problems:
            raise CalibrationError("empirical null does not match this run: " + ", ".join(problems))

    def save(self, path: PathLike) -> Path:
        """CSV with a '# {json metadata}' first line"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            f.write("# " + json.dumps(self.metadata(), sort_keys=True) + "\n")
            writer = csv.writer(f)
            writer.writerow([NULL_HEADER])
            for value in self.values:
                writer.writerow([repr(float(value))])
        logger.debug(f"Saved empirical null ({self.size} values) to {path}")
        return path

    @classmethod
    def load(cls, path: PathLike) -> "EmpiricalNull":
        path = Path(path)
        try:
            with open(path, "r", newline="") as f:
                first = f.readline()
                rows = list(csv.reader(f))
        except OSError as e:
            raise CalibrationError(f"cannot read empirical null {path}: {e}") from e
        if not first.startswith("# "):
            raise CalibrationError(f"{path}: missing metadata header")
        try:
            meta = json.loads(first[2:])
            values = [float(row[0]) for row in rows[1:] if row]
            return cls(
                values=np.asarray(values),
                g=int(meta["g"]),
                u=int(meta["u"]),
                norm=str(meta.get("norm", "inf")),
                signature=meta.get("signature"),
                alternative=str(meta.get("alternative", "two-sided")),
            )
        except (ValueError, KeyError, IndexError) as e:
            raise CalibrationError(f"{path}: malformed empirical null ({e})") from e

    def histogram(self, bins: int = 30) -> Tuple[np.ndarray, np.ndarray]:
        counts, edges = np.histogram(self.values, bins=bins)
        return edges, counts

    def save_histogram(self, path: PathLike, bins: int = 30) -> Path:
        """Histogram rows (bin_left, bin_right, count)"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        edges, counts = self.histogram(bins)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["bin_left", "bin_right", "count"])
            for left, right, count in zip(edges[:-1], edges[1:], counts):
                writer.writerow([repr(float(left)), repr(float(right)), int(count)])
        return path


def build_null(
    field: Union[FeatureGrid, np.ndarray],
    u: int,
    norm: Norm = "inf",
    signature: Optional[str] = None,
    alternative: str = "two-sided",
) -> EmpiricalNull:
    """Empirical null from the feature field of a homogeneous volume"""
    values = cusum_all(field, u, norm, alternative)
    g = _field_array(field).shape[0]
    logger.info(f"Empirical null: {values.size} windows (g={g}, u={u}, {alternative})")
    return EmpiricalNull(
        values=values, g=g, u=u, norm=norm_label(norm), signature=signature, alternative=alternative
    )


def p_values(statistics: Iterable[float], null: EmpiricalNull, add_one: bool = False) -> np.ndarray:
    """1 - F(T) with the right-continuous ECDF; add_one gives (1 + #{null >= T}) / (n + 1)"""
    if not isinstance(statistics, np.ndarray):
        statistics = list(statistics)
    statistics = np.asarray(statistics, dtype=np.float64)
    n = null.size
    if add_one:
        at_least = n - np.searchsorted(null.values, statistics, side="left")
        return (1.0 + at_least) / (n + 1.0)
    at_most = np.searchsorted(null.values, statistics, side="right")
    return 1.0 - at_most / n


def p_value(statistic: float, null: EmpiricalNull, add_one: bool = False) -> float:
    return float(p_values(np.array([statistic]), null, add_one=add_one)[0])


# ---------------------------------------------------------------------------
# Multiple testing
# ---------------------------------------------------------------------------

def check_alpha(alpha: float, field_name: str = "detect.alpha") -> float:
    if not 0 < alpha < 1:
        raise ParameterError(f"{field_name}: must lie in (0, 1), got {alpha}")
    return float(alpha)


def benjamini_hochberg(pvals: Sequence[float], alpha: float) -> np.ndarray:
    """Step-up rejection flags, in the order of the input p-values"""
    check_alpha(alpha)
    pvals = np.asarray(pvals, dtype=np.float64)
    m = pvals.size
    flags = np.zeros(m, dtype=bool)
    if m == 0:
        return flags
    if np.any(~np.isfinite(pvals)) or pvals.min() < 0 or pvals.max() > 1:
        raise ParameterError("p-values must lie in [0, 1]")

    order = np.argsort(pvals, kind="stable")
    critical = alpha * np.arange(1, m + 1) / m
    passing = np.nonzero(pvals[order] <= critical)[0]
    if passing.size:
        k = passing[-1] + 1
        flags[order[:k]] = True
    return flags


def aggregate(decisions: Sequence[int], g: int, u: int) -> BinaryVolume:
    """Flag each cube whose containing windows vote sum(+1/-1) >= 0"""
    _check_window_size(g, u)
    n = g - u + 1
    decisions = np.asarray(decisions, dtype=np.int64)
    if decisions.size != n ** 3:
        raise InputError(f"expected {n ** 3} window decisions for g={g}, u={u}, got {decisions.size}")

    by_anchor = decisions.reshape(n, n, n).transpose(2, 1, 0)  # [c, b, a]
    votes = np.zeros((g, g, g), dtype=np.int64)
    for dz in range(u):
        for dy in range(u):
            for dx in range(u):
                votes[dz:dz + n, dy:dy + n, dx:dx + n] += by_anchor
    return BinaryVolume(votes >= 0)


@dataclass
class TestReport:
    """Per-window statistics and decisions at one level alpha, with the cube mask"""
    g: int
    u: int
    alpha: float
    anchors: np.ndarray
    statistics: np.ndarray
    pvalues: np.ndarray
    decisions: np.ndarray
    cubes: BinaryVolume

    __test__ = False

    @property
    def rejected(self) -> int:
        return int(np.count_nonzero(self.decisions > 0))

    @property
    def flagged(self) -> int:
        return self.cubes.count()

    def to_csv(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(REPORT_FIELDS)
            for (a, b, c), t, p, d in zip(self.anchors, self.statistics, self.pvalues, self.decisions):
                writer.writerow([int(a), int(b), int(c), self.u, repr(float(t)), repr(float(p)), int(d)])
        return path


def scan(
    field: Union[FeatureGrid, np.ndarray],
    null: EmpiricalNull,
    alphas: Sequence[float],
    u: int,
    norm: Norm = "inf",
    add_one: bool = False,
    signature: Optional[str] = None,
    alternative: Optional[str] = None,
) -> List[TestReport]:
    """Test every window once and decide at each alpha

    alternative=None scores windows the way the null was built.
    """
    values = _field_array(field)
    g = values.shape[0]
    null.check_compatible(g, u, norm, signature, alternative)
    alternative = alternative or null.alternative
    for alpha in alphas:
        check_alpha(alpha)

    statistics = cusum_all(values, u, norm, alternative)
    pvals = p_values(statistics, null, add_one=add_one)
    anchors = window_anchors(g, u)

    reports = []
    for alpha in alphas:
        rejected = benjamini_hochberg(pvals, alpha)
        decisions = np.where(rejected, 1, -1).astype(np.int8)
        cubes = aggregate(decisions, g, u)
        logger.info(
            f"alpha={alpha}: {int(rejected.sum())} of {rejected.size} windows rejected, "
            f"{cubes.count()} cubes flagged"
        )
        reports.append(TestReport(g, u, float(alpha), anchors, statistics, pvals, decisions, cubes))
    return reports
