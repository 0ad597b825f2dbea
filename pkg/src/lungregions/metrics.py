"""Evaluation statistics: Dice, box IoU, average precision, Pearson
correlation and the paired t-test, plus the RALE correlation join."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import betainc

from .landmarks import LANDMARKS, Detection
from .raster import REGION_CODES, REGION_NAMES, Box, as_binary_mask, check_same_shape

logger = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 0.05
SCORE_KINDS = ("extent", "density")
EXTENT_RANGE = (0, 4)
DENSITY_RANGE = (0, 3)


class UndefinedCorrelation(ValueError):
    pass


# --- overlap --------------------------------------------------------------

def dice(a, b) -> float:
    """2|a & b| / (|a| + |b|); two empty masks score 1.0."""
    a = as_binary_mask(a, "a")
    b = as_binary_mask(b, "b")
    check_same_shape(a, b, names=("a", "b"))
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def box_iou(a: Box, b: Box) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# --- detection ------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    landmark: str
    box: Box


def precision_recall(
    predictions: Sequence[Detection],
    ground_truth: Sequence[GroundTruthBox],
    iou_threshold: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative precision and recall after each prediction, in descending
    confidence order (stable for equal confidences).

    Each prediction is matched to the unmatched ground-truth box of the same
    image and class with the highest IoU at or above the threshold.
    """
    if not 0 < iou_threshold <= 1:
        raise ValueError("iou_threshold must lie in (0, 1]")
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i].confidence)
    unmatched: dict[tuple[str, str], list[Box]] = {}
    for gt in ground_truth:
        unmatched.setdefault((gt.image_id, gt.landmark), []).append(gt.box)

    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = predictions[i]
        pool = unmatched.get((det.image_id, det.landmark), [])
        best, best_iou = None, -1.0
        for j, gt_box in enumerate(pool):
            iou = box_iou(det.box, gt_box)
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = j, iou
        if best is not None:
            pool.pop(best)
            tp[rank] = 1.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(order) + 1)
    recall = ctp / len(ground_truth) if ground_truth else np.zeros_like(ctp)
    return precision, recall


def average_precision(
    predictions: Sequence[Detection],
    ground_truth: Sequence[GroundTruthBox],
    iou_threshold: float = 0.5,
) -> float:
    """All-point interpolated AP: area under the precision envelope."""
    if not ground_truth:
        raise ValueError("average precision is undefined without ground truth")
    precision, recall = precision_recall(predictions, ground_truth, iou_threshold)
    if len(precision) == 0:
        return 0.0
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_average_precision(
    predictions: Sequence[Detection],
    ground_truth: Sequence[GroundTruthBox],
    iou_threshold: float = 0.5,
    classes: Sequence[str] = LANDMARKS,
) -> tuple[dict[str, float | None], float]:
    """Per-class AP and their unweighted mean.

    Classes without ground truth get ``None`` and are left out of the mean.
    """
    per_class: dict[str, float | None] = {}
    for cls in classes:
        gts = [g for g in ground_truth if g.landmark == cls]
        if not gts:
            warnings.warn(f"no ground truth for class {cls!r}; AP excluded from mAP", stacklevel=2)
            per_class[cls] = None
            continue
        preds = [p for p in predictions if p.landmark == cls]
        per_class[cls] = average_precision(preds, gts, iou_threshold)
    defined = [v for v in per_class.values() if v is not None]
    if not defined:
        raise ValueError("no class has ground truth")
    return per_class, float(np.mean(defined))


# --- statistics -----------------------------------------------------------

def _t_tail(df: float, x: float, y: float) -> float:
    """Two-sided Student-t tail from x = df/(df+t^2) and y = 1 - x.

    Near p = 1 (tiny |t|) the complementary form I_y(1/2, df/2) keeps the
    precision that I_x(df/2, 1/2) loses when x rounds to 1.
    """
    if x < 0.5:
        p = float(betainc(df / 2.0, 0.5, x))
    else:
        p = 1.0 - float(betainc(0.5, df / 2.0, y))
    return min(1.0, max(0.0, p))


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom, via the
    regularized incomplete beta function."""
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return _t_tail(df, df / (df + t2), t2 / (df + t2))


def pearson(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Pearson r and its two-sided p-value (t-test with n-2 dof)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1D sequences of equal length")
    n = len(x)
    if n < 3:
        raise ValueError(f"pearson needs at least 3 samples, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("correlation undefined for a constant input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    # t^2 = df r^2 / (1 - r^2)  =>  df / (df + t^2) = 1 - r^2
    return r, _t_tail(df, 1.0 - r * r, r * r)


@dataclass(frozen=True)
class PairedTTest:
    t: float
    p_value: float
    df: int
    degenerate: bool = False  # all differences equal and nonzero

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> PairedTTest:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1D sequences of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return PairedTTest(0.0, 1.0, n - 1)
        return PairedTTest(math.copysign(math.inf, mean), 0.0, n - 1, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return PairedTTest(t, student_t_two_sided_p(t, n - 1), n - 1)


# --- RALE correlation -----------------------------------------------------

@dataclass(frozen=True)
class RaleRecord:
    image_id: str
    region: str
    extent: int
    density: int

    def __post_init__(self):
        if self.region not in REGION_CODES:
            raise ValueError(f"unknown region {self.region!r}")
        if not EXTENT_RANGE[0] <= self.extent <= EXTENT_RANGE[1]:
            raise ValueError(f"extent {self.extent} outside 0..4")
        if not DENSITY_RANGE[0] <= self.density <= DENSITY_RANGE[1]:
            raise ValueError(f"density {self.density} outside 0..3")


@dataclass(frozen=True)
class CorrelationResult:
    region: str
    score_kind: str
    r: float | None
    p_value: float | None
    n: int
    error: str | None = None

    def to_json(self) -> dict:
        out = {"region": self.region, "score_kind": self.score_kind, "r": self.r, "p": self.p_value, "n": self.n}
        if self.error is not None:
            out["error"] = self.error
        return out


def rale_totals(scores: Iterable[RaleRecord]) -> dict[str, int]:
    """Per-image RALE total: sum over regions of extent x density."""
    totals: dict[str, int] = {}
    for s in scores:
        totals[s.image_id] = totals.get(s.image_id, 0) + s.extent * s.density
    return totals


def join_scores(stats, scores: Sequence[RaleRecord], filter_positive_total: bool = True):
    """Yield (region, mean_normalized_intensity, RaleRecord) for every
    (image, region) present on both sides with a defined mean."""
    totals = rale_totals(scores)
    by_key = {(s.image_id, s.region): s for s in scores}
    for st in stats:
        if filter_positive_total and totals.get(st.image_id, 0) <= 0:
            continue
        for region, value in st.regions.items():
            rec = by_key.get((st.image_id, region))
            if rec is None or value.mean_normalized_intensity is None:
                continue
            yield region, value.mean_normalized_intensity, rec


def correlate_rale(stats, scores: Sequence[RaleRecord], filter_positive_total: bool = True) -> list[CorrelationResult]:
    """Pearson correlation of regional mean intensity with extent and density.

    Returns one result per region and score kind (8 cells). A cell whose
    correlation cannot be computed carries ``r=None`` and an ``error``.
    """
    cells: dict[tuple[str, str], tuple[list, list]] = {
        (region, kind): ([], []) for region in REGION_NAMES.values() for kind in SCORE_KINDS
    }
    for region, mean, rec in join_scores(stats, scores, filter_positive_total):
        for kind in SCORE_KINDS:
            xs, ys = cells[(region, kind)]
            xs.append(mean)
            ys.append(getattr(rec, kind))

    results = []
    for (region, kind), (xs, ys) in cells.items():
        n = len(xs)
        if n < 3:
            results.append(CorrelationResult(region, kind, None, None, n, f"only {n} joined samples"))
            continue
        try:
            r, p = pearson(xs, ys)
        except UndefinedCorrelation as exc:
            results.append(CorrelationResult(region, kind, None, None, n, str(exc)))
            continue
        results.append(CorrelationResult(region, kind, r, p, n))
    return results


def read_rale_csv(path) -> list[RaleRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"image_id", "region", "extent", "density"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [RaleRecord(row["image_id"], row["region"], int(row["extent"]), int(row["density"])) for row in reader]


def write_rale_csv(records: Iterable[RaleRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id", "region", "extent", "density"])
        for r in records:
            writer.writerow([r.image_id, r.region, r.extent, r.density])
