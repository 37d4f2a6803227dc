"""Segmentation container and the four evaluation metrics.

Predicted and ground-truth segments are matched by a Hungarian assignment
maximizing total IoU; unmatched ground-truth segments score zero in the
IoU-style metrics and are skipped (with a count) in the residual metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .bspline import BSplinePatch
from .primitives import PrimitiveType, distance_point_primitive


@dataclass
class Segmentation:
    labels: np.ndarray  # (n,) ints in [0, K)
    segment_types: list  # K PrimitiveType
    segment_params: list  # K arrays (22,) or None
    patches: list = field(default_factory=list)  # K BSplinePatch or None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        K = len(self.segment_types)
        if len(self.segment_params) != K:
            raise ValueError("one parameter vector (or None) per segment required")
        if not self.patches:
            self.patches = [None] * K
        if len(self.patches) != K:
            raise ValueError("patch list must align with segments")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= K):
            raise ValueError("labels must lie in [0, K)")
        self.segment_types = [PrimitiveType(t) for t in self.segment_types]

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def K(self) -> int:
        return len(self.segment_types)

    def segment_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def _iou_matrix(gt: Segmentation, pred: Segmentation) -> np.ndarray:
    Kg, Kp = gt.K, pred.K
    conf = np.zeros((Kg, Kp), dtype=np.int64)
    np.add.at(conf, (gt.labels, pred.labels), 1)
    cg = conf.sum(axis=1, keepdims=True)
    cp = conf.sum(axis=0, keepdims=True)
    union = cg + cp - conf
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, conf / union, 0.0)
    return iou


def match_segments(pred: Segmentation, gt: Segmentation) -> list:
    """Hungarian matching on the GT-vs-pred IoU matrix.

    Returns one (gt_k, pred_k or None) pair per GT segment; zero-IoU
    assignments count as unmatched.
    """
    if pred.n != gt.n:
        raise ValueError("segmentations must label the same points")
    iou = _iou_matrix(gt, pred)
    rows, cols = linear_sum_assignment(-iou)
    chosen = {int(r): int(c) for r, c in zip(rows, cols) if iou[r, c] > 0}
    return [(k, chosen.get(k)) for k in range(gt.K)]


def seg_iou(pred: Segmentation, gt: Segmentation, assignment=None) -> float:
    """Mean over GT segments of IoU with the matched prediction."""
    if assignment is None:
        assignment = match_segments(pred, gt)
    iou = _iou_matrix(gt, pred)
    total = sum(iou[k, p] for k, p in assignment if p is not None)
    return float(total / gt.K)


def type_iou(pred: Segmentation, gt: Segmentation, assignment=None) -> float:
    """Fraction of GT segments whose matched prediction has the right type."""
    if assignment is None:
        assignment = match_segments(pred, gt)
    hits = sum(
        1 for k, p in assignment if p is not None and pred.segment_types[p] == gt.segment_types[k]
    )
    return float(hits / gt.K)


def _segment_distance(points: np.ndarray, seg: Segmentation, k: int) -> np.ndarray:
    return distance_point_primitive(
        points, seg.segment_types[k], params=seg.segment_params[k], patch=seg.patches[k]
    )


def res_error(
    pred: Segmentation,
    gt_surfaces: list,
    assignment,
    samples_per_patch: int = 512,
    seed: int = 0,
) -> float:
    """Sum over matched GT segments of the mean sample-to-prediction distance.

    ``gt_surfaces`` holds one entry per GT segment: either a pre-sampled
    (M, 3) array or a callable ``sampler(M, rng) -> (M, 3)`` drawing from
    the true surface patch.  Unmatched segments are skipped.
    """
    rng = np.random.default_rng(seed)
    total = 0.0
    for k, p in assignment:
        if p is None:
            continue
        surf = gt_surfaces[k]
        pts = surf(samples_per_patch, rng) if callable(surf) else np.asarray(surf, dtype=np.float64)
        d = _segment_distance(pts, pred, p)
        total += float(np.mean(np.abs(d)))
    return total


def p_coverage(points: np.ndarray, pred: Segmentation, epsilon: float = 0.01) -> float:
    """Fraction of points within epsilon of the nearest predicted surface."""
    if pred.K < 1:
        raise ValueError("need at least one predicted primitive")
    P = np.asarray(points, dtype=np.float64)
    best = np.full(P.shape[0], np.inf)
    for k in range(pred.K):
        best = np.minimum(best, np.abs(_segment_distance(P, pred, k)))
    return float(np.mean(best < epsilon))


@dataclass
class MetricsReport:
    seg_iou: float
    type_iou: float
    res_error: float | None
    p_coverage: float
    per_segment: list
    unmatched_gt: int
    n: int

    def to_dict(self) -> dict:
        return {
            "seg_iou": self.seg_iou,
            "type_iou": self.type_iou,
            "res_error": self.res_error,
            "p_coverage": self.p_coverage,
            "unmatched_gt": self.unmatched_gt,
            "n": self.n,
            "per_segment": self.per_segment,
        }


def compute_metrics_report(
    pred: Segmentation,
    gt: Segmentation,
    points: np.ndarray,
    gt_surfaces: list | None = None,
    epsilon: float = 0.01,
    samples_per_patch: int = 512,
    seed: int = 0,
) -> MetricsReport:
    assignment = match_segments(pred, gt)
    iou = _iou_matrix(gt, pred)
    rows = []
    for k, p in assignment:
        rows.append(
            {
                "gt_segment": k,
                "pred_segment": p,
                "iou": float(iou[k, p]) if p is not None else 0.0,
                "gt_type": gt.segment_types[k].label,
                "pred_type": pred.segment_types[p].label if p is not None else None,
                "type_match": bool(
                    p is not None and pred.segment_types[p] == gt.segment_types[k]
                ),
            }
        )
    re = (
        res_error(pred, gt_surfaces, assignment, samples_per_patch, seed)
        if gt_surfaces is not None
        else None
    )
    return MetricsReport(
        seg_iou=seg_iou(pred, gt, assignment),
        type_iou=type_iou(pred, gt, assignment),
        res_error=re,
        p_coverage=p_coverage(points, pred, epsilon),
        per_segment=rows,
        unmatched_gt=sum(1 for _, p in assignment if p is None),
        n=pred.n,
    )


def format_metrics_table(report: MetricsReport) -> str:
    """Aligned plain-text rendering of a metrics report."""
    lines = [
        f"{'metric':<12}{'value':>10}",
        f"{'seg_iou':<12}{report.seg_iou:>10.4f}",
        f"{'type_iou':<12}{report.type_iou:>10.4f}",
        f"{'res_error':<12}"
        + (f"{report.res_error:>10.4f}" if report.res_error is not None else f"{'n/a':>10}"),
        f"{'p_coverage':<12}{report.p_coverage:>10.4f}",
        "",
        f"{'gt':>4} {'pred':>5} {'iou':>7} {'gt_type':<16}{'pred_type':<16}{'type_ok':<7}",
    ]
    for row in report.per_segment:
        pred_seg = row["pred_segment"]
        lines.append(
            f"{row['gt_segment']:>4} "
            + (f"{pred_seg:>5}" if pred_seg is not None else f"{'-':>5}")
            + f" {row['iou']:>7.4f} {row['gt_type']:<16}"
            + f"{row['pred_type'] or '-':<16}{'yes' if row['type_match'] else 'no':<7}"
        )
    if report.unmatched_gt:
        lines.append(f"unmatched gt segments: {report.unmatched_gt}")
    return "\n".join(lines)
