"""Detection quality metrics: rotated-box IoU, greedy matching, PR curves
and all-point average precision on planar oriented boxes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class Detection:
    """BEV oriented box: planar center, yaw, (length, width), confidence."""

    center: tuple[float, float]
    yaw: float
    extent: tuple[float, float]
    score: float = 1.0

    def __post_init__(self):
        if min(self.extent) <= 0:
            raise ValueError("box extent must be positive")

    def corners(self) -> np.ndarray:
        """(4, 2) corner coordinates in CCW order."""
        l2, w2 = self.extent[0] / 2.0, self.extent[1] / 2.0
        local = np.array([[l2, w2], [-l2, w2], [-l2, -w2], [l2, -w2]])
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon (absolute value)."""
    p = np.asarray(poly, dtype=np.float64)
    if p.shape[0] < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def _cross2(a: np.ndarray, b: np.ndarray) -> float:
    return a[0] * b[1] - a[1] * b[0]


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of `subject` against a convex CCW `clipper`."""
    output = [np.asarray(p, dtype=np.float64) for p in subject]
    clipper = np.asarray(clipper, dtype=np.float64)
    n = clipper.shape[0]
    for i in range(n):
        if not output:
            break
        a, b = clipper[i], clipper[(i + 1) % n]
        edge = b - a
        inputs, output = output, []
        prev = inputs[-1]
        prev_in = _cross2(edge, prev - a) >= 0
        for cur in inputs:
            cur_in = _cross2(edge, cur - a) >= 0
            if cur_in != prev_in:
                denom = _cross2(edge, cur - prev)
                t = _cross2(edge, a - prev) / denom
                output.append(prev + t * (cur - prev))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output) if output else np.zeros((0, 2))


def rotated_iou(a: Detection, b: Detection) -> float:
    """Intersection-over-union of two oriented rectangles."""
    ca, cb = a.corners(), b.corners()
    inter = polygon_area(clip_polygon(ca, cb))
    area_a = a.extent[0] * a.extent[1]
    area_b = b.extent[0] * b.extent[1]
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def _by_descending_score(dets: Sequence[Detection]) -> list[int]:
    # Stable sort keeps insertion order among score ties (documented).
    scores = np.array([d.score for d in dets])
    return list(np.argsort(-scores, kind="stable"))


def match_detections(
    dets: Sequence[Detection], gts: Sequence[Detection], iou_thresh: float
):
    """Greedy matching in descending score order; each gt is used once.

    Returns (tp flags aligned with the sorted order, sorted order indices).
    """
    order = _by_descending_score(dets)
    taken = [False] * len(gts)
    tp = np.zeros(len(dets), dtype=bool)
    for rank, di in enumerate(order):
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            iou = rotated_iou(dets[di], gt)
            if iou >= iou_thresh and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            taken[best_j] = True
            tp[rank] = True
    return tp, order


def pr_curve(
    dets: Sequence[Detection], gts: Sequence[Detection], iou_thresh: float
) -> list[tuple[float, float]]:
    """(recall, precision) after each detection, descending score."""
    if not dets or not gts:
        return []
    tp, _ = match_detections(dets, gts, iou_thresh)
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(dets) + 1)
    recall = cum_tp / len(gts)
    precision = cum_tp / ranks
    return list(zip(recall.tolist(), precision.tolist()))


def average_precision(
    dets: Sequence[Detection], gts: Sequence[Detection], iou_thresh: float
) -> float:
    """Area under the precision envelope over recall (all-point)."""
    if not (0.0 < iou_thresh < 1.0):
        raise ValueError("iou_thresh must lie in (0, 1)")
    if not gts or not dets:
        return 0.0
    curve = pr_curve(dets, gts, iou_thresh)
    recall = np.array([r for r, _ in curve])
    precision = np.array([p for _, p in curve])
    # Precision envelope: best precision achievable at recall >= r.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, envelope):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def recall_at(
    dets: Sequence[Detection], gts: Sequence[Detection], iou_thresh: float
) -> float:
    """Fraction of ground-truth boxes matched by any detection."""
    if not gts:
        return 0.0
    if not dets:
        return 0.0
    tp, _ = match_detections(dets, gts, iou_thresh)
    return float(tp.sum() / len(gts))
