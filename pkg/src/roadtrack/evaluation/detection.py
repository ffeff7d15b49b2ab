"""Bird's-eye average precision of a detector against ground-truth boxes."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from ..boxes import Box3D, boxes_to_array, iou_matrix

AP_THRESHOLDS = (0.3, 0.5, 0.7)


@dataclass(frozen=True, eq=False)
class PRCurve:
    threshold: float
    ap: float
    precision: np.ndarray  # after each ranked detection
    recall: np.ndarray


def _ap_all_points(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the monotone precision envelope (all-point interpolation)."""
    if len(precision) == 0:
        return 0.0
    r = np.concatenate([[0.0], recall, [1.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    p = np.maximum.accumulate(p[::-1])[::-1]
    steps = np.flatnonzero(r[1:] != r[:-1]) + 1
    return float(np.sum((r[steps] - r[steps - 1]) * p[steps]))


def average_precision(
    detections: Sequence[tuple[Hashable, Box3D, float]],
    ground_truth: Sequence[tuple[Hashable, Box3D]],
    thresholds: Sequence[float] = AP_THRESHOLDS,
) -> dict[float, PRCurve]:
    """VOC-style AP per IOU threshold.

    ``detections`` are ``(frame key, box, confidence)``; ``ground_truth`` are
    ``(frame key, box)``. Detections are ranked by confidence (stable for
    ties) and each takes its best-overlapping ground truth in the same frame;
    a second claim on an already matched ground truth counts as a false
    positive.
    """
    gt_by_frame: dict = defaultdict(list)
    for key, box in ground_truth:
        gt_by_frame[key].append(box)
    gt_arr = {k: boxes_to_array(v) for k, v in gt_by_frame.items()}
    order = sorted(range(len(detections)), key=lambda i: -detections[i][2])
    best = []
    for i in order:
        key, box, _ = detections[i]
        if key not in gt_arr:
            best.append((key, -1, 0.0))
            continue
        iou = iou_matrix(boxes_to_array([box]), gt_arr[key])[0]
        j = int(np.argmax(iou))
        best.append((key, j, float(iou[j])))
    n_gt = len(ground_truth)
    out = {}
    for thr in thresholds:
        used = set()
        tp = np.zeros(len(order))
        for r, (key, j, iou) in enumerate(best):
            if j >= 0 and iou >= thr and (key, j) not in used:
                used.add((key, j))
                tp[r] = 1
        ctp = np.cumsum(tp)
        precision = ctp / np.arange(1, len(order) + 1) if len(order) else np.zeros(0)
        recall = ctp / n_gt if n_gt else np.zeros(len(order))
        out[float(thr)] = PRCurve(float(thr), _ap_all_points(precision, recall) if n_gt else 0.0, precision, recall)
    return out
