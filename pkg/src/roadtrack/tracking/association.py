"""Track-to-detection assignment by bird's-eye IOU."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..boxes import Box3D, Detection, boxes_to_array, iou_matrix
from ..exceptions import ValidationError

BYTE_HIGH = 0.3
BYTE_LOW = 0.01


def _box(item) -> Box3D:
    if isinstance(item, Box3D):
        return item
    return item.box


@dataclass(frozen=True)
class Association:
    matches: list  # (track index, detection index)
    unmatched_tracks: list
    unmatched_detections: list  # eligible to spawn new tracks
    discarded: list = ()  # detections that neither matched nor may spawn


def _check_direction(tracks, dets):
    dirs = {_box(o).direction for o in list(tracks) + list(dets)}
    if len(dirs) > 1:
        raise ValidationError("association needs a single direction")


def _solve(iou: np.ndarray, min_iou: float):
    """Maximum-total-IOU matching restricted to pairs with IOU >= ``min_iou``."""
    if iou.size == 0:
        return []
    weight = np.where(iou >= min_iou, iou, 0.0)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if iou[r, c] >= min_iou and iou[r, c] > 0]


def associate_kiou(tracks: Sequence, detections: Sequence, min_iou: float = 0.1) -> Association:
    """Optimal one-to-one matching of predicted track boxes to detections.

    Items may be :class:`Box3D` or anything with a ``box`` attribute.
    """
    _check_direction(tracks, detections)
    iou = iou_matrix(boxes_to_array([_box(t) for t in tracks]), boxes_to_array([_box(d) for d in detections]))
    iou = iou.reshape(len(tracks), len(detections))
    matches = _solve(iou, min_iou)
    mt = {m[0] for m in matches}
    md = {m[1] for m in matches}
    return Association(
        matches,
        [i for i in range(len(tracks)) if i not in mt],
        [j for j in range(len(detections)) if j not in md],
    )


def associate_byte(
    tracks: Sequence,
    detections: Sequence[Detection],
    min_iou: float = 0.1,
    high: float = BYTE_HIGH,
    low: float = BYTE_LOW,
) -> Association:
    """Two-stage matching: high-confidence detections first, then the low band for leftover tracks.

    Detections with confidence above ``high`` are matched first and, if left
    over, may spawn tracks. Those in ``[low, high]`` only extend existing
    tracks. Anything below ``low`` is discarded.
    """
    if not 0 <= low <= high <= 1:
        raise ValidationError("need 0 <= low <= high <= 1")
    _check_direction(tracks, detections)
    conf = np.array([d.confidence for d in detections], dtype=float)
    hi_idx = np.flatnonzero(conf > high)
    lo_idx = np.flatnonzero((conf >= low) & (conf <= high))
    first = associate_kiou(tracks, [detections[j] for j in hi_idx], min_iou)
    matches = [(t, int(hi_idx[d])) for t, d in first.matches]
    rest = first.unmatched_tracks
    second = associate_kiou([tracks[i] for i in rest], [detections[j] for j in lo_idx], min_iou)
    matches += [(rest[t], int(lo_idx[d])) for t, d in second.matches]
    used = {d for _, d in matches}
    unmatched_tracks = [rest[t] for t in second.unmatched_tracks]
    spawn = [int(hi_idx[d]) for d in first.unmatched_detections]
    discarded = [j for j in range(len(detections)) if j not in used and j not in set(spawn)]
    return Association(sorted(matches), unmatched_tracks, spawn, discarded)
