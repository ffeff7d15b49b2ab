"""Per-lane time-space series of matched, missed and false boxes."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .alignment import AlignedFrames
from .clearmot import FrameMatches

LANE_WIDTH = 12.0


def lane_index(y: float, lane_width: float = LANE_WIDTH) -> int:
    """1-based lane counted outward from the median: ``floor(|y| / width) + 1``."""
    return int(math.floor(abs(y) / lane_width)) + 1


@dataclass(frozen=True)
class TimeSpacePoint:
    direction: str
    lane: int
    t: float
    x: float
    status: str  # TP, FP or FN
    object_id: object


def emit_timespace(frames: AlignedFrames, matches: FrameMatches, lane_width: float = LANE_WIDTH) -> list[TimeSpacePoint]:
    """Matched boxes at their ground-truth position; misses and false positives at their own."""
    out = []
    for k, t in enumerate(frames.times):
        gpos = {g: i for i, g in enumerate(frames.gt_ids[k])}
        ppos = {p: i for i, p in enumerate(frames.pred_ids[k])}
        rows = [(g, "TP", True) for g, _, _ in matches.matches[k]]
        rows += [(g, "FN", True) for g in matches.missed[k]]
        rows += [(p, "FP", False) for p in matches.false[k]]
        for oid, status, is_gt in rows:
            box = frames.gt_boxes[k][gpos[oid]] if is_gt else frames.pred_boxes[k][ppos[oid]]
            direction = "EB" if box[4] > 0 else "WB"
            out.append(TimeSpacePoint(direction, lane_index(box[1], lane_width), float(t), float(box[0]), status, oid))
    out.sort(key=lambda p: (p.direction, p.lane, p.t, p.status, str(p.object_id)))
    return out
