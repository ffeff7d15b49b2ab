"""Vehicle boxes in roadway coordinates and their bird's-eye footprint overlap.

Roadway frame: ``x`` runs along the road (feet), ``y`` is lateral (feet), ``z`` is
height above the road plane. Eastbound (EB) traffic moves toward +x and occupies
``y > 0``; westbound (WB) traffic moves toward -x and occupies ``y < 0``, so the
median is the line ``y = 0``.

A box is anchored at its rear-bottom-center. Its footprint is
``[x, x + l]`` (EB) or ``[x - l, x]`` (WB) along the road and ``[y - w/2, y + w/2]``
across it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ValidationError

DIRECTIONS = ("EB", "WB")
VEHICLE_CLASSES = ("sedan", "midsize", "van", "pickup", "semi", "truck")


def heading(direction: str) -> int:
    """+1 for EB, -1 for WB."""
    if direction == "EB":
        return 1
    if direction == "WB":
        return -1
    raise ValidationError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    l: float
    w: float
    h: float
    direction: str = "EB"
    cls: str = "sedan"

    def __post_init__(self):
        heading(self.direction)
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValidationError(f"box dimensions must be positive, got {(self.l, self.w, self.h)}")
        if self.cls not in VEHICLE_CLASSES:
            raise ValidationError(f"unknown vehicle class {self.cls!r}")

    @property
    def dims(self) -> tuple[float, float, float]:
        return (self.l, self.w, self.h)

    def moved(self, x: float, y: float) -> "Box3D":
        return replace(self, x=float(x), y=float(y))

    def footprint(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the bird's-eye rectangle."""
        return footprint(self.x, self.y, self.l, self.w, heading(self.direction))

    def corners(self) -> np.ndarray:
        """The 8 corners as an (8, 3) array.

        Order: rear-bottom-left, rear-bottom-right, front-bottom-right,
        front-bottom-left, then the four top corners in the same order. Left and
        right are relative to the direction of travel.
        """
        s = heading(self.direction)
        rear, front = self.x, self.x + s * self.l
        left, right = self.y + s * self.w / 2, self.y - s * self.w / 2
        bottom = np.array(
            [[rear, left, 0.0], [rear, right, 0.0], [front, right, 0.0], [front, left, 0.0]]
        )
        top = bottom.copy()
        top[:, 2] = self.h
        return np.vstack([bottom, top])


def corners_array(boxes) -> np.ndarray:
    """(n, 8, 3) corners of many boxes, in :meth:`Box3D.corners` order."""
    boxes = list(boxes)
    if not boxes:
        return np.zeros((0, 8, 3))
    x, y, l, w, h = np.array([[b.x, b.y, b.l, b.w, b.h] for b in boxes], dtype=float).T
    s = np.array([heading(b.direction) for b in boxes], dtype=float)
    rear, front = x, x + s * l
    left, right = y + s * w / 2, y - s * w / 2
    xs = np.stack([rear, rear, front, front] * 2, axis=1)
    ys = np.stack([left, right, right, left] * 2, axis=1)
    zs = np.concatenate([np.zeros((len(x), 4)), np.repeat(h[:, None], 4, axis=1)], axis=1)
    return np.stack([xs, ys, zs], axis=-1)


def footprint(x, y, l, w, s):
    """Vectorised footprint bounds; ``s`` is the heading sign (+1/-1)."""
    x = np.asarray(x, dtype=float)
    far = x + np.asarray(s) * np.asarray(l)
    x0 = np.minimum(x, far)
    x1 = np.maximum(x, far)
    half = np.asarray(w, dtype=float) / 2
    y = np.asarray(y, dtype=float)
    return x0, x1, y - half, y + half


def iou_bev(a: Box3D, b: Box3D) -> float:
    """Intersection-over-union of the two bird's-eye footprints."""
    ax0, ax1, ay0, ay1 = a.footprint()
    bx0, bx1, by0, by1 = b.footprint()
    ix = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    iy = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return float(min(1.0, inter / union))


def boxes_to_array(boxes) -> np.ndarray:
    """Stack boxes into an (n, 5) array of x, y, l, w, heading sign."""
    if len(boxes) == 0:
        return np.zeros((0, 5))
    return np.array([[b.x, b.y, b.l, b.w, heading(b.direction)] for b in boxes], dtype=float)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise footprint IOU between rows of two (n, 5) box arrays.

    Either argument may also be an (n, m, 5) array of per-pair boxes, in which
    case broadcasting applies element-wise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 2 and b.ndim == 2:
        a = a[:, None, :]
        b = b[None, :, :]
    ax0, ax1, ay0, ay1 = footprint(a[..., 0], a[..., 1], a[..., 2], a[..., 3], a[..., 4])
    bx0, bx1, by0, by1 = footprint(b[..., 0], b[..., 1], b[..., 2], b[..., 3], b[..., 4])
    ix = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0, None)
    iy = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0, None)
    inter = ix * iy
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    out = np.zeros(np.broadcast(inter, union).shape)
    np.divide(inter, union, out=out, where=inter > 0)
    return np.minimum(out, 1.0)


def greedy_nms(iou: np.ndarray, scores: np.ndarray, threshold: float) -> np.ndarray:
    """Indices kept by greedy suppression (descending score, ties by input order)."""
    order = np.argsort(-scores, kind="stable")
    keep = []
    suppressed = np.zeros(len(scores), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= iou[i] > threshold
    return np.array(sorted(keep), dtype=int)


@dataclass(frozen=True)
class Detection:
    """A detector output in roadway coordinates. ``source`` is the true vehicle id when known."""

    box: Box3D
    confidence: float = 1.0
    camera: str = ""
    t: float = 0.0
    source: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence must lie in [0, 1], got {self.confidence}")
