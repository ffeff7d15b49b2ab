"""Agreement between cameras that annotate the same vehicle at the same time."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..exceptions import ValidationError, ZeroDistance
from ..geometry import CameraTransform

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CrossCameraPairs:
    """Matched positions: camera ``a``'s annotation at ``t`` against camera ``b`` interpolated to ``t``."""

    vid: np.ndarray
    cam_a: np.ndarray
    cam_b: np.ndarray
    direction: np.ndarray
    t: np.ndarray
    xa: np.ndarray
    ya: np.ndarray
    xb: np.ndarray
    yb: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def swapped(self) -> "CrossCameraPairs":
        return CrossCameraPairs(self.vid, self.cam_b, self.cam_a, self.direction, self.t, self.xb, self.yb, self.xa, self.ya)


def _track(rows):
    rows = sorted(rows, key=lambda r: r[0])
    t = np.array([r[0] for r in rows], dtype=float)
    keep = np.concatenate([[True], np.diff(t) > 0])
    arr = np.array([[r[0], r[1], r[2]] for r in rows], dtype=float)[keep]
    return arr, rows[0][3]


def cross_camera_pairs(observations: Iterable[tuple]) -> CrossCameraPairs:
    """Build pairs from ``(vid, camera, t, x, y, direction)`` tuples.

    For every vehicle and ordered camera pair (a, b), each annotation of ``a``
    whose time lies within ``b``'s annotated span is paired with ``b``'s position
    linearly interpolated to that time. Both orders are included, so the set is
    symmetric under swapping cameras. Repeated timestamps keep the first frame.
    """
    groups: dict = defaultdict(lambda: defaultdict(list))
    for vid, cam, t, x, y, direction in observations:
        groups[vid][cam].append((t, x, y, direction))
    cols = defaultdict(list)
    for vid, cams in groups.items():
        tracks = {c: _track(rows) for c, rows in cams.items()}
        names = sorted(tracks)
        for a in names:
            ta, da = tracks[a]
            for b in names:
                if a == b:
                    continue
                tb, _ = tracks[b]
                if len(tb) < 2:
                    continue
                m = (ta[:, 0] >= tb[0, 0]) & (ta[:, 0] <= tb[-1, 0])
                if not m.any():
                    continue
                t = ta[m, 0]
                cols["vid"].append(np.full(len(t), vid, dtype=object))
                cols["cam_a"].append(np.full(len(t), a, dtype=object))
                cols["cam_b"].append(np.full(len(t), b, dtype=object))
                cols["direction"].append(np.full(len(t), da, dtype=object))
                cols["t"].append(t)
                cols["xa"].append(ta[m, 1])
                cols["ya"].append(ta[m, 2])
                cols["xb"].append(np.interp(t, tb[:, 0], tb[:, 1]))
                cols["yb"].append(np.interp(t, tb[:, 0], tb[:, 2]))
    names = ("vid", "cam_a", "cam_b", "direction", "t", "xa", "ya", "xb", "yb")
    if not cols:
        return CrossCameraPairs(*(np.zeros(0, dtype=object if n in names[:4] else float) for n in names))
    return CrossCameraPairs(*(np.concatenate(cols[n]) for n in names))


def ccde(pairs: CrossCameraPairs) -> tuple[float, float]:
    """Mean absolute x and y disagreement in feet (NaN when there are no pairs)."""
    if len(pairs) == 0:
        return float("nan"), float("nan")
    return float(np.mean(np.abs(pairs.xa - pairs.xb))), float(np.mean(np.abs(pairs.ya - pairs.yb)))


def ccpe(
    pairs: CrossCameraPairs,
    transforms: Mapping[tuple[str, str], CameraTransform],
    use_curve: bool = True,
) -> float:
    """Mean pixel distance in camera ``b`` between ``a``'s point and ``b``'s own point.

    Pairs whose camera/direction has no transform, or whose projection is at
    infinity, are skipped and logged.
    """
    if len(pairs) == 0:
        return float("nan")
    dist = np.full(len(pairs), np.nan)
    keys = defaultdict(list)
    for i, (cam, d) in enumerate(zip(pairs.cam_b, pairs.direction)):
        keys[(cam, d)].append(i)
    for key, idx in keys.items():
        tf = transforms.get(key)
        if tf is None:
            log.debug("no transform for %s; %d pairs skipped", key, len(idx))
            continue
        idx = np.asarray(idx)
        pa = np.column_stack([pairs.xa[idx], pairs.ya[idx]]).astype(float)
        pb = np.column_stack([pairs.xb[idx], pairs.yb[idx]]).astype(float)
        try:
            ua = tf.road_to_image(pa, use_curve)
            ub = tf.road_to_image(pb, use_curve)
        except ArithmeticError:
            ua, ub = _pointwise(tf, pa, use_curve), _pointwise(tf, pb, use_curve)
        dist[idx] = np.hypot(*(ua - ub).T)
    ok = np.isfinite(dist)
    if not ok.all():
        log.info("ccpe: %d pairs excluded", int((~ok).sum()))
    return float(np.mean(dist[ok])) if ok.any() else float("nan")


def _pointwise(tf, pts, use_curve):
    out = np.full((len(pts), 2), np.nan)
    for i, p in enumerate(pts):
        try:
            out[i] = tf.road_to_image(p[None, :], use_curve)[0]
        except ArithmeticError:
            pass
    return out


def total_variation(x) -> float:
    """Sum of absolute x steps over the net distance covered; 1 for monotone motion."""
    x = np.asarray(x, dtype=float).ravel()
    if len(x) < 2:
        raise ValidationError("need at least 2 samples")
    span = x.max() - x.min()
    if span == 0:
        raise ZeroDistance("object did not move")
    return float(np.sum(np.abs(np.diff(x))) / span)
