"""Ground-truth resampling and time alignment of ground truth against predictions."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..boxes import Box3D, heading
from ..exceptions import ValidationError
from ..timesync import MIN_SPLINE_OBS, WeightedObservation, fit_spline
from ..tracking.fusion import Tracklet

log = logging.getLogger(__name__)

RESAMPLE_RATE = 30.0
TIME_TOL = 1e-6  # seconds; absorbs timestamps stored with 6 decimals
HOTA_THRESHOLDS = tuple(np.round(np.arange(1, 20) * 0.05, 2).tolist())


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.3
    resample_rate: float = RESAMPLE_RATE
    hota_thresholds: tuple[float, ...] = HOTA_THRESHOLDS

    def __post_init__(self):
        th = np.asarray(self.hota_thresholds, dtype=float)
        if not 0 < self.iou_threshold < 1:
            raise ValidationError("iou_threshold must lie in (0, 1)")
        if th.size == 0 or np.any(th <= 0) or np.any(th >= 1) or np.any(np.diff(th) <= 0):
            raise ValidationError("hota thresholds must lie in (0, 1) and increase strictly")
        if self.resample_rate <= 0:
            raise ValidationError("resample_rate must be positive")


def _majority(values):
    counts = Counter(values)
    best = max(counts.values())
    return next(v for v in reversed(values) if counts[v] == best)


def resample_ground_truth(
    gt: Mapping[object, Sequence[tuple[float, Box3D]]], rate: float = RESAMPLE_RATE
) -> list[Tracklet]:
    """Spline-smoothed ground truth sampled at ``rate`` Hz over each object's annotated span.

    Objects with fewer than four distinct annotation times are linearly
    interpolated instead. Dimensions are averaged, class is the majority vote.
    Sample times lie on the grid ``k / rate``, from the grid point nearest the
    first annotation to the one nearest the last (so the ends may extrapolate
    by up to half a period).
    """
    out = []
    for oid in sorted(gt, key=lambda k: (str(type(k)), k)):
        rows = sorted(gt[oid], key=lambda r: r[0])
        if not rows:
            continue
        t = np.array([r[0] for r in rows], dtype=float)
        boxes = [r[1] for r in rows]
        direction = boxes[0].direction
        dims = tuple(float(v) for v in np.mean([b.dims for b in boxes], axis=0))
        cls = _majority([b.cls for b in boxes])
        ts = np.arange(np.round(t[0] * rate), np.round(t[-1] * rate) + 1) / rate
        if len(np.unique(t)) >= MIN_SPLINE_OBS:
            spline = fit_spline([WeightedObservation(float(a), b.x, b.y) for a, b in zip(t, boxes)])
            xs, ys = spline.x(ts, extrapolate=True), spline.y(ts, extrapolate=True)
        else:
            log.info("object %r has %d annotation times; linear interpolation", oid, len(np.unique(t)))
            tu, inv = np.unique(t, return_inverse=True)
            n = np.bincount(inv)
            xu = np.bincount(inv, [b.x for b in boxes]) / n
            yu = np.bincount(inv, [b.y for b in boxes]) / n
            if len(tu) == 1:
                xs, ys = np.full(len(ts), xu[0]), np.full(len(ts), yu[0])
            else:
                xs, ys = _linear(ts, tu, xu), _linear(ts, tu, yu)
        out.append(Tracklet(oid, direction, cls, ts, xs, ys, dims))
    return out


def _linear(ts, tu, vu):
    """Piecewise-linear interpolation continued linearly past both ends."""
    v = np.interp(ts, tu, vu)
    lo, hi = ts < tu[0], ts > tu[-1]
    v[lo] = vu[0] + (ts[lo] - tu[0]) * (vu[1] - vu[0]) / (tu[1] - tu[0])
    v[hi] = vu[-1] + (ts[hi] - tu[-1]) * (vu[-1] - vu[-2]) / (tu[-1] - tu[-2])
    return v


@dataclass(frozen=True, eq=False)
class AlignedFrames:
    """Ground truth and predictions at common times.

    Boxes are (n, 5) arrays of ``x, y, l, w, heading sign`` as used by
    :func:`roadtrack.boxes.iou_matrix`.
    """

    times: np.ndarray
    gt_ids: list
    gt_boxes: list
    pred_ids: list
    pred_boxes: list
    gt_info: dict = field(default_factory=dict)  # id -> (direction, cls, dims)
    pred_info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_frames(cls, frames: Sequence[tuple[Mapping, Mapping]], times=None) -> "AlignedFrames":
        """Build from per-frame ``({gt id: Box3D}, {pred id: Box3D})`` pairs."""
        gi, gb, pi, pb = [], [], [], []
        ginfo, pinfo = {}, {}
        for g, p in frames:
            for ids, boxes, info, src in ((gi, gb, ginfo, g), (pi, pb, pinfo, p)):
                keys = list(src)
                ids.append(np.array(keys, dtype=object))
                boxes.append(_arr([src[k] for k in keys]))
                for k in keys:
                    info.setdefault(k, (src[k].direction, src[k].cls, src[k].dims))
        times = np.arange(len(frames), dtype=float) if times is None else np.asarray(times, dtype=float)
        return cls(times, gi, gb, pi, pb, ginfo, pinfo)


def _arr(boxes) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 5))
    return np.array([[b.x, b.y, b.l, b.w, heading(b.direction)] for b in boxes], dtype=float)


def overlap_window(gt: Sequence[Tracklet], pred: Sequence[Tracklet]) -> tuple[float, float] | None:
    """Intersection of the ground-truth and prediction time spans, or None."""
    if not gt or not pred:
        return None
    lo = max(min(t.t_start for t in gt), min(t.t_start for t in pred))
    hi = min(max(t.t_end for t in gt), max(t.t_end for t in pred))
    return (lo, hi) if hi >= lo else None


def _sample(tracks: Sequence[Tracklet], times: np.ndarray, rate: float):
    """Each track covers the grid points nearest its first and last sample and everything between."""
    ids = [[] for _ in times]
    rows = [[] for _ in times]
    for tr in tracks:
        tu, xu, yu = tr.positions()
        lo = np.round(tu[0] * rate) / rate - TIME_TOL
        hi = np.round(tu[-1] * rate) / rate + TIME_TOL
        idx = np.flatnonzero((times >= min(lo, tu[0] - TIME_TOL)) & (times <= max(hi, tu[-1] + TIME_TOL)))
        if not len(idx):
            continue
        if len(tu) == 1:
            xs, ys = np.full(len(idx), xu[0]), np.full(len(idx), yu[0])
        else:
            xs, ys = _linear(times[idx], tu, xu), _linear(times[idx], tu, yu)
        s = heading(tr.direction)
        for k, x, y in zip(idx, xs, ys):
            ids[k].append(tr.id)
            rows[k].append((x, y, tr.dims[0], tr.dims[1], s))
    return (
        [np.array(i, dtype=object) for i in ids],
        [np.array(r, dtype=float).reshape(-1, 5) for r in rows],
    )


def align(
    gt: Sequence[Tracklet],
    pred: Sequence[Tracklet],
    rate: float = RESAMPLE_RATE,
    window: tuple[float, float] | None = None,
) -> AlignedFrames:
    """Linearly interpolate both sets at ``rate`` Hz over their common time window.

    A track is present at the grid points from the one nearest its first
    sample to the one nearest its last, extrapolating linearly at the ends.

    Without predictions the window is the ground-truth span, so every ground
    truth box counts as missed.
    """
    if window is None:
        window = overlap_window(gt, pred)
        if window is None and gt and not pred:
            window = (min(t.t_start for t in gt), max(t.t_end for t in gt))
    if window is None:
        times = np.zeros(0)
    else:
        k0 = np.ceil((window[0] - TIME_TOL) * rate)
        k1 = np.floor((window[1] + TIME_TOL) * rate)
        times = np.arange(k0, k1 + 1) / rate
    gi, gb = _sample(gt, times, rate)
    pi, pb = _sample(pred, times, rate)
    ginfo = {t.id: (t.direction, t.cls, t.dims) for t in gt}
    pinfo = {t.id: (t.direction, t.cls, t.dims) for t in pred}
    return AlignedFrames(times, gi, gb, pi, pb, ginfo, pinfo)
