"""Cross-camera fusion: online detection suppression and offline tracklet stitching."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..boxes import Box3D, Detection, boxes_to_array, greedy_nms, heading, iou_matrix
from ..exceptions import TooFewObservations, ValidationError, ZeroDuration
from ..timesync import TrajectorySpline, WeightedObservation, fit_spline

log = logging.getLogger(__name__)

DF_IOU = 0.01


def fuse_detections(detections: Sequence[Detection], iou_threshold: float = DF_IOU) -> list[Detection]:
    """Greedy roadway NMS across cameras, per direction, in input order."""
    dets = list(detections)
    keep: list[int] = []
    for direction in ("EB", "WB"):
        idx = [i for i, d in enumerate(dets) if d.box.direction == direction]
        if not idx:
            continue
        arr = boxes_to_array([dets[i].box for i in idx])
        iou = iou_matrix(arr, arr) - np.eye(len(idx))
        scores = np.array([dets[i].confidence for i in idx])
        keep.extend(idx[k] for k in greedy_nms(iou, scores, iou_threshold))
    return [dets[i] for i in sorted(keep)]


@dataclass(frozen=True, eq=False)
class Tracklet:
    """Samples of one tracked object; ``t`` is non-decreasing, strictly so for single-source tracklets."""

    id: int
    direction: str
    cls: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    dims: tuple[float, float, float]
    cameras: tuple[str, ...] = ()
    sources: tuple[int, ...] = ()  # ids of the tracklets merged into this one
    spline: TrajectorySpline | None = None

    def __post_init__(self):
        heading(self.direction)
        for name in ("t", "x", "y"):
            a = np.array(getattr(self, name), dtype=float).ravel()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not len(self.t) == len(self.x) == len(self.y):
            raise ValidationError("tracklet arrays differ in length")
        if len(self.t) and np.any(np.diff(self.t) < 0):
            raise ValidationError("tracklet times must be non-decreasing")
        if not self.sources:
            object.__setattr__(self, "sources", (self.id,))

    def __len__(self) -> int:
        return len(self.t)

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def samples(self) -> list[tuple[float, float, float]]:
        return list(zip(self.t.tolist(), self.x.tolist(), self.y.tolist()))

    def box(self, x: float, y: float) -> Box3D:
        return Box3D(float(x), float(y), *self.dims, self.direction, self.cls)

    def positions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One position per distinct time: the spline if fitted, else the mean of coincident samples."""
        tu, inv = np.unique(self.t, return_inverse=True)
        if self.spline is not None:
            return tu, self.spline.x(tu), self.spline.y(tu)
        n = np.bincount(inv)
        return tu, np.bincount(inv, self.x) / n, np.bincount(inv, self.y) / n


@dataclass(frozen=True)
class StitchParams:
    t_overlap: float = 30.0
    t_gap_max: float = 10.0
    dim_weight: float = 0.5  # cost per foot of summed |dl| + |dw| + |dh|
    lateral_weight: float = 4.0
    max_cost: float = 15.0
    tail: float = 1.0  # seconds of tracklet end used for the velocity estimate
    refit: bool = True
    max_rounds: int = 20

    def __post_init__(self):
        if self.t_overlap < 0 or self.t_gap_max < 0 or self.max_cost <= 0 or self.tail <= 0 or self.max_rounds < 1:
            raise ValidationError("invalid stitching parameters")


def _tail_motion(tr: Tracklet, tail: float):
    m = tr.t >= tr.t_end - tail
    t, x, y = tr.t[m], tr.x[m], tr.y[m]
    if len(np.unique(t)) < 2:
        return tr.x[-1], tr.y[-1], 0.0, 0.0
    tc = t - t.mean()
    den = float(np.sum(tc ** 2))
    vx = float(np.sum(tc * (x - x.mean())) / den)
    vy = float(np.sum(tc * (y - y.mean())) / den)
    # position at the end time from the fitted line
    return x.mean() + vx * (tr.t_end - t.mean()), y.mean() + vy * (tr.t_end - t.mean()), vx, vy


def _position_at(tr: Tracklet, times: np.ndarray, motion) -> tuple[np.ndarray, np.ndarray]:
    """Interpolated inside the tracklet, constant-velocity extrapolation after it."""
    tu, xu, yu = tr.positions()
    x = np.interp(times, tu, xu)
    y = np.interp(times, tu, yu)
    after = times > tr.t_end
    if after.any():
        xe, ye, vx, vy = motion
        x = np.where(after, xe + vx * (times - tr.t_end), x)
        y = np.where(after, ye + vy * (times - tr.t_end), y)
    return x, y


def link_cost(a: Tracklet, b: Tracklet, params: StitchParams, motion=None) -> float:
    """Cost of ``b`` continuing ``a``; ``inf`` when the pair is not admissible."""
    if a.direction != b.direction or a is b:
        return np.inf
    if (b.t_start, b.id) <= (a.t_start, a.id):
        return np.inf
    gap = b.t_start - a.t_end
    if not -params.t_overlap <= gap <= params.t_gap_max:
        return np.inf
    motion = motion if motion is not None else _tail_motion(a, params.tail)
    if gap < 0:
        shared = b.t[b.t <= a.t_end]
        xa, ya = _position_at(a, shared, motion)
        tb, xb, yb = b.positions()
        xb = np.interp(shared, tb, xb)
        yb = np.interp(shared, tb, yb)
        # footprints must overlap whenever both tracklets exist
        arr_a = boxes_to_array([a.box(x, y) for x, y in zip(xa, ya)])
        arr_b = boxes_to_array([b.box(x, y) for x, y in zip(xb, yb)])
        if np.any(iou_matrix(arr_a[:, None, :], arr_b[:, None, :]).ravel() <= 0):
            return np.inf
        dist = float(np.mean(np.hypot(xa - xb, params.lateral_weight * (ya - yb))))
    else:
        xa, ya = _position_at(a, np.array([b.t_start]), motion)
        dist = float(np.hypot(xa[0] - b.x[0], params.lateral_weight * (ya[0] - b.y[0])))
    dim = float(np.sum(np.abs(np.subtract(a.dims, b.dims))))
    cost = dist + params.dim_weight * dim
    return cost if cost <= params.max_cost else np.inf


def link_matrix(tracklets: Sequence[Tracklet], params: StitchParams) -> np.ndarray:
    n = len(tracklets)
    cost = np.full((n, n), np.inf)
    start = np.array([t.t_start for t in tracklets])
    end = np.array([t.t_end for t in tracklets])
    ids = np.array([t.id for t in tracklets])
    sign = np.array([1 if t.direction == "EB" else -1 for t in tracklets])
    gap = start[None, :] - end[:, None]
    later = (start[None, :] > start[:, None]) | ((start[None, :] == start[:, None]) & (ids[None, :] > ids[:, None]))
    cand = later & (sign[:, None] == sign[None, :]) & (gap >= -params.t_overlap) & (gap <= params.t_gap_max)
    if not cand.any():
        return cost
    motions = [_tail_motion(t, params.tail) for t in tracklets]
    # cheap bound: lateral gap at the successor's start already exceeds the budget
    x0 = np.array([t.x[0] for t in tracklets])
    y0 = np.array([t.y[0] for t in tracklets])
    for i, j in zip(*np.nonzero(cand)):
        xe, ye, vx, vy = motions[i]
        a = tracklets[i]
        if gap[i, j] >= 0:
            dt = gap[i, j]
            d = np.hypot(xe + vx * dt - x0[j], params.lateral_weight * (ye + vy * dt - y0[j]))
        else:
            k = min(np.searchsorted(a.t, start[j]), len(a.t) - 1)
            d = np.hypot(a.x[k] - x0[j], params.lateral_weight * (a.y[k] - y0[j])) - 2.0 * params.max_cost
        if d > 2.0 * params.max_cost:
            continue
        cost[i, j] = link_cost(a, tracklets[j], params, motions[i])
    return cost


def _chains(n: int, succ: dict[int, int]) -> list[list[int]]:
    has_pred = set(succ.values())
    out = []
    for i in range(n):
        if i in has_pred:
            continue
        chain = [i]
        while chain[-1] in succ:
            chain.append(succ[chain[-1]])
        out.append(chain)
    return out


def merge_tracklets(parts: Sequence[Tracklet], new_id: int, refit: bool = True) -> Tracklet:
    """Union of samples, count-weighted dimensions and class vote, optional spline refit."""
    t = np.concatenate([p.t for p in parts])
    x = np.concatenate([p.x for p in parts])
    y = np.concatenate([p.y for p in parts])
    order = np.argsort(t, kind="stable")
    w = np.array([len(p) for p in parts], dtype=float)
    dims = tuple(float(v) for v in np.average([p.dims for p in parts], axis=0, weights=w))
    votes = Counter()
    for p in parts:
        votes[p.cls] += len(p)
    best = max(votes.values())
    cls = next(p.cls for p in sorted(parts, key=lambda p: -p.t_end) if votes[p.cls] == best)
    cams = tuple(sorted({c for p in parts for c in p.cameras}))
    sources = tuple(s for p in parts for s in p.sources)
    merged = Tracklet(new_id, parts[0].direction, cls, t[order], x[order], y[order], dims, cams, sources)
    if refit and len(parts) > 1:
        obs = [WeightedObservation(float(a), float(b), float(c)) for a, b, c in zip(merged.t, merged.x, merged.y)]
        try:
            spline = fit_spline(obs)
        except (TooFewObservations, ZeroDuration):
            spline = None
        merged = Tracklet(new_id, merged.direction, cls, merged.t, merged.x, merged.y, dims, cams, sources, spline)
    return merged


def _stitch_round(tracklets: list[Tracklet], params: StitchParams) -> list[Tracklet]:
    cost = link_matrix(tracklets, params)
    succ: dict[int, int] = {}
    feasible = np.isfinite(cost)
    if feasible.any():
        big = np.nanmax(np.where(feasible, cost, np.nan)) * 2 + 1.0
        rows, cols = linear_sum_assignment(np.where(feasible, cost, big + params.max_cost))
        for r, c in zip(rows, cols):
            if feasible[r, c]:
                succ[int(r)] = int(c)
    out = []
    for chain in _chains(len(tracklets), succ):
        parts = [tracklets[i] for i in chain]
        out.append(parts[0] if len(parts) == 1 else merge_tracklets(parts, parts[0].id, params.refit))
    return out


def stitch_tracklets(tracklets: Sequence[Tracklet], params: StitchParams = StitchParams()) -> list[Tracklet]:
    """Join tracklets into trajectories by minimum-cost one-to-one successor matching.

    A successor must start after its predecessor (by start time, then id), so
    links form disjoint chains. Chains are merged and matching is repeated on
    the merged set until no link remains, which lets a trajectory seen by three
    overlapping cameras collect all of them. Links between tracklets that
    overlap in time are settled before any gap is bridged. Every input sample ends up in
    exactly one output. Unlinked tracklets pass through unchanged; merged
    chains take the id of their first tracklet.
    """
    cur = sorted(tracklets, key=lambda t: t.id)
    # overlapping pairs are linked first; gaps are bridged once overlaps settle
    for stage in (replace(params, t_gap_max=0.0), params):
        for _ in range(params.max_rounds):
            if len(cur) < 2:
                break
            nxt = _stitch_round(cur, stage)
            if len(nxt) == len(cur):
                break
            cur = sorted(nxt, key=lambda t: t.id)
    log.debug("stitched %d tracklets into %d", len(tracklets), len(cur))
    return cur
