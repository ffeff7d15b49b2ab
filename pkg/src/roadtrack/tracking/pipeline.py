"""Multi-camera tracking on a global 15 Hz clock."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from ..boxes import Detection
from ..exceptions import EmptyScene, ValidationError
from .association import BYTE_HIGH, BYTE_LOW, associate_byte, associate_kiou
from .fusion import DF_IOU, StitchParams, Tracklet, fuse_detections, stitch_tracklets
from .kalman import KalmanParams, TrackState, kalman_predict, kalman_update, mark_missed, new_track

log = logging.getLogger(__name__)

TRACKERS = ("kiou", "byte", "gt")
FUSIONS = ("none", "df", "tf", "df+tf")
TICK_HZ = 15.0
MATCH_WINDOW = 1.0 / 60.0


@dataclass(frozen=True)
class TrackerConfig:
    tracker: str = "kiou"
    fusion: str = "none"
    min_iou: float = 0.1
    kiou_conf: float = BYTE_HIGH  # KIOU ignores detections below this confidence
    byte_high: float = BYTE_HIGH
    byte_low: float = BYTE_LOW
    df_iou: float = DF_IOU
    n_init: int = 3
    n_miss: int = 8
    tick_hz: float = TICK_HZ
    window: float = MATCH_WINDOW
    kalman: KalmanParams = field(default_factory=KalmanParams)
    stitch: StitchParams = field(default_factory=StitchParams)

    def __post_init__(self):
        if self.tracker not in TRACKERS:
            raise ValidationError(f"unknown tracker {self.tracker!r}; expected one of {TRACKERS}")
        if self.fusion not in FUSIONS:
            raise ValidationError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        if self.n_init < 1 or self.n_miss < 1:
            raise ValidationError("n_init and n_miss must be >= 1")
        if not 0 <= self.min_iou <= 1 or self.tick_hz <= 0 or self.window < 0:
            raise ValidationError("invalid tracker thresholds")

    @property
    def detection_fusion(self) -> bool:
        return self.fusion in ("df", "df+tf")

    @property
    def trajectory_fusion(self) -> bool:
        return self.fusion in ("tf", "df+tf")


class _Track:
    """Mutable bookkeeping around a filter state."""

    __slots__ = ("state", "confirmed", "rows", "pending", "dims", "cameras", "gt")

    def __init__(self, state: TrackState, tick: int, det: Detection, gt=None):
        self.state = state
        self.confirmed = False
        self.rows: list[tuple[int, float, float]] = [(tick, state.mean[0], state.mean[1])]
        self.pending: list[tuple[int, float, float]] = []  # coasted ticks not yet followed by a hit
        self.dims = [det.box.dims]
        self.cameras = {det.camera}
        self.gt = gt

    def hit(self, tick, det):
        self.rows.extend(self.pending)
        self.pending = []
        self.rows.append((tick, self.state.mean[0], self.state.mean[1]))
        self.dims.append(det.box.dims)
        self.cameras.add(det.camera)

    def tracklet(self, times: np.ndarray, camera: str | None) -> Tracklet:
        idx = np.array([r[0] for r in self.rows])
        dims = tuple(float(v) for v in np.mean(self.dims, axis=0))
        cams = (camera,) if camera is not None else tuple(sorted(c for c in self.cameras if c))
        return Tracklet(
            self.state.id, self.state.direction, self.state.vote, times[idx],
            [r[1] for r in self.rows], [r[2] for r in self.rows], dims, cams,
        )


class _DirectionTracker:
    def __init__(self, cfg: TrackerConfig, next_id):
        self.cfg = cfg
        self.next_id = next_id
        self.active: list[_Track] = []
        self.done: list[_Track] = []

    def step(self, tick: int, t: float, dt: float, dets: list[Detection]):
        cfg = self.cfg
        for tr in self.active:
            tr.state = kalman_predict(tr.state, dt, cfg.kalman)
        states = [tr.state for tr in self.active]
        if cfg.tracker == "gt":
            dets = [d for d in dets if d.source is not None]
            by_gt = {tr.gt: i for i, tr in enumerate(self.active)}
            matches = [(by_gt[d.source], j) for j, d in enumerate(dets) if d.source in by_gt]
            taken = {j for _, j in matches}
            spawn = [j for j in range(len(dets)) if j not in taken]
            unmatched = [i for i in range(len(self.active)) if i not in {m[0] for m in matches}]
        elif cfg.tracker == "byte":
            a = associate_byte([s.box for s in states], dets, cfg.min_iou, cfg.byte_high, cfg.byte_low)
            matches, unmatched, spawn = a.matches, a.unmatched_tracks, a.unmatched_detections
        else:
            dets = [d for d in dets if d.confidence >= cfg.kiou_conf]
            a = associate_kiou([s.box for s in states], [d.box for d in dets], cfg.min_iou)
            matches, unmatched, spawn = a.matches, a.unmatched_tracks, a.unmatched_detections
        # matched detections are carried to the tick time with the track velocity
        for i, j in matches:
            tr = self.active[i]
            d = dets[j]
            vx, vy = tr.state.mean[2], tr.state.mean[3]
            lag = t - d.t
            box = d.box.moved(d.box.x + vx * lag, d.box.y + vy * lag)
            tr.state = kalman_update(tr.state, box, cfg.kalman)
            tr.hit(tick, d)
            if tr.state.streak >= cfg.n_init:
                tr.confirmed = True
        keep = []
        missed = set(unmatched)
        for i, tr in enumerate(self.active):
            if i in missed:
                tr.state = mark_missed(tr.state)
                if not tr.confirmed or tr.state.misses >= cfg.n_miss:
                    self.done.append(tr)
                    continue
                tr.pending.append((tick, tr.state.mean[0], tr.state.mean[1]))
            keep.append(tr)
        self.active = keep
        for j in spawn:
            d = dets[j]
            tr = _Track(new_track(self.next_id(), d, cfg.kalman), tick, d, d.source)
            # objects already present when the streams begin are not new arrivals
            if cfg.n_init <= 1 or tick == 0:
                tr.confirmed = True
            self.active.append(tr)

    def finish(self) -> list[_Track]:
        # a tentative track cut off by the end of the streams never had the chance to confirm
        out = [tr for tr in self.done if tr.confirmed]
        out += [tr for tr in self.active if tr.confirmed or tr.state.misses == 0]
        self.active, self.done = [], []
        return out


def _tick_frames(frames, ticks: np.ndarray, window: float):
    """Index of the frame nearest each tick, or -1 when none lies within ``window``."""
    if not frames:
        return np.full(len(ticks), -1)
    ft = np.array([f.t for f in frames], dtype=float)
    order = np.argsort(ft, kind="stable")
    fs = ft[order]
    j = np.searchsorted(fs, ticks)
    lo = np.clip(j - 1, 0, len(fs) - 1)
    hi = np.clip(j, 0, len(fs) - 1)
    pick = np.where(np.abs(fs[lo] - ticks) <= np.abs(fs[hi] - ticks), lo, hi)
    ok = np.abs(fs[pick] - ticks) <= window + 1e-9
    return np.where(ok, order[pick], -1)


def tick_times(streams: Mapping[str, Sequence], hz: float = TICK_HZ) -> np.ndarray:
    """Global clock ``k / hz`` covering every frame; ticks are absolute so runs share a grid."""
    ts = [f.t for frames in streams.values() for f in frames]
    if not ts:
        raise EmptyScene("no frames in any stream")
    k0 = int(np.floor(min(ts) * hz + 1e-6))
    k1 = int(np.ceil(max(ts) * hz - 1e-6))
    return np.arange(k0, k1 + 1) / hz


def consumed_frames(streams: Mapping[str, Sequence], config: "TrackerConfig | None" = None) -> dict[str, list[int]]:
    """Per camera, positions in its stream of the frames the tracker reads (one per tick at most)."""
    config = config or TrackerConfig()
    ticks = tick_times(streams, config.tick_hz)
    out = {}
    for cam, frames in streams.items():
        idx = _tick_frames(list(frames), ticks, config.window)
        out[cam] = sorted(set(int(i) for i in idx if i >= 0))
    return out


def _run(groups: Mapping[str, Sequence], ticks, cfg: TrackerConfig, fuse: bool, counter) -> list[_Track]:
    dt = 1.0 / cfg.tick_hz
    picks = {cam: _tick_frames(list(frames), ticks, cfg.window) for cam, frames in groups.items()}
    frames = {cam: list(f) for cam, f in groups.items()}
    trackers = {d: _DirectionTracker(cfg, counter) for d in ("EB", "WB")}
    for k, t in enumerate(ticks):
        dets: list[Detection] = []
        for cam, idx in picks.items():
            if idx[k] >= 0:
                fr = frames[cam][idx[k]]
                dets.extend(replace(d, t=fr.t) if d.t != fr.t else d for d in fr.detections)
        if fuse and len(dets) > 1:
            dets = fuse_detections(dets, cfg.df_iou)
        for direction, trk in trackers.items():
            trk.step(k, float(t), dt if k else 0.0, [d for d in dets if d.box.direction == direction])
    out = []
    for trk in trackers.values():
        out.extend(trk.finish())
    return out


def track_scene(streams: Mapping[str, Sequence], config: TrackerConfig = TrackerConfig()) -> list[Tracklet]:
    """Track every camera stream; returns tracklets (trajectories when trajectory fusion is on).

    ``streams`` maps camera id to frames carrying ``t`` (corrected seconds) and
    ``detections``. Without detection fusion each camera gets its own tracker
    and every tracklet names its camera; with it all cameras feed one tracker.
    """
    ticks = tick_times(streams, config.tick_hz)
    count = [0]

    def next_id():
        count[0] += 1
        return count[0]

    if config.detection_fusion:
        tracks = [(tr, None) for tr in _run(streams, ticks, config, True, next_id)]
    else:
        tracks = []
        for cam in sorted(streams):
            tracks.extend((tr, cam) for tr in _run({cam: streams[cam]}, ticks, config, False, next_id))
    tracklets = sorted((tr.tracklet(ticks, cam) for tr, cam in tracks), key=lambda t: t.id)
    if config.trajectory_fusion:
        tracklets = stitch_tracklets(tracklets, config.stitch)
    log.info("track_scene: %d tracklets over %d ticks", len(tracklets), len(ticks))
    return tracklets


class MultiCameraTracker(BaseEstimator):
    """Estimator wrapper: ``fit`` runs :func:`track_scene` and stores ``tracklets_``."""

    def __init__(self, tracker: str = "kiou", fusion: str = "none", min_iou: float = 0.1, kiou_conf: float = BYTE_HIGH,
                 byte_high: float = BYTE_HIGH, byte_low: float = BYTE_LOW, df_iou: float = DF_IOU, n_init: int = 3,
                 n_miss: int = 8):
        self.tracker = tracker
        self.fusion = fusion
        self.min_iou = min_iou
        self.kiou_conf = kiou_conf
        self.byte_high = byte_high
        self.byte_low = byte_low
        self.df_iou = df_iou
        self.n_init = n_init
        self.n_miss = n_miss

    def config(self) -> TrackerConfig:
        names = {f.name for f in fields(TrackerConfig)}
        return TrackerConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, streams, y=None):
        self.tracklets_ = track_scene(streams, self.config())
        return self

    def fit_predict(self, streams, y=None) -> list[Tracklet]:
        return self.fit(streams).tracklets_
