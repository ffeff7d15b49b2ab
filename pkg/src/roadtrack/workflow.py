"""File-level pipeline steps: simulate, calibrate, sync, track, evaluate, report.

Every step reads and writes the scene file formats of :mod:`roadtrack.io`.
Times inside a step are taken relative to a whole-second reference so that
epoch-scale stamps keep their precision and all grids stay aligned.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import io as rio
from .boxes import Box3D, corners_array
from .evaluation import (
    EvalConfig,
    MetricsReport,
    TimeSpacePoint,
    emit_timespace,
    evaluate,
    reports_from_json,
    reports_to_csv,
    reports_to_json,
    resample_ground_truth,
)
from .exceptions import ParseError, ValidationError
from .geometry import CameraTransform, fit_camera_transform
from .simulator import NoiseConfig, SceneConfig, SimulatedScene, build_scene, preset, visible
from .simulator.detections import DetectionFrame
from .timesync import ClockSynchronizer, WeightedObservation
from .tracking import TRACKERS, FUSIONS, KalmanParams, StitchParams, TrackerConfig, Tracklet, track_scene

log = logging.getLogger(__name__)

TRACKER_ALIASES = {"gt-tracklets": "gt"}
DETECTOR_SOURCES = ("simulated", "csv")


# ---- configuration --------------------------------------------------------------


@dataclass(frozen=True)
class RigConfig:
    scene_id: str = "sim"
    n_cameras: int = 16
    overlap: float = 0.3
    calib_noise_px: float = 1.0
    offset_range: float = 0.3
    p_skip: float = 0.0
    p_double: float = 0.0
    random_phase: bool = True


@dataclass(frozen=True)
class SimulationSpec:
    scene: SceneConfig
    rig: RigConfig = RigConfig()
    noise: NoiseConfig = NoiseConfig()

    @classmethod
    def from_config(cls, values: Mapping[str, str], seed: int | None = None, path=None) -> "SimulationSpec":
        """Split ``key = value`` pairs between scene, rig and detector noise.

        ``preset`` picks the base scene; ``camera.*`` keys (written by
        :func:`simulate`) are informational and ignored.
        """
        values = {k: v for k, v in values.items() if not k.startswith("camera.")}
        base = preset(values.pop("preset")) if "preset" in values else SceneConfig()
        groups: dict[str, dict[str, str]] = {"scene": {}, "rig": {}, "noise": {}}
        names = {
            "scene": {f.name for f in fields(SceneConfig)},
            "rig": {f.name for f in fields(RigConfig)},
            "noise": {f.name for f in fields(NoiseConfig)} - {"occlusions"},
        }
        for k, v in values.items():
            owner = next((g for g, n in names.items() if k in n), None)
            if owner is None:
                raise ParseError(f"unknown simulation key {k!r}", path)
            groups[owner][k] = v
        try:
            scene = rio.apply_config(SceneConfig, groups["scene"], base, path)
            if seed is not None:
                scene = replace(scene, seed=int(seed))
            rig = rio.apply_config(RigConfig, groups["rig"], path=path)
            noise = rio.apply_config(NoiseConfig, groups["noise"], path=path)
        except TypeError as e:
            raise ParseError(str(e), path) from e
        return cls(scene, rig, noise)

    def to_config(self) -> dict:
        out = {f"{f.name}": getattr(self.scene, f.name) for f in fields(SceneConfig)}
        out.update({f.name: getattr(self.rig, f.name) for f in fields(RigConfig)})
        out.update({f.name: getattr(self.noise, f.name) for f in fields(NoiseConfig) if f.name != "occlusions"})
        return out


STITCH_KEYS = {f.name for f in fields(StitchParams)}


@dataclass(frozen=True)
class PipelineSpec:
    """One tracking pipeline: detector source, tracker, fusion and evaluation settings."""

    detector_source: str = "simulated"
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    eval: EvalConfig = EvalConfig()
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.detector_source not in DETECTOR_SOURCES:
            raise ValidationError(f"detector_source must be one of {DETECTOR_SOURCES}")

    @property
    def name(self) -> str:
        return f"{self.tracker.tracker}-{self.tracker.fusion}"

    @classmethod
    def from_config(cls, values: Mapping[str, str], path=None) -> "PipelineSpec":
        values = dict(values)
        source = values.pop("detector_source", "simulated")
        if "tracker" in values:
            values["tracker"] = TRACKER_ALIASES.get(values["tracker"], values["tracker"])
        stitch = {k: values.pop(k) for k in list(values) if k in STITCH_KEYS}
        ev = {k: values.pop(k) for k in list(values) if k in {f.name for f in fields(EvalConfig)}}
        kalman = {}
        for key, attr in (("kalman_q", "q"), ("kalman_r", "r")):
            if key in values:
                kalman[attr] = values.pop(key)
        paths = {k: values.pop(k) for k in list(values) if k.endswith("_path")}
        trk_names = {f.name for f in fields(TrackerConfig)} - {"kalman", "stitch"}
        unknown = set(values) - trk_names
        if unknown:
            raise ParseError(f"unknown pipeline keys {sorted(unknown)}", path)
        tc = rio.apply_config(TrackerConfig, values, path=path, strict=False)
        tc = replace(
            tc,
            stitch=rio.apply_config(StitchParams, stitch, path=path),
            kalman=rio.apply_config(KalmanParams, kalman, path=path),
        )
        return cls(source, tc, rio.apply_config(EvalConfig, ev, path=path), paths)


# ---- simulate ---------------------------------------------------------------------


def scene_paths(directory, scene_id: str) -> dict[str, Path]:
    d = Path(directory)
    return {
        "labels": d / f"{scene_id}_labels.csv",
        "resampled": d / f"{scene_id}_resampled.csv",
        "timestamps": d / f"{scene_id}_timestamps.csv",
        "detections": d / f"{scene_id}_detections.csv",
        "transforms": d / f"{scene_id}_transforms",
        "config": d / f"{scene_id}_config.txt",
    }


def build_simulation(spec: SimulationSpec) -> SimulatedScene:
    r = spec.rig
    return build_scene(
        spec.scene, n_cameras=r.n_cameras, overlap=r.overlap, calib_noise_px=r.calib_noise_px,
        offset_range=r.offset_range, p_skip=r.p_skip, p_double=r.p_double, random_phase=r.random_phase,
    )


def label_rows(sc: SimulatedScene) -> list[rio.LabelRow]:
    rows = [rio.LabelRow.from_box(a.frame_index, a.t_raw, a.vid, a.box, a.camera) for a in sc.annotations]
    return sorted(rows, key=lambda r: (r.camera, r.frame_index, r.vehicle_id))


def timestamp_rows(sc: SimulatedScene) -> list[rio.TimestampRow]:
    """Raw stamps with the true capture time in the corrected column."""
    out = []
    for cam in sc.cameras:
        tm = sc.timings[cam.id]
        for j, raw in enumerate(tm.raw):
            out.append(rio.TimestampRow(j, cam.id, float(raw), sc.epoch + float(tm.content_time[j])))
    return out


def detection_rows(sc: SimulatedScene, noise: NoiseConfig) -> list[rio.DetectionRow]:
    out = []
    for cam, frames in sc.detections(noise).items():
        for fr in frames:
            for d in fr.detections:
                vid = rio.NO_SOURCE if d.source is None else int(d.source)
                out.append(rio.DetectionRow.from_box(fr.index, fr.t, vid, d.box, cam, confidence=d.confidence))
    return out


def _project_boxes(tf: CameraTransform, boxes: Sequence[Box3D]) -> np.ndarray:
    pts = corners_array(boxes).reshape(-1, 3)
    pts[:, 1] += tf.curve(pts[:, 0])
    return tf.projection.project(pts).reshape(-1, 8, 2)


def resampled_rows(sc: SimulatedScene, rate: float = 30.0) -> list[rio.ResampledRow]:
    """Spline-smoothed truth at ``rate`` Hz with corner pixels in every camera that sees the box."""
    gt: dict[int, list] = defaultdict(list)
    for a in sc.annotations:
        gt[a.vid].append((a.content_time, a.box))
    tracks = resample_ground_truth(gt, rate)
    pending: dict[tuple[str, str], list] = defaultdict(list)
    for tr in tracks:
        for t, x, y in zip(tr.t, tr.x, tr.y):
            box = tr.box(x, y)
            for cam in sc.cameras:
                if (cam.id, tr.direction) in sc.calibrations and visible(box, cam):
                    pending[(cam.id, tr.direction)].append((int(round(t * rate)), float(t), tr.id, box))
    out = []
    for key in sorted(pending):
        items = pending[key]
        uv = _project_boxes(sc.calibrations[key].transform, [b for *_, b in items])
        for (k, t, vid, box), px in zip(items, uv):
            out.append(rio.ResampledRow.from_box(k, sc.epoch + t, vid, box, key[0], corners=tuple(px.ravel().tolist())))
    return sorted(out, key=lambda r: (r.frame_index, r.vehicle_id, r.camera))


def calibration_point_rows(cal) -> list[rio.PointRow]:
    rows = [rio.PointRow("tick", i, c.image[0], c.image[1], c.road[0], c.road[1], c.road[2]) for i, c in enumerate(cal.ticks)]
    rows += [rio.PointRow("above", i, p[0], p[1], r[0], r[1], r[2]) for i, (r, p) in enumerate(cal.above)]
    rows += [rio.PointRow("lane", i, p[0], p[1], 0.0, cal.lane_y, 0.0) for i, p in enumerate(cal.lane_pixels)]
    for i, (a, b) in enumerate(cal.vertical_lines):
        rows += [rio.PointRow("vertical", i, a[0], a[1]), rio.PointRow("vertical", i, b[0], b[1])]
    return rows


def simulate(spec: SimulationSpec, out_dir) -> dict[str, Path]:
    """Write the full scene directory for one simulation spec."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = scene_paths(out_dir, spec.rig.scene_id)
    sc = build_simulation(spec)
    rio.write_labels(paths["labels"], label_rows(sc))
    rio.write_timestamps(paths["timestamps"], timestamp_rows(sc))
    rio.write_detections(paths["detections"], detection_rows(sc, spec.noise))
    rio.write_resampled(paths["resampled"], resampled_rows(sc))
    paths["transforms"].mkdir(exist_ok=True)
    for (cam, direction), cal in sorted(sc.calibrations.items()):
        rio.write_transform(paths["transforms"], cal.transform)
        rio.write_points(rio.points_path(paths["transforms"], cam, direction), calibration_point_rows(cal))
    cfg = spec.to_config()
    for cam in sc.cameras:
        cfg[f"camera.{cam.id}.fov"] = cam.fov
    rio.write_config(paths["config"], cfg)
    log.info("simulated %s: %d vehicles, %d cameras", spec.rig.scene_id, len(sc.truth.vehicles), len(sc.cameras))
    return paths


# ---- calibrate --------------------------------------------------------------------


def calibrate(points_dir, out_dir) -> dict[tuple[str, str], CameraTransform]:
    """Fit and write a transform for every ``{camera}_{direction}_points.csv`` in ``points_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = sorted(Path(points_dir).glob("*_points.csv"))
    if not files:
        raise ValidationError(f"no *_points.csv files in {points_dir}")
    out = {}
    for p in files:
        camera, _, direction = p.name[: -len("_points.csv")].rpartition("_")
        if not camera or direction not in ("EB", "WB"):
            raise ParseError("file name must be {camera}_{direction}_points.csv", p)
        ticks, segs, above, lane, lane_y = rio.calibration_points(rio.read_points(p))
        tf = fit_camera_transform(camera, direction, ticks, segs, above, lane, lane_y)
        rio.write_transform(out_dir, tf)
        out[(camera, direction)] = tf
    return out


# ---- sync -------------------------------------------------------------------------


def _reference(times) -> float:
    return float(math.floor(min(times))) if len(times) else 0.0


def sync(
    labels: Sequence[rio.LabelRow],
    timestamps: Sequence[rio.TimestampRow],
    transforms: Mapping[tuple[str, str], CameraTransform],
    residuals: bool = True,
) -> tuple[list[rio.TimestampRow], ClockSynchronizer]:
    """Estimate offsets and residuals from annotations; return timestamps with the corrected column filled."""
    ref = _reference([r.timestamp for r in timestamps] + [r.timestamp for r in labels])
    groups: dict[tuple[str, str], list[int]] = defaultdict(list)
    for i, r in enumerate(labels):
        groups[(r.camera, r.direction)].append(i)
    wx = np.ones(len(labels))
    wy = np.ones(len(labels))
    for key, idx in groups.items():
        tf = transforms.get(key)
        if tf is None:
            log.warning("no transform for %s %s; unit observation weights", *key)
            continue
        xy = np.array([[labels[i].x, labels[i].y] for i in idx])
        wx[idx] = tf.pixels_per_foot(xy, axis=0)
        wy[idx] = tf.pixels_per_foot(xy, axis=1)
    obs: dict[int, list[WeightedObservation]] = defaultdict(list)
    for i, r in enumerate(labels):
        obs[r.vehicle_id].append(
            WeightedObservation(r.timestamp - ref, r.x, r.y, float(wx[i]), r.camera, r.frame_index, float(wy[i]))
        )
    sync_ = ClockSynchronizer(residuals=residuals).fit(obs)
    out = []
    for r in timestamps:
        t = (r.timestamp - ref) + sync_.offsets_.get(r.camera, 0.0) + sync_.residuals_.get((r.camera, r.frame_index), 0.0)
        out.append(replace(r, corrected_timestamp=ref + t))
    return out, sync_


# ---- track ------------------------------------------------------------------------


def _frame_times(timestamps: Sequence[rio.TimestampRow] | None, dets: Sequence[rio.DetectionRow]):
    if timestamps:
        return {(r.camera, r.frame_index): r.corrected_timestamp for r in timestamps}
    return {(r.camera, r.frame_index): r.timestamp for r in dets}


def detection_streams(
    dets: Sequence[rio.DetectionRow], timestamps: Sequence[rio.TimestampRow] | None = None
) -> tuple[dict[str, list[DetectionFrame]], float]:
    """Per-camera frames on corrected time relative to a whole-second reference."""
    times = _frame_times(timestamps, dets)
    if not times:
        return {}, 0.0
    ref = _reference(list(times.values()))
    by_frame: dict[tuple[str, int], list] = defaultdict(list)
    for r in dets:
        key = (r.camera, r.frame_index)
        if key not in times:
            raise ValidationError(f"detection for unknown frame {key}")
        by_frame[key].append(r)
    streams: dict[str, list[DetectionFrame]] = defaultdict(list)
    for (cam, idx), t in sorted(times.items()):
        rel = t - ref
        items = tuple(r.detection(rel) for r in by_frame.get((cam, idx), ()))
        streams[cam].append(DetectionFrame(cam, idx, rel, items))
    return dict(streams), ref


def tracklets_to_labels(tracklets: Sequence[Tracklet], ref: float, hz: float) -> list[rio.LabelRow]:
    rows = []
    for tr in tracklets:
        cam = "+".join(tr.cameras) if tr.cameras else "fused"
        tu, xu, yu = tr.positions()
        for t, x, y in zip(tu, xu, yu):
            rows.append(rio.LabelRow.from_box(int(round(t * hz)), ref + float(t), int(tr.id), tr.box(x, y), cam))
    return sorted(rows, key=lambda r: (r.frame_index, r.vehicle_id))


def track(
    dets: Sequence[rio.DetectionRow], timestamps: Sequence[rio.TimestampRow] | None, config: TrackerConfig
) -> list[rio.LabelRow]:
    streams, ref = detection_streams(dets, timestamps)
    tracklets = track_scene(streams, config)
    return tracklets_to_labels(tracklets, ref, config.tick_hz)


# ---- evaluate ---------------------------------------------------------------------


def ground_truth(labels: Sequence[rio.LabelRow], timestamps: Sequence[rio.TimestampRow] | None, ref: float):
    times = {(r.camera, r.frame_index): r.corrected_timestamp for r in timestamps} if timestamps else {}
    gt: dict[int, list] = defaultdict(list)
    for r in labels:
        t = times.get((r.camera, r.frame_index), r.timestamp)
        gt[r.vehicle_id].append((t - ref, r.box))
    return gt


def labels_to_tracklets(rows: Sequence[rio.LabelRow], ref: float) -> list[Tracklet]:
    groups: dict[int, list[rio.LabelRow]] = defaultdict(list)
    for r in rows:
        groups[r.vehicle_id].append(r)
    out = []
    for vid in sorted(groups):
        g = sorted(groups[vid], key=lambda r: r.timestamp)
        dirs = {r.direction for r in g}
        if len(dirs) > 1:
            raise ValidationError(f"object {vid} changes direction")
        counts = Counter(r.vehicle_class for r in g)
        best = max(counts.values())
        cls = next(r.vehicle_class for r in reversed(g) if counts[r.vehicle_class] == best)
        dims = tuple(float(v) for v in np.mean([[r.length, r.width, r.height] for r in g], axis=0))
        cams = tuple(sorted({c for r in g for c in r.camera.split("+") if c != "fused"}))
        out.append(Tracklet(
            vid, g[0].direction, cls, [r.timestamp - ref for r in g], [r.x for r in g], [r.y for r in g], dims, cams,
        ))
    return out


@dataclass(frozen=True)
class EvalOutput:
    report: MetricsReport
    timespace: list[TimeSpacePoint]
    ref: float


def evaluate_labels(
    gt_labels: Sequence[rio.LabelRow],
    pred_labels: Sequence[rio.LabelRow],
    timestamps: Sequence[rio.TimestampRow] | None = None,
    config: EvalConfig = EvalConfig(),
    pipeline: str = "",
    scene: str = "",
) -> EvalOutput:
    if not gt_labels:
        raise ValidationError("ground truth is empty")
    times = [r.corrected_timestamp for r in timestamps] if timestamps else [r.timestamp for r in gt_labels]
    ref = _reference(times)
    gt = resample_ground_truth(ground_truth(gt_labels, timestamps, ref), config.resample_rate)
    pred = labels_to_tracklets(pred_labels, ref)
    ev = evaluate(gt, pred, config, pipeline, scene)
    return EvalOutput(ev.report, emit_timespace(ev.frames, ev.matches), ref)


TIMESPACE_COLUMNS = ("direction", "lane", "timestamp", "x", "status", "object_id")


@dataclass(frozen=True)
class TimeSpaceRow:
    direction: str
    lane: int
    timestamp: float
    x: float
    status: str
    object_id: int

    def _cells(self) -> list[str]:
        return [self.direction, str(self.lane), rio.fmt_time(self.timestamp), rio.fmt(self.x), self.status,
                str(self.object_id)]


def timespace_rows(points: Sequence[TimeSpacePoint], ref: float) -> list[TimeSpaceRow]:
    return [TimeSpaceRow(p.direction, p.lane, ref + p.t, p.x, p.status, int(p.object_id)) for p in points]


def write_timespace(path, rows: Sequence[TimeSpaceRow]) -> None:
    rio._write_table(path, TIMESPACE_COLUMNS, rows)


def read_timespace(path) -> list[TimeSpaceRow]:
    def parse(c):
        if c[4] not in ("TP", "FP", "FN"):
            raise ValueError(f"status must be TP, FP or FN, got {c[4]!r}")
        return TimeSpaceRow(rio._direction(c[0]), int(c[1]), rio._float(c[2]), rio._float(c[3]), c[4], int(c[5]))

    return rio._read_table(path, TIMESPACE_COLUMNS, parse)


def _eval_job(args):
    gt_path, ts_path, pred_path, config, scene = args
    gt = rio.read_labels(gt_path)
    ts = rio.read_timestamps(ts_path) if ts_path else None
    pred = rio.read_labels(pred_path)
    return evaluate_labels(gt, pred, ts, config, Path(pred_path).stem.removesuffix("_labels"), scene)


def evaluate_files(
    gt_path, pred_paths: Sequence, timestamps_path=None, config: EvalConfig = EvalConfig(), out_dir=None,
    jobs: int = 1, scene: str | None = None,
) -> list[EvalOutput]:
    """Score every prediction file against one ground truth; optionally write report and time-space files."""
    scene = scene or Path(gt_path).stem.removesuffix("_labels")
    args = [(gt_path, timestamps_path, p, config, scene) for p in pred_paths]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_eval_job, args))
    else:
        results = [_eval_job(a) for a in args]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        reports = [r.report for r in results]
        (out_dir / "report.json").write_text(reports_to_json(reports))
        (out_dir / "report.csv").write_text(reports_to_csv(reports))
        for r in results:
            write_timespace(out_dir / f"{r.report.pipeline}_timespace.csv", timespace_rows(r.timespace, r.ref))
    return results


def combine_reports(paths: Sequence) -> list[MetricsReport]:
    out = []
    for p in paths:
        try:
            out.extend(reports_from_json(Path(p).read_text()))
        except (json.JSONDecodeError, TypeError) as e:
            raise ParseError(f"not a report file: {e}", p) from e
    return sorted(out, key=lambda r: (r.scene, r.pipeline))


__all__ = [
    "DETECTOR_SOURCES", "EvalOutput", "PipelineSpec", "RigConfig", "SimulationSpec", "TIMESPACE_COLUMNS",
    "TRACKERS", "FUSIONS", "TimeSpaceRow", "build_simulation", "calibrate", "calibration_point_rows",
    "combine_reports", "detection_rows", "detection_streams", "evaluate_files", "evaluate_labels", "ground_truth",
    "label_rows", "labels_to_tracklets", "read_timespace", "resampled_rows", "scene_paths", "simulate", "sync",
    "timespace_rows", "timestamp_rows", "track", "tracklets_to_labels", "write_timespace",
]
