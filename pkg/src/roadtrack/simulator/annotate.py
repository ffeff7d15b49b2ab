"""Rendering, calibration and annotation of synthetic scenes."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..boxes import Box3D, footprint, heading
from ..geometry import CameraTransform, Correspondence, ImagePoint, RoadPoint, fit_camera_transform
from ..timesync import FrameStamp
from .cameras import CameraConfig, FrameTiming, RoadShape, frame_timing
from .scene import SceneConfig, SceneTruth, rng_for

TICK_SPACING = 40.0
TICK_LENGTH = 10.0
N_VERTICAL_LINES = 4


@dataclass(frozen=True, eq=False)
class Frame:
    camera: str
    index: int
    content_time: float
    stamp: FrameStamp
    boxes: tuple  # ((vehicle id, Box3D), ...)
    doubled: bool = False


def visible(box: Box3D, cam: CameraConfig) -> bool:
    if box.direction not in cam.directions:
        return False
    x0, x1, _, _ = footprint(box.x, box.y, box.l, box.w, heading(box.direction))
    return bool(x1 > cam.fov[0] and x0 < cam.fov[1])


def render_camera(
    truth: SceneTruth, cam: CameraConfig, timing: FrameTiming | None = None, seed: int | None = None
) -> list[Frame]:
    """Frames of ``cam`` with the true boxes of every vehicle whose footprint meets the fov."""
    if timing is None:
        timing = frame_timing(cam, truth.t_start, truth.t_end, truth.config.seed if seed is None else seed)
    tc = np.asarray(timing.content_time)
    per_frame: list[list] = [[] for _ in tc]
    for v in truth.vehicles:
        if v.direction not in cam.directions:
            continue
        xs = v.x(tc)
        s = heading(v.direction)
        x0 = np.minimum(xs, xs + s * v.l)
        x1 = np.maximum(xs, xs + s * v.l)
        for j in np.flatnonzero((x1 > cam.fov[0]) & (x0 < cam.fov[1])):
            per_frame[j].append((v.vid, Box3D(float(xs[j]), v.y, v.l, v.w, v.h, v.direction, v.cls)))
    return [
        Frame(cam.id, j, float(t), FrameStamp(cam.id, j, float(raw)), tuple(per_frame[j]), bool(timing.doubled[j]))
        for j, (t, raw) in enumerate(zip(tc, timing.raw))
    ]


@dataclass(frozen=True, eq=False)
class Calibration:
    """Fitted transform for one (camera, direction) and the point sets behind it."""

    transform: CameraTransform
    ticks: list  # Correspondence
    vertical_lines: list  # ((u1, v1), (u2, v2))
    above: list  # (RoadPoint, ImagePoint) in roadway coordinates
    lane_pixels: list  # ImagePoint along the solid line
    lane_y: float = 0.0


def _lane_lines(cfg: SceneConfig, direction: str) -> np.ndarray:
    return heading(direction) * cfg.lane_width * np.arange(cfg.lanes_per_direction + 1)


def calibrate_camera(
    cam: CameraConfig,
    cfg: SceneConfig,
    road: RoadShape,
    direction: str,
    seed: int,
    noise_px: float = 1.0,
    central: float = 0.7,
) -> Calibration:
    """Simulated manual calibration: lane-tick homography, vertical vanishing point, p33 and curve."""
    rng = rng_for(seed, "calib", cam.id, direction)
    x0, x1 = cam.fov
    pad = 0.5 * (1.0 - central) * (x1 - x0)
    lo, hi = x0 + pad, x1 - pad
    first = np.ceil(lo / TICK_SPACING) * TICK_SPACING
    starts = np.arange(first, hi, TICK_SPACING)
    xs = np.unique(np.concatenate([starts, starts + TICK_LENGTH]))
    xs = xs[(xs >= lo) & (xs <= hi)]
    if len(xs) < 2:
        xs = np.array([lo, hi])
    lines = _lane_lines(cfg, direction)
    road_pts = np.array([[x, y, 0.0] for x in xs for y in lines])
    uv = cam.project_world(road.to_world(road_pts)) + rng.normal(0.0, noise_px, (len(road_pts), 2))
    ticks = [Correspondence(ImagePoint(*p), RoadPoint(*r)) for p, r in zip(uv, road_pts)]

    # solid edge line, sampled across the whole fov
    lane_y = float(lines[-1])
    lx = np.linspace(x0, x1, 20)
    lane_uv = cam.project_world(road.to_world(np.column_stack([lx, np.full_like(lx, lane_y)])))
    lane_uv = lane_uv + rng.normal(0.0, noise_px, lane_uv.shape)

    # vertical posts at the road edge
    post_x = rng.uniform(lo, hi, N_VERTICAL_LINES)
    post_y = rng.uniform(lines.min(), lines.max(), N_VERTICAL_LINES)
    segs = []
    for px, py in zip(post_x, post_y):
        a, b = cam.project_world(road.to_world([[px, py, 0.0], [px, py, 15.0]]))
        segs.append((a + rng.normal(0, noise_px, 2), b + rng.normal(0, noise_px, 2)))

    # above-plane points (box tops)
    n_above = 8
    ax = rng.uniform(lo, hi, n_above)
    ay = rng.uniform(lines.min(), lines.max(), n_above)
    az = rng.uniform(4.0, 14.0, n_above)
    above_road = np.column_stack([ax, ay, az])
    above_uv = cam.project_world(road.to_world(above_road)) + rng.normal(0, noise_px, (n_above, 2))
    above = [(RoadPoint(*r), ImagePoint(*p)) for r, p in zip(above_road, above_uv)]
    lane_px = [ImagePoint(*p) for p in lane_uv]
    transform = fit_camera_transform(cam.id, direction, ticks, segs, above, lane_px, lane_y)
    return Calibration(transform, ticks, segs, above, lane_px, lane_y)


@dataclass(frozen=True)
class Annotation:
    vid: int
    box: Box3D  # as annotated in this camera (homography + curve)
    camera: str
    frame_index: int
    t_raw: float
    content_time: float
    weight: float  # pixels per foot along x at the annotation
    weight_y: float
    curve_offset: float  # f(x) removed by the curve correction


def annotate(frames: list[Frame], transforms: dict[str, CameraTransform], cam: CameraConfig, road: RoadShape) -> list[Annotation]:
    """Map every true box through the true camera and back through the fitted transform."""
    rows = [(fr, vid, b) for fr in frames for vid, b in fr.boxes if b.direction in transforms]
    out: list[Annotation | None] = [None] * len(rows)
    for direction, tf in transforms.items():
        idx = [i for i, (_, _, b) in enumerate(rows) if b.direction == direction]
        if not idx:
            continue
        pts = np.array([[rows[i][2].x, rows[i][2].y, 0.0] for i in idx])
        uv = cam.project_world(road.to_world(pts))
        xy = tf.image_to_road(uv)
        f = tf.curve(xy[:, 0])
        wx = tf.pixels_per_foot(xy, axis=0)
        wy = tf.pixels_per_foot(xy, axis=1)
        for k, i in enumerate(idx):
            fr, vid, b = rows[i]
            out[i] = Annotation(
                vid, replace(b, x=float(xy[k, 0]), y=float(xy[k, 1])), cam.id, fr.index, fr.stamp.t_raw,
                fr.content_time, float(wx[k]), float(wy[k]), float(f[k]),
            )
    return [a for a in out if a is not None]
