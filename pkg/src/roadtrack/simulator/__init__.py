"""Synthetic multi-camera traffic scenes with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from ..boxes import Box3D, corners_array, heading
from ..geometry import CameraTransform, road_to_image
from .annotate import Annotation, Calibration, Frame, annotate, calibrate_camera, render_camera, visible
from .cameras import (
    EPOCH,
    CameraConfig,
    FrameTiming,
    RoadShape,
    build_camera_layout,
    fov_length,
    frame_timing,
    quantize,
    with_timing,
)
from .detections import NO_NOISE, DetectionFrame, NoiseConfig, Occlusion, corrupt_detections, greedy_nms
from .scene import PRESETS, PROFILES, SceneConfig, SceneTruth, VehicleTruth, generate_scene, preset, rng_for

__all__ = [
    "Annotation", "Calibration", "CameraConfig", "DetectionFrame", "EPOCH", "Frame", "FrameTiming", "NO_NOISE",
    "NoiseConfig", "Occlusion", "PRESETS", "PROFILES", "RoadShape", "SceneConfig", "SceneTruth", "SimulatedScene",
    "VehicleTruth", "annotate", "build_camera_layout", "build_scene", "calibrate_camera", "corrupt_detections",
    "fov_length", "frame_timing", "generate_scene", "greedy_nms", "preset", "quantize", "render_camera",
    "rng_for", "visible", "with_timing",
]


@dataclass(frozen=True, eq=False)
class SimulatedScene:
    truth: SceneTruth
    cameras: tuple[CameraConfig, ...]
    road: RoadShape
    timings: dict
    calibrations: dict  # (camera, direction) -> Calibration
    frames: dict  # camera -> [Frame] with true boxes
    epoch: float = EPOCH

    @property
    def config(self) -> SceneConfig:
        return self.truth.config

    @property
    def seed(self) -> int:
        return self.truth.config.seed

    @cached_property
    def transforms(self) -> dict[tuple[str, str], CameraTransform]:
        return {k: c.transform for k, c in self.calibrations.items()}

    def camera(self, cam_id: str) -> CameraConfig:
        return next(c for c in self.cameras if c.id == cam_id)

    @cached_property
    def annotations(self) -> list[Annotation]:
        out = []
        for cam in self.cameras:
            tfs = {d: self.calibrations[(cam.id, d)].transform for d in cam.directions if (cam.id, d) in self.calibrations}
            out.extend(annotate(self.frames[cam.id], tfs, cam, self.road))
        return out

    @cached_property
    def annotated_frames(self) -> dict[str, list[Frame]]:
        """Frames whose boxes are the per-camera annotations instead of the truth."""
        by_frame: dict[tuple[str, int], list] = {}
        for a in self.annotations:
            by_frame.setdefault((a.camera, a.frame_index), []).append((a.vid, a.box))
        return {
            cam: [replace(f, boxes=tuple(by_frame.get((cam, f.index), ()))) for f in frames]
            for cam, frames in self.frames.items()
        }

    def true_capture_time(self, camera: str, frame_index: int) -> float:
        """Scene-clock capture time expressed on the raw-stamp (epoch) scale."""
        return self.epoch + float(self.timings[camera].content_time[frame_index])

    def lane_rank(self, cam: CameraConfig):
        half = self.config.lanes_per_direction * self.config.lane_width
        y_pole = cam.pole[1] - float(self.road.offset(cam.pole[0]))

        near = abs(-half + self.config.lane_width / 2 - y_pole)
        far = abs(half - self.config.lane_width / 2 - y_pole)
        span = max(far - near, 1e-9)

        def rank(b: Box3D) -> float:
            return min(max((abs(b.y - y_pole) - near) / span, 0.0), 1.0)

        return rank

    def projector(self, cam: CameraConfig):
        def project(boxes) -> np.ndarray:
            pts = corners_array(boxes).reshape(-1, 3)
            return cam.project_world(self.road.to_world(pts)).reshape(-1, 8, 2)

        return project

    def lane_centres(self) -> list[tuple[str, float]]:
        cfg = self.config
        return [(d, heading(d) * cfg.lane_width * (i + 0.5)) for d in cfg.directions for i in range(cfg.lanes_per_direction)]

    def detections(self, noise: NoiseConfig = NO_NOISE, seed: int | None = None) -> dict[str, list[DetectionFrame]]:
        """Detector output per camera, stamped with raw times."""
        seed = self.seed if seed is None else seed
        return {
            cam.id: corrupt_detections(
                self.annotated_frames[cam.id], noise, seed, self.lane_rank(cam), self.projector(cam), cam.fov,
                self.lane_centres(),
            )
            for cam in self.cameras
        }


def build_scene(
    cfg: SceneConfig,
    n_cameras: int = 16,
    overlap: float = 0.3,
    road: RoadShape | None = None,
    calib_noise_px: float = 1.0,
    offset_range: float = 0.3,
    p_skip: float = 0.0,
    p_double: float = 0.0,
    random_phase: bool = True,
    cameras: list[CameraConfig] | None = None,
) -> SimulatedScene:
    """Truth, camera rig, frame timing, calibration and annotations for one seed."""
    truth = generate_scene(cfg)
    road = road or RoadShape(x_ref=cfg.roadway_length / 2)
    if cameras is None:
        cameras = build_camera_layout(cfg, n_cameras, overlap, road=road)
        cameras = with_timing(cameras, cfg.seed, offset_range, p_skip, p_double, random_phase)
    timings = {c.id: frame_timing(c, truth.t_start, truth.t_end, cfg.seed) for c in cameras}
    calibs = {}
    for c in cameras:
        for d in c.directions:
            if d in cfg.directions:
                calibs[(c.id, d)] = calibrate_camera(c, cfg, road, d, cfg.seed, calib_noise_px)
    frames = {c.id: render_camera(truth, c, timings[c.id]) for c in cameras}
    return SimulatedScene(truth, tuple(cameras), road, timings, calibs, frames)
