"""Parametric detector: noisy, incomplete and polluted copies of annotated boxes."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ..boxes import Box3D, Detection, boxes_to_array, greedy_nms, iou_matrix
from ..exceptions import ValidationError
from .scene import CLASS_DIMS, rng_for


@dataclass(frozen=True)
class Occlusion:
    camera: str
    vid: int
    start: int
    length: int


@dataclass(frozen=True)
class NoiseConfig:
    pos_sigma: tuple[float, float] = (0.0, 0.0)
    dim_sigma: float = 0.0
    p_fn: float = 0.0  # uniform drop probability
    p_fn_far: float = 0.0  # extra drop probability for the lane farthest from the camera
    p_occlusion: float = 0.0  # chance a (camera, vehicle) pair gets one random window
    max_occlusion: int = 150  # frames
    occlusions: tuple[Occlusion, ...] = ()
    fp_rate: float = 0.0  # expected false positives per frame
    conf_true: tuple[float, float] = (8.0, 2.0)  # beta parameters
    conf_fp: tuple[float, float] = (2.0, 5.0)
    pixel_nms: float = 0.4
    road_nms: float = 0.01
    nms: bool = True

    def __post_init__(self):
        for p in (self.p_fn, self.p_fn_far, self.p_occlusion):
            if not 0.0 <= p <= 1.0:
                raise ValidationError("probabilities must lie in [0, 1]")
        if min(self.pos_sigma) < 0 or self.dim_sigma < 0 or self.fp_rate < 0:
            raise ValidationError("noise scales must be >= 0")
        if self.max_occlusion < 1:
            raise ValidationError("max_occlusion must be >= 1")

    @property
    def is_clean(self) -> bool:
        return (
            max(self.pos_sigma) == 0 and self.dim_sigma == 0 and self.p_fn == 0 and self.p_fn_far == 0
            and self.p_occlusion == 0 and not self.occlusions and self.fp_rate == 0
        )


NO_NOISE = NoiseConfig(nms=False)


@dataclass(frozen=True, eq=False)
class DetectionFrame:
    camera: str
    index: int
    t: float
    detections: tuple[Detection, ...]


def _pixel_rects(boxes: Sequence[Box3D], project: Callable[[Sequence[Box3D]], np.ndarray]) -> np.ndarray:
    uv = np.asarray(project(boxes), dtype=float).reshape(len(boxes), 8, 2)
    return np.column_stack([uv[:, :, 0].min(1), uv[:, :, 1].min(1), uv[:, :, 0].max(1), uv[:, :, 1].max(1)])


def _rect_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=(inter > 0) & np.isfinite(union))
    return out


def corrupt_detections(
    frames,
    noise: NoiseConfig,
    seed: int,
    lane_rank: Callable[[Box3D], float] | None = None,
    project: Callable[[Box3D], np.ndarray] | None = None,
    fov: tuple[float, float] | None = None,
    lane_centres: Sequence[tuple[str, float]] = (),
) -> list[DetectionFrame]:
    """Turn one camera's box frames into detection frames.

    ``frames`` is a sequence of objects with ``camera``, ``index``, ``stamp`` (or
    ``t``) and ``boxes`` of ``(vehicle id, Box3D)``. ``lane_rank`` maps a box to
    0 (nearest lane to the camera) .. 1 (farthest); ``project`` maps a list of
    boxes to their (n, 8, 2) pixel corners for the image-space NMS; ``fov`` and ``lane_centres``
    place false positives.

    Draw order per camera: occlusion windows (vehicles in id order), then per
    frame: drops, position/dimension noise and confidence for each box, then
    the false-positive count and their boxes.
    """
    frames = list(frames)
    if not frames:
        return []
    cam = frames[0].camera
    rng = rng_for(seed, "detect", cam)
    windows: dict[int, list[tuple[int, int]]] = {}
    for occ in noise.occlusions:
        if occ.camera == cam:
            windows.setdefault(occ.vid, []).append((occ.start, occ.start + occ.length))
    if noise.p_occlusion > 0:
        vids = sorted({vid for f in frames for vid, _ in f.boxes})
        n = len(frames)
        for vid in vids:
            if rng.uniform() < noise.p_occlusion:
                length = int(rng.integers(1, noise.max_occlusion + 1))
                start = int(rng.integers(0, max(n - 1, 1)))
                windows.setdefault(vid, []).append((start, start + length))

    out = []
    for fr in frames:
        t = fr.stamp.t_raw if hasattr(fr, "stamp") else fr.t
        dets: list[Detection] = []
        for vid, b in fr.boxes:
            occluded = any(a <= fr.index < e for a, e in windows.get(vid, ()))
            p_drop = noise.p_fn + (noise.p_fn_far * lane_rank(b) if lane_rank is not None else 0.0)
            u = rng.uniform()
            if occluded or u < p_drop:
                continue
            if noise.is_clean:
                dets.append(Detection(b, 1.0, cam, t, vid))
                continue
            dx, dy = rng.normal(0.0, 1.0, 2) * noise.pos_sigma
            dl, dw, dh = rng.normal(0.0, noise.dim_sigma, 3)
            conf = float(rng.beta(*noise.conf_true))
            nb = replace(b, x=b.x + dx, y=b.y + dy, l=max(b.l + dl, 1.0), w=max(b.w + dw, 1.0), h=max(b.h + dh, 1.0))
            dets.append(Detection(nb, conf, cam, t, vid))
        if noise.fp_rate > 0:
            for _ in range(int(rng.poisson(noise.fp_rate))):
                direction, yc = lane_centres[int(rng.integers(len(lane_centres)))]
                cls = list(CLASS_DIMS)[int(rng.integers(len(CLASS_DIMS)))]
                l, w, h = np.array(CLASS_DIMS[cls]) * rng.uniform(0.9, 1.1, 3)
                x = float(rng.uniform(*fov))
                conf = float(rng.beta(*noise.conf_fp))
                dets.append(Detection(Box3D(x, yc + float(rng.normal(0, 1.0)), l, w, h, direction, cls), conf, cam, t, None))
        if noise.nms and len(dets) > 1:
            dets = _two_stage_nms(dets, noise, project)
        out.append(DetectionFrame(cam, fr.index, t, tuple(dets)))
    return out


def _two_stage_nms(dets: list[Detection], noise: NoiseConfig, project) -> list[Detection]:
    scores = np.array([d.confidence for d in dets])
    if project is not None:
        rects = _pixel_rects([d.box for d in dets], project)
        keep = greedy_nms(_rect_iou(rects, rects) - np.eye(len(dets)), scores, noise.pixel_nms)
        dets = [dets[i] for i in keep]
        scores = scores[keep]
    out = []
    for direction in ("EB", "WB"):
        idx = [i for i, d in enumerate(dets) if d.box.direction == direction]
        if not idx:
            continue
        arr = boxes_to_array([dets[i].box for i in idx])
        iou = iou_matrix(arr, arr) - np.eye(len(idx))
        keep = greedy_nms(iou, scores[idx], noise.road_nms)
        out.extend(dets[idx[k]] for k in keep)
    order = {id(d): i for i, d in enumerate(dets)}
    return sorted(out, key=lambda d: order[id(d)])
