"""Synthetic camera rig and frame timing.

Cameras hang from roadside poles and each watches one stretch of road. The
physical road bends gently: roadway point ``(x, y, z)`` sits at world position
``(x, y + g(x), z)`` with ``g(x) = (x - x_ref)^2 / (2 R)``, so a single planar
homography per view is only approximately right and the curve correction has
something to remove.

Frame ``n`` of a camera carries a *content time* (when its image was really
captured) and a *raw stamp*. Raw stamps follow ``raw = true - o - eps`` and are
then floored to 0.01 s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..boxes import DIRECTIONS
from ..exceptions import ValidationError
from .scene import SceneConfig, rng_for

FPS = 30.0
IMAGE_SIZE = (3840, 2160)
POLE_HEIGHT = 110.0
EPOCH = 1_650_000_000.0


@dataclass(frozen=True)
class RoadShape:
    """Lateral bend of the physical road."""

    radius: float = 5000.0
    x_ref: float = 1000.0

    def offset(self, x):
        if not math.isfinite(self.radius):
            return np.zeros_like(np.asarray(x, dtype=float))
        return (np.asarray(x, dtype=float) - self.x_ref) ** 2 / (2.0 * self.radius)

    def to_world(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        if pts.shape[1] == 2:
            pts = np.column_stack([pts, np.zeros(len(pts))])
        pts[:, 1] += self.offset(pts[:, 0])
        return pts


@dataclass(frozen=True, eq=False)
class CameraConfig:
    id: str
    fov: tuple[float, float]
    matrix: np.ndarray  # true world -> pixel 3x4 projection
    directions: tuple[str, ...] = DIRECTIONS
    nominal_fps: float = FPS
    phase: float = 0.0
    clock_offset: float = 0.0
    quantization: float = 0.01
    p_skip: float = 0.0
    p_double: float = 0.0
    skip_frames: frozenset = frozenset()
    double_frames: frozenset = frozenset()
    # extra capture delay for listed frames, seconds (stamp unchanged)
    frame_shifts: dict = field(default_factory=dict)
    image_size: tuple[int, int] = IMAGE_SIZE
    pole: tuple[float, float, float] = (0.0, 0.0, POLE_HEIGHT)

    def __post_init__(self):
        if not 0 <= self.phase < 1.0 / self.nominal_fps + 1e-12:
            raise ValidationError("phase must lie in [0, 1/fps)")
        for p in (self.p_skip, self.p_double):
            if not 0 <= p <= 1:
                raise ValidationError("probabilities must lie in [0, 1]")
        if self.quantization < 0:
            raise ValidationError("quantization must be >= 0")
        if not self.fov[1] > self.fov[0]:
            raise ValidationError("empty field of view")
        m = np.array(self.matrix, dtype=float).reshape(3, 4)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def project_world(self, world) -> np.ndarray:
        world = np.atleast_2d(np.asarray(world, dtype=float))
        hom = np.column_stack([world, np.ones(len(world))]) @ self.matrix.T
        return hom[:, :2] / hom[:, 2:]

    def in_frame(self, uv, margin: float = 0.0) -> np.ndarray:
        uv = np.atleast_2d(uv)
        w, h = self.image_size
        return (uv[:, 0] >= margin) & (uv[:, 0] < w - margin) & (uv[:, 1] >= margin) & (uv[:, 1] < h - margin)


def _look_at(center, target, focal, principal):
    center = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.vstack([right, down, fwd])
    k = np.array([[focal, 0, principal[0]], [0, focal, principal[1]], [0, 0, 1.0]])
    return k @ np.column_stack([rot, -rot @ center])


def fov_length(roadway_length: float, n_cameras: int, overlap: float) -> float:
    return roadway_length / (1.0 + (n_cameras - 1) * (1.0 - overlap))


def build_camera_layout(
    cfg: SceneConfig,
    n_cameras: int = 16,
    overlap: float = 0.3,
    n_poles: int = 3,
    road: RoadShape | None = None,
    setback: float = 30.0,
    fill: float = 0.85,
) -> list[CameraConfig]:
    """Evenly tiled fields of view, each watched from the nearest pole.

    The focal length and principal point of every camera are chosen so that
    the whole fov rectangle (both directions, all lanes) fills ``fill`` of the
    image. Timing fields are left at their defaults.
    """
    if n_cameras < 1:
        raise ValidationError("need at least one camera")
    road = road or RoadShape(x_ref=cfg.roadway_length / 2)
    length = fov_length(cfg.roadway_length, n_cameras, overlap)
    step = length * (1.0 - overlap)
    half = cfg.lanes_per_direction * cfg.lane_width
    y_pole = -(half + setback)
    poles = [cfg.roadway_length * (k + 0.5) / n_poles for k in range(n_poles)]
    y_lo = -half if "WB" in cfg.directions else 0.0
    y_hi = half if "EB" in cfg.directions else 0.0
    cams = []
    for i in range(n_cameras):
        x0 = i * step
        x1 = x0 + length
        xc = 0.5 * (x0 + x1)
        px = min(poles, key=lambda p: abs(p - xc))
        center = (px, y_pole + float(road.offset(px)), POLE_HEIGHT)
        target = road.to_world([[xc, 0.5 * (y_lo + y_hi), 0.0]])[0]
        corners = road.to_world(
            [[x, y, z] for x in np.linspace(x0, x1, 9) for y in (y_lo, y_hi) for z in (0.0, 14.0)]
        )
        unit = _look_at(center, target, 1.0, (0.0, 0.0))
        uv = unit @ np.column_stack([corners, np.ones(len(corners))]).T
        uv = (uv[:2] / uv[2]).T
        span = uv.max(axis=0) - uv.min(axis=0)
        focal = fill * min(IMAGE_SIZE[0] / span[0], IMAGE_SIZE[1] / span[1])
        mid = 0.5 * (uv.max(axis=0) + uv.min(axis=0))
        principal = (IMAGE_SIZE[0] / 2 - focal * mid[0], IMAGE_SIZE[1] / 2 - focal * mid[1])
        p = _look_at(center, target, focal, principal)
        cams.append(CameraConfig(id=f"c{i:02d}", fov=(x0, x1), matrix=p / np.abs(p).max(), pole=center))
    return cams


def with_timing(
    cams: list[CameraConfig],
    seed: int,
    offset_range: float = 0.3,
    p_skip: float = 0.0,
    p_double: float = 0.0,
    random_phase: bool = True,
) -> list[CameraConfig]:
    """Draw phase and clock offset per camera; the first camera keeps offset 0."""
    from dataclasses import replace

    out = []
    for k, cam in enumerate(cams):
        rng = rng_for(seed, "timing", cam.id)
        phase = float(rng.uniform(0.0, 1.0 / cam.nominal_fps)) if random_phase else 0.0
        offset = 0.0 if k == 0 else float(rng.uniform(-offset_range, offset_range))
        out.append(replace(cam, phase=phase, clock_offset=offset, p_skip=p_skip, p_double=p_double))
    return out


@dataclass(frozen=True, eq=False)
class FrameTiming:
    """Per-frame timing of one camera; arrays indexed by frame index."""

    camera: str
    content_time: np.ndarray  # true capture time of the frame's image (scene seconds)
    raw: np.ndarray  # reported stamp (epoch seconds, quantised)
    residual: np.ndarray  # injected eps before quantisation
    doubled: np.ndarray  # bool: frame repeats the previous one


def frame_timing(cam: CameraConfig, t_start: float, t_end: float, seed: int, epoch: float = EPOCH) -> FrameTiming:
    """Capture and stamp times for ``cam`` over ``[t_start, t_end]``.

    A skip event on frame n means a capture slot was lost: frame n shows the
    slot after next, two periods after its predecessor, yet is stamped only one
    period later (``eps = +1/fps``); later frames keep the extra slot and are
    stamped correctly. A double event repeats frame n-1 verbatim (same image,
    same stamp) and frame n+1, captured two periods after frame n-1, is stamped
    one period after it.
    """
    dt = 1.0 / cam.nominal_fps
    n = int(math.floor((t_end - t_start - cam.phase) / dt + 1e-9)) + 1
    rng = rng_for(seed, "frames", cam.id)
    u = rng.uniform(size=n)
    idx = np.arange(n)
    skip = (u < cam.p_skip) | np.isin(idx, list(cam.skip_frames))
    double = ((u >= cam.p_skip) & (u < cam.p_skip + cam.p_double)) | np.isin(idx, list(cam.double_frames))
    double[0] = False
    skip &= ~double
    skip[0] = False
    content = t_start + cam.phase + dt * (idx + np.cumsum(skip))
    eps = np.zeros(n)
    eps[skip] = dt
    late = np.flatnonzero(double) + 1
    eps[late[late < n]] = dt
    for j, shift in cam.frame_shifts.items():
        if 0 <= j < n:
            content[j] += shift
            eps[j] += shift
    scaled = epoch + content - cam.clock_offset - eps
    raw = quantize(scaled, cam.quantization)
    for j in np.flatnonzero(double):
        content[j] = content[j - 1]
        raw[j] = raw[j - 1]
        eps[j] = eps[j - 1]
    keep = content <= t_end + 1e-9
    return FrameTiming(cam.id, content[keep], raw[keep], eps[keep], double[keep])


def quantize(t, q: float = 0.01) -> np.ndarray:
    """Floor to multiples of ``q`` (robust to binary rounding of decimal steps)."""
    t = np.asarray(t, dtype=float)
    if q <= 0:
        return t.copy()
    k = np.floor(t / q + 1e-6)
    return np.round(k * q, 10)
