"""Vehicle kinematics for synthetic scenes.

Each lane holds one platoon. The platoon leader follows a speed profile built
from constant-jerk transitions, so its position is a C2 piecewise cubic. Every
follower copies its predecessor's trajectory shifted by a reaction time
``tau >= 1 s`` and a jam spacing ``d`` (Newell's simplified car-following
rule), which keeps positions piecewise cubic and guarantees collision-free
motion whenever ``d`` exceeds the follower length plus a gap.

Positions are generated as progress ``xi`` along the direction of travel and
mapped to roadway ``x`` with ``x = xi`` (EB) or ``x = L - xi`` (WB).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy.interpolate import PPoly

from ..boxes import DIRECTIONS, VEHICLE_CLASSES, Box3D, heading
from ..exceptions import InfeasibleDensity, ValidationError

PROFILES = ("constant", "free-flow", "slow", "congested")

# nominal (length, width, height) in feet and relative frequency
CLASS_DIMS = {
    "sedan": (15.0, 6.0, 4.8),
    "midsize": (15.5, 6.3, 5.8),
    "van": (17.0, 6.6, 6.5),
    "pickup": (19.0, 6.7, 6.3),
    "semi": (70.0, 8.5, 13.5),
    "truck": (30.0, 8.0, 11.0),
}
DEFAULT_CLASS_MIX = {"sedan": 0.3, "midsize": 0.35, "van": 0.08, "pickup": 0.12, "semi": 0.1, "truck": 0.05}


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Independent, documented random stream for ``(seed, tags...)``."""
    words = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        words.append(zlib.crc32(str(tag).encode()) if not isinstance(tag, int) else tag & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    duration: float = 60.0
    lanes_per_direction: int = 4
    lane_width: float = 12.0
    roadway_length: float = 2000.0
    vehicle_count: int = 40
    profile: str = "free-flow"
    speed: float = 100.0
    speed_band: tuple[float, float] = (88.0, 112.0)
    congested_max_speed: float = 40.0
    class_mix: dict = field(default_factory=lambda: dict(DEFAULT_CLASS_MIX))
    directions: tuple[str, ...] = DIRECTIONS
    headway: tuple[float, float] = (1.0, 1.8)
    jam_gap: tuple[float, float] = (6.0, 12.0)
    # progress interval the platoons must occupy at t = start_time; None centres
    # each platoon on the road at mid-scene
    placement: tuple[float, float] | None = None
    lateral_jitter: float = 1.0
    start_time: float = 0.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValidationError("duration must be positive")
        if self.vehicle_count < 1 or self.lanes_per_direction < 1:
            raise ValidationError("vehicle_count and lanes_per_direction must be >= 1")
        if self.profile not in PROFILES:
            raise ValidationError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        for d in self.directions:
            heading(d)
        if not self.directions:
            raise ValidationError("at least one direction required")
        unknown = set(self.class_mix) - set(VEHICLE_CLASSES)
        if unknown or not self.class_mix or min(self.class_mix.values()) < 0 or sum(self.class_mix.values()) <= 0:
            raise ValidationError(f"invalid class mix {self.class_mix}")
        if self.headway[0] < 1.0 or self.headway[1] < self.headway[0]:
            raise ValidationError("headway range must satisfy 1 <= lo <= hi")
        if self.jam_gap[0] <= 0:
            raise ValidationError("jam gap must be positive")

    @property
    def lane_count(self) -> int:
        return self.lanes_per_direction * len(self.directions)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


PRESETS = {
    "free-flow": dict(profile="free-flow", speed=100.0, vehicle_count=48),
    "slow": dict(profile="slow", speed=45.0, speed_band=(30.0, 60.0), vehicle_count=64),
    "congested": dict(profile="congested", speed=20.0, vehicle_count=80, headway=(1.2, 2.0)),
}


def preset(name: str, **overrides) -> SceneConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return SceneConfig(**{**PRESETS[name], **overrides})


@dataclass(frozen=True, eq=False)
class VehicleTruth:
    vid: int
    cls: str
    direction: str
    lane: int  # 1 = nearest the median
    l: float
    w: float
    h: float
    y: float
    progress: PPoly  # rear position along the direction of travel
    roadway_length: float

    def x(self, t) -> np.ndarray:
        xi = self.progress(np.asarray(t, dtype=float))
        return xi if self.direction == "EB" else self.roadway_length - xi

    def speed(self, t) -> np.ndarray:
        return self.progress(np.asarray(t, dtype=float), 1)

    def box(self, t: float) -> Box3D:
        return Box3D(float(self.x(t)), self.y, self.l, self.w, self.h, self.direction, self.cls)


@dataclass(frozen=True, eq=False)
class SceneTruth:
    config: SceneConfig
    vehicles: tuple[VehicleTruth, ...]

    @property
    def t_start(self) -> float:
        return self.config.start_time

    @property
    def t_end(self) -> float:
        return self.config.start_time + self.config.duration

    def boxes_at(self, t: float) -> list[tuple[int, Box3D]]:
        return [(v.vid, v.box(t)) for v in self.vehicles]

    def positions(self, t) -> np.ndarray:
        """(n_vehicles, len(t)) roadway x of every vehicle."""
        return np.array([v.x(t) for v in self.vehicles])


def _jerk_segments(v0: float, targets: Sequence[tuple[float, float, float]], t0: float, t1: float):
    """Breakpoints and jerk values for a speed profile.

    ``targets`` lists ``(hold, v_next, ramp)``: keep the current speed for ``hold``
    seconds, then ramp to ``v_next`` over ``ramp`` seconds with a symmetric
    triangular acceleration pulse (two constant-jerk pieces).
    """
    breaks = [t0]
    jerks = []
    v = v0
    t = t0
    for hold, v_next, ramp in targets:
        if t >= t1:
            break
        if hold > 0:
            t += hold
            breaks.append(t)
            jerks.append(0.0)
        if v_next != v and ramp > 0:
            j = 4.0 * (v_next - v) / ramp ** 2
            breaks += [t + ramp / 2, t + ramp]
            jerks += [j, -j]
            t += ramp
            v = v_next
    if breaks[-1] < t1:
        breaks.append(t1)
        jerks.append(0.0)
    return np.asarray(breaks), np.asarray(jerks)


def _integrate(breaks, jerks, x0, v0) -> PPoly:
    c = np.zeros((4, len(jerks)))
    x, v, a = x0, v0, 0.0
    for k, j in enumerate(jerks):
        dt = breaks[k + 1] - breaks[k]
        c[:, k] = (j / 6.0, a / 2.0, v, x)
        x = x + v * dt + a * dt ** 2 / 2 + j * dt ** 3 / 6
        v = v + a * dt + j * dt ** 2 / 2
        a = a + j * dt
    return PPoly(c, breaks, extrapolate=True)


def _leader_profile(cfg: SceneConfig, rng: np.random.Generator, t0: float, t1: float):
    if cfg.profile == "constant":
        return cfg.speed, []
    targets = []
    t = t0
    if cfg.profile in ("free-flow", "slow"):
        lo, hi = cfg.speed_band
        v0 = float(rng.uniform(lo, hi))
        while t < t1:
            hold = float(rng.uniform(3.0, 10.0))
            ramp = float(rng.uniform(3.0, 8.0))
            targets.append((hold, float(rng.uniform(lo, hi)), ramp))
            t += hold + ramp
        return v0, targets
    # congested stop-and-go: alternate full stops with moving phases
    v0 = float(rng.uniform(0.4, 1.0) * cfg.congested_max_speed)
    while t < t1:
        hold = float(rng.uniform(2.0, 6.0))
        ramp = float(rng.uniform(4.0, 8.0))
        targets.append((hold, 0.0, ramp))
        stop = float(rng.uniform(2.0, 6.0))
        ramp2 = float(rng.uniform(4.0, 8.0))
        targets.append((stop, float(rng.uniform(0.5, 1.0) * cfg.congested_max_speed), ramp2))
        t += hold + ramp + stop + ramp2
    return v0, targets


def _lane_centres(cfg: SceneConfig, direction: str) -> list[float]:
    s = heading(direction)
    return [s * cfg.lane_width * (i + 0.5) for i in range(cfg.lanes_per_direction)]


def generate_scene(cfg: SceneConfig) -> SceneTruth:
    """Deterministic collision-free traffic for ``cfg``.

    Draw order: lane assignment, then per lane the leader profile, then per
    vehicle class, dimensions, headway, jam gap and lateral offset.
    """
    rng = rng_for(cfg.seed, "scene")
    lanes = [(d, i) for d in cfg.directions for i in range(cfg.lanes_per_direction)]
    counts = np.bincount(rng.integers(0, len(lanes), cfg.vehicle_count), minlength=len(lanes))
    classes = list(cfg.class_mix)
    probs = np.array([cfg.class_mix[c] for c in classes], dtype=float)
    probs /= probs.sum()
    L = cfg.roadway_length
    t0, t1 = cfg.start_time, cfg.start_time + cfg.duration

    vehicles = []
    vid = 0
    for (direction, lane_idx), n in zip(lanes, counts):
        lane_rng = rng_for(cfg.seed, "lane", direction, lane_idx)
        if n == 0:
            continue
        cls = [classes[k] for k in lane_rng.choice(len(classes), size=n, p=probs)]
        dims = []
        for c in cls:
            base = np.array(CLASS_DIMS[c])
            dims.append(base * lane_rng.uniform(0.95, 1.05, 3))
        taus = lane_rng.uniform(*cfg.headway, size=n)
        taus[0] = 0.0
        gaps = lane_rng.uniform(*cfg.jam_gap, size=n)
        jitter = lane_rng.uniform(-cfg.lateral_jitter, cfg.lateral_jitter, size=n)
        shift = np.cumsum(taus)
        v0, targets = _leader_profile(cfg, lane_rng, t0 - shift[-1] - 1.0, t1 + 1.0)
        breaks, jerks = _jerk_segments(v0, targets, t0 - shift[-1] - 1.0, t1 + 1.0)
        leader = _integrate(breaks, jerks, 0.0, v0)
        # spacing d_k: the follower's front must stay behind the predecessor's rear
        spacing = np.array([0.0] + [dims[k][0] + gaps[k] for k in range(1, n)])
        offsets = np.cumsum(spacing)
        if cfg.placement is not None:
            lo, hi = cfg.placement
            leader.c[-1] += hi - dims[0][0] - leader(t0)
        else:
            t_mid = 0.5 * (t0 + t1)
            mid = n // 2
            lo = -np.inf
            leader.c[-1] += 0.5 * L - (leader(t_mid - shift[mid]) - offsets[mid])
        rear_at_start = []
        for k in range(n):
            p = PPoly(leader.c.copy(), leader.x + shift[k], extrapolate=True)
            p.c[-1] -= offsets[k]
            rear_at_start.append(float(p(t0)))
            centre = _lane_centres(cfg, direction)[lane_idx]
            vehicles.append(
                VehicleTruth(vid, cls[k], direction, lane_idx + 1, *map(float, dims[k]), centre + float(jitter[k]), p, L)
            )
            vid += 1
        if rear_at_start[-1] < lo:
            raise InfeasibleDensity(
                f"{n} vehicles do not fit in lane {direction}{lane_idx + 1} within placement [{lo}, {hi}]"
            )
    return SceneTruth(cfg, tuple(vehicles))
