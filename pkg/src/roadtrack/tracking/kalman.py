"""Constant-velocity Kalman filter on roadway position ``(x, y, vx, vy)``."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from ..boxes import Box3D, Detection, heading
from ..exceptions import DirectionMismatch, ValidationError

# process noise per second for (x, y, vx, vy) and measurement noise for (x, y)
DEFAULT_Q = (0.5, 0.1, 2.0, 0.5)
DEFAULT_R = (1.0, 0.25)
# prior velocity spread of a newborn track, ft/s
INITIAL_SPEED_SIGMA = (60.0, 2.0)

_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class KalmanParams:
    q: tuple[float, float, float, float] = DEFAULT_Q
    r: tuple[float, float] = DEFAULT_R
    init_speed_sigma: tuple[float, float] = INITIAL_SPEED_SIGMA

    def __post_init__(self):
        if min(self.q) <= 0 or min(self.r) < 0 or min(self.init_speed_sigma) <= 0:
            raise ValidationError("process noise must be positive and measurement noise non-negative")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(np.asarray(self.q, dtype=float))

    @property
    def R(self) -> np.ndarray:
        return np.diag(np.asarray(self.r, dtype=float))


@dataclass(frozen=True, eq=False)
class TrackState:
    """Filter state of one track. Dimensions are fixed at birth."""

    id: int
    mean: np.ndarray  # x, y, vx, vy
    cov: np.ndarray
    dims: tuple[float, float, float]
    direction: str
    cls: str = "sedan"
    age: int = 0  # predict steps since birth
    hits: int = 1
    streak: int = 1  # consecutive hits
    misses: int = 0  # consecutive misses
    votes: tuple = ()  # (class, count) pairs
    last_cls: str = ""
    innovation: np.ndarray | None = None

    def __post_init__(self):
        heading(self.direction)
        for name in ("mean", "cov"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def box(self) -> Box3D:
        return Box3D(float(self.mean[0]), float(self.mean[1]), *self.dims, self.direction, self.vote)

    @property
    def vote(self) -> str:
        """Majority class over matched detections; ties go to the latest detection."""
        if not self.votes:
            return self.cls
        counts = dict(self.votes)
        best = max(counts.values())
        tied = [c for c, n in counts.items() if n == best]
        return self.last_cls if self.last_cls in tied else tied[0]


def new_track(track_id: int, det: Detection | Box3D, params: KalmanParams = KalmanParams()) -> TrackState:
    box = det.box if isinstance(det, Detection) else det
    sx, sy = params.init_speed_sigma
    cov = np.diag([params.r[0] or 1e-6, params.r[1] or 1e-6, sx ** 2, sy ** 2])
    return TrackState(
        track_id, np.array([box.x, box.y, 0.0, 0.0]), cov, box.dims, box.direction, box.cls,
        votes=((box.cls, 1),), last_cls=box.cls,
    )


def kalman_predict(s: TrackState, dt: float, params: KalmanParams = KalmanParams()) -> TrackState:
    """Advance the state by ``dt`` seconds under constant velocity."""
    if dt < 0:
        raise ValidationError("dt must be >= 0")
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    cov = f @ s.cov @ f.T + params.Q * dt
    return replace(s, mean=f @ s.mean, cov=0.5 * (cov + cov.T), age=s.age + 1, innovation=None)


def kalman_update(s: TrackState, z: Detection | Box3D, params: KalmanParams = KalmanParams()) -> TrackState:
    """Standard linear update on the (x, y) measurement, Joseph-form covariance."""
    box = z.box if isinstance(z, Detection) else z
    if box.direction != s.direction:
        raise DirectionMismatch(f"track {s.id} is {s.direction}, measurement is {box.direction}")
    meas = np.array([box.x, box.y])
    innov = meas - _H @ s.mean
    r = params.R
    S = _H @ s.cov @ _H.T + r
    gain = np.linalg.solve(S, _H @ s.cov).T
    mean = s.mean + gain @ innov
    a = np.eye(4) - gain @ _H
    cov = a @ s.cov @ a.T + gain @ r @ gain.T
    votes = Counter(dict(s.votes))
    votes[box.cls] += 1
    return replace(
        s, mean=mean, cov=0.5 * (cov + cov.T), hits=s.hits + 1, streak=s.streak + 1, misses=0,
        votes=tuple(votes.items()), last_cls=box.cls, innovation=innov,
    )


def mark_missed(s: TrackState) -> TrackState:
    return replace(s, streak=0, misses=s.misses + 1)
