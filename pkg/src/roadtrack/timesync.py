"""Camera clock rectification.

Reported frame times are modelled as ``t' = t + o_k + eps_jk``: a constant
per-camera offset ``o_k`` plus a bounded per-frame residual. Offsets come from
vehicles seen by two overlapping cameras; residuals come from cubic splines
fitted through every annotation of each vehicle.
"""
from __future__ import annotations

import logging
import math
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.interpolate import BSpline
from sklearn.base import BaseEstimator

from .exceptions import (
    DisconnectedChain,
    NonMonotoneTrackWarning,
    NoSharedObjects,
    OutOfDomain,
    TooFewObservations,
    ValidationError,
    ZeroDuration,
)

log = logging.getLogger(__name__)

FRAME_PERIOD = 1.0 / 30.0
QUANTUM = 0.01
RESIDUAL_BOUND = FRAME_PERIOD + QUANTUM
RESIDUAL_TOL = 1e-5
KNOTS_PER_SECOND = 2.0
MIN_SPLINE_OBS = 4
_DOMAIN_SLACK = 1e-9
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FrameStamp:
    camera: str
    frame_index: int
    t_raw: float
    offset: float = 0.0
    residual: float = 0.0

    @property
    def t_corrected(self) -> float:
        return self.t_raw + self.offset + self.residual


@dataclass(frozen=True)
class WeightedObservation:
    """One annotated position. ``weight`` is pixels per foot of x; ``weight_y`` of y (defaults to ``weight``)."""

    t: float
    x: float
    y: float
    weight: float = 1.0
    camera: str = ""
    frame_index: int = 0
    weight_y: float | None = None

    def __post_init__(self):
        if not self.weight > 0 or (self.weight_y is not None and not self.weight_y > 0):
            raise ValidationError("observation weights must be positive")

    @property
    def wy(self) -> float:
        return self.weight if self.weight_y is None else self.weight_y


@dataclass(frozen=True, eq=False)
class TrajectorySpline:
    """Cubic B-spline pair ``f_x(t), f_y(t)`` sharing one knot vector.

    Knots are stored relative to ``t_min`` so that epoch-scale timestamps do not
    cost precision in the basis evaluation.
    """

    rel_knots: np.ndarray
    coef_x: np.ndarray
    coef_y: np.ndarray
    t_min: float
    t_max: float

    def __post_init__(self):
        for name in ("rel_knots", "coef_x", "coef_y"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "_bx", BSpline(self.rel_knots, self.coef_x, 3, extrapolate=True))
        object.__setattr__(self, "_by", BSpline(self.rel_knots, self.coef_y, 3, extrapolate=True))

    @property
    def knots(self) -> np.ndarray:
        return self.t_min + self.rel_knots

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[4:-4]

    @property
    def knot_count(self) -> int:
        return len(self.rel_knots) - 8

    @property
    def duration(self) -> float:
        return self.t_max - self.t_min

    def _check(self, t, extrapolate):
        t = np.asarray(t, dtype=float)
        if not extrapolate:
            slack = _DOMAIN_SLACK * max(1.0, abs(self.t_max))
            if np.any(t < self.t_min - slack) or np.any(t > self.t_max + slack):
                raise OutOfDomain(f"time outside spline domain [{self.t_min}, {self.t_max}]")
        return t - self.t_min

    def x(self, t, extrapolate: bool = False, nu: int = 0):
        return self._bx(self._check(t, extrapolate), nu)

    def y(self, t, extrapolate: bool = False, nu: int = 0):
        return self._by(self._check(t, extrapolate), nu)

    def __call__(self, t, extrapolate: bool = False) -> np.ndarray:
        """Positions at ``t`` as an array of shape ``t.shape + (2,)``."""
        return np.stack([self.x(t, extrapolate), self.y(t, extrapolate)], axis=-1)


def _uniform_knot_vector(span: float, n_interior: int) -> np.ndarray:
    inner = np.linspace(0.0, span, n_interior + 2)
    return np.concatenate([[0.0] * 3, inner, [span] * 3])


def _weighted_fit(knots, t, values, weights):
    design = BSpline.design_matrix(t, knots, 3).toarray()
    coef, *_ = np.linalg.lstsq(design * weights[:, None], values * weights, rcond=None)
    return coef


def _full_rank(knots, t, weights) -> bool:
    design = BSpline.design_matrix(t, knots, 3).toarray() * weights[:, None]
    return np.linalg.matrix_rank(design) == design.shape[1]


def _as_arrays(obs: Sequence[WeightedObservation]):
    t = np.array([o.t for o in obs], dtype=float)
    x = np.array([o.x for o in obs], dtype=float)
    y = np.array([o.y for o in obs], dtype=float)
    wx = np.array([o.weight for o in obs], dtype=float)
    wy = np.array([o.wy for o in obs], dtype=float)
    return t, x, y, wx, wy


def max_knots(duration: float) -> int:
    """Interior knot budget for a trajectory lasting ``duration`` seconds."""
    return int(math.floor(KNOTS_PER_SECOND * duration))


def fit_spline(obs: Sequence[WeightedObservation], knot_budget: int | None = None) -> TrajectorySpline:
    """Weighted least-squares cubic spline through a vehicle's observations.

    The interior knot count is the smallest of ``knot_budget`` (if given), the
    duration cap and the largest count the data can support with a full-rank
    design. Knots are spaced uniformly over the observed time span.
    """
    if len(obs) < MIN_SPLINE_OBS:
        raise TooFewObservations(f"need at least {MIN_SPLINE_OBS} observations, got {len(obs)}")
    t, x, y, wx, wy = _as_arrays(obs)
    t0, t1 = float(t.min()), float(t.max())
    if not t1 > t0:
        raise ZeroDuration("observations span zero time")
    n_unique = len(np.unique(t))
    if n_unique < MIN_SPLINE_OBS:
        raise TooFewObservations(f"need at least {MIN_SPLINE_OBS} distinct times, got {n_unique}")
    k = min(max_knots(t1 - t0), n_unique - 4)
    if knot_budget is not None:
        k = min(k, int(knot_budget))
    k = max(k, 0)
    rel = t - t0
    span = float(rel.max())
    while k > 0 and not (
        _full_rank(_uniform_knot_vector(span, k), rel, wx) and _full_rank(_uniform_knot_vector(span, k), rel, wy)
    ):
        k -= 1
    knots = _uniform_knot_vector(span, k)
    return TrajectorySpline(knots, _weighted_fit(knots, rel, x, wx), _weighted_fit(knots, rel, y, wy), t0, t1)


def weighted_residual(spline: TrajectorySpline, obs: Sequence[WeightedObservation]) -> float:
    """Sum of squared weighted x and y residuals."""
    t, x, y, wx, wy = _as_arrays(obs)
    return float(np.sum((wx * (spline.x(t) - x)) ** 2) + np.sum((wy * (spline.y(t) - y)) ** 2))


# ---- clock offsets ---------------------------------------------------------


def _time_at_x(t: np.ndarray, x: np.ndarray, xr: np.ndarray, with_speed: bool = False):
    """Time at which a monotone track reaches each ``xr``; exact hits take the earliest time.

    With ``with_speed`` also returns the speed of the bracketing segment.
    """
    if x[-1] < x[0]:
        x = -x
        xr = -xr
    # ties in x (a stopped vehicle) keep the earliest frame after a stable sort by x
    order = np.argsort(x, kind="stable")
    xs, ts = x[order], t[order]
    j = np.searchsorted(xs, xr, side="left")
    hit = np.clip(j, 0, len(xs) - 1)
    i = np.clip(j, 1, len(xs) - 1)
    x0, x1 = xs[i - 1], xs[i]
    t0, t1 = ts[i - 1], ts[i]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(x1 > x0, (xr - x0) / (x1 - x0), 0.0)
    out = np.where(xs[hit] == xr, ts[hit], t0 + frac * (t1 - t0))
    if not with_speed:
        return out
    with np.errstate(divide="ignore", invalid="ignore"):
        speed = np.where(t1 != t0, (x1 - x0) / np.abs(t1 - t0), np.inf)
    return out, speed


def _track_arrays(track) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(track, np.ndarray):
        arr = np.asarray(track, dtype=float).reshape(-1, 2)
        t, x = arr[:, 0], arr[:, 1]
    else:
        t = np.array([o.t for o in track], dtype=float)
        x = np.array([o.x for o in track], dtype=float)
    order = np.argsort(t, kind="stable")
    return t[order], x[order]


def _monotone(x: np.ndarray) -> bool:
    d = np.diff(x)
    return bool(np.all(d >= 0) or np.all(d <= 0))


def _window(t, x, lo, hi):
    """Observations inside [lo, hi] plus one bracketing observation on each side."""
    inside = np.flatnonzero((x >= lo) & (x <= hi))
    a = max(inside.min() - 1, 0)
    b = min(inside.max() + 1, len(x) - 1)
    return t[a : b + 1], x[a : b + 1]


def offset_samples(
    tracklets_a: Mapping[Hashable, object],
    tracklets_b: Mapping[Hashable, object],
    samples_per_object: int = 10,
    min_speed: float = 0.0,
) -> np.ndarray:
    """All per-sample differences ``tau_a - tau_b`` for objects seen by both cameras.

    Samples where either track moves slower than ``min_speed`` (ft/s) are
    dropped: a stopped vehicle pins x but not time.
    """
    if samples_per_object < 1:
        raise ValidationError("samples_per_object must be >= 1")
    diffs = []
    for key in tracklets_a.keys() & tracklets_b.keys():
        ta, xa = _track_arrays(tracklets_a[key])
        tb, xb = _track_arrays(tracklets_b[key])
        if len(ta) < 2 or len(tb) < 2:
            continue
        lo = max(xa.min(), xb.min())
        hi = min(xa.max(), xb.max())
        if not hi > lo:
            continue
        ta_w, xa_w = _window(ta, xa, lo, hi)
        tb_w, xb_w = _window(tb, xb, lo, hi)
        if not (_monotone(xa_w) and _monotone(xb_w)) or (xa_w[-1] - xa_w[0]) * (xb_w[-1] - xb_w[0]) < 0:
            warnings.warn(f"object {key!r} is not monotone in x inside the overlap; skipped", NonMonotoneTrackWarning, stacklevel=2)
            continue
        xr = np.linspace(lo, hi, samples_per_object)
        tau_a, va = _time_at_x(ta_w, xa_w, xr, with_speed=True)
        tau_b, vb = _time_at_x(tb_w, xb_w, xr, with_speed=True)
        keep = (va >= min_speed) & (vb >= min_speed)
        if keep.any():
            diffs.append((tau_a - tau_b)[keep])
    if not diffs:
        raise NoSharedObjects("no object has an overlapping x-range in both cameras")
    return np.concatenate(diffs)


def pairwise_offset(
    tracklets_a: Mapping[Hashable, object],
    tracklets_b: Mapping[Hashable, object],
    samples_per_object: int = 10,
    min_speed: float = 0.0,
) -> float:
    """Mean of ``tau_a - tau_b`` over shared objects and sample x positions.

    Each argument maps object id to that object's observations in one camera,
    either a sequence of :class:`WeightedObservation` or an (n, 2) array of
    ``(t, x)``. Under ``true = reported + o`` the result estimates ``o_b - o_a``.
    """
    return float(np.mean(offset_samples(tracklets_a, tracklets_b, samples_per_object, min_speed)))


def chain_offsets(
    pairwise: Iterable[tuple[str, str, float]],
    cameras: Sequence[str] | None = None,
    reference: str | None = None,
) -> dict[str, float]:
    """Solve camera offsets from ``(camera_k, camera_prev, o_k - o_prev)`` triples.

    The reference camera (``reference``, else the first of ``cameras``, else the
    ``camera_prev`` of the first triple) is anchored at zero.
    """
    edges = list(pairwise)
    graph: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for cam, prev, off in edges:
        graph[prev].append((cam, float(off)))
        graph[cam].append((prev, -float(off)))
    nodes = list(cameras) if cameras is not None else []
    for cam, prev, _ in edges:
        for c in (prev, cam):
            if c not in nodes:
                nodes.append(c)
    if not nodes:
        raise DisconnectedChain("no cameras given")
    if reference is None:
        reference = cameras[0] if cameras else edges[0][1]
    if reference not in nodes:
        raise DisconnectedChain(f"reference camera {reference!r} not in chain")
    out = {reference: 0.0}
    queue = deque([reference])
    while queue:
        c = queue.popleft()
        for nxt, off in graph[c]:
            if nxt not in out:
                out[nxt] = out[c] + off
                queue.append(nxt)
    missing = [c for c in nodes if c not in out]
    if missing:
        raise DisconnectedChain(f"cameras not connected to {reference!r}: {missing}")
    return {c: out[c] for c in nodes}


def estimate_offsets(
    tracks: Mapping[str, Mapping[Hashable, object]],
    camera_order: Sequence[str],
    samples_per_object: int = 10,
    min_speed: float = 0.0,
) -> dict[str, float]:
    """Offsets for cameras ordered along the road, linking each camera to the nearest earlier one it overlaps.

    Cameras without any observation are unobservable; they get offset 0.
    """
    seen = [c for c in camera_order if tracks.get(c)]
    idle = [c for c in camera_order if c not in seen]
    if idle:
        log.info("no observations for cameras %s; offsets fixed at 0", idle)
    if not seen:
        return {c: 0.0 for c in camera_order}
    pairs = []
    for k in range(1, len(seen)):
        cam = seen[k]
        for j in range(k - 1, -1, -1):
            prev = seen[j]
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NonMonotoneTrackWarning)
                    off = pairwise_offset(tracks.get(prev, {}), tracks.get(cam, {}), samples_per_object, min_speed)
            except NoSharedObjects:
                continue
            pairs.append((cam, prev, off))
            break
    out = chain_offsets(pairs, cameras=seen)
    return {c: out.get(c, 0.0) for c in camera_order}


# ---- residual correction ---------------------------------------------------


def _batch_objective(eps, groups, n_frames):
    """Weighted squared error per frame at per-frame shifts ``eps``."""
    total = np.zeros(n_frames)
    for spline, frame_idx, t, x, w in groups:
        pred = spline.x(t + eps[frame_idx], extrapolate=True)
        total += np.bincount(frame_idx, weights=(w * (pred - x)) ** 2, minlength=n_frames)
    return total


def estimate_residuals(
    splines: Mapping[Hashable, TrajectorySpline],
    frame_obs: Mapping[tuple[str, int], Sequence[tuple[Hashable, WeightedObservation]]],
    bound: float = RESIDUAL_BOUND,
    tol: float = RESIDUAL_TOL,
) -> dict[tuple[str, int], float]:
    """Per-frame timestamp residual in ``[-bound, bound]`` minimising the weighted x misfit.

    ``frame_obs`` maps ``(camera, frame)`` to ``(object_id, observation)`` pairs
    whose ``t`` is the offset-corrected frame time. Frames with no object
    covered by a spline get zero. All frames are searched together by a
    vectorised golden-section search.
    """
    keys = list(frame_obs)
    index = {k: i for i, k in enumerate(keys)}
    per_object: dict[Hashable, list] = defaultdict(list)
    for key, items in frame_obs.items():
        for obj, o in items:
            s = splines.get(obj)
            if s is None or o.t < s.t_min - _DOMAIN_SLACK or o.t > s.t_max + _DOMAIN_SLACK:
                continue
            per_object[obj].append((index[key], o.t, o.x, o.weight))
    groups = []
    usable = np.zeros(len(keys), dtype=bool)
    for obj, rows in per_object.items():
        arr = np.array(rows, dtype=float)
        fi = arr[:, 0].astype(int)
        usable[fi] = True
        groups.append((splines[obj], fi, arr[:, 1], arr[:, 2], arr[:, 3]))
    out = {k: 0.0 for k in keys}
    if not groups:
        return out
    n = len(keys)
    lo = np.full(n, -bound)
    hi = np.full(n, bound)
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc = _batch_objective(c, groups, n)
    fd = _batch_objective(d, groups, n)
    while np.max(hi - lo) > tol:
        left = fc < fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        new_c = hi - _GOLDEN * (hi - lo)
        new_d = lo + _GOLDEN * (hi - lo)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        # one of the two interior points is reused, the other needs a fresh evaluation
        f_new = _batch_objective(np.where(left, c_next, d_next), groups, n)
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_next, d_next
    eps = np.clip((lo + hi) / 2.0, -bound, bound)
    # zero shift wins when it is at least as good, which keeps consistent frames untouched
    f_eps = _batch_objective(eps, groups, n)
    f_zero = _batch_objective(np.zeros(n), groups, n)
    eps = np.where(f_zero <= f_eps, 0.0, eps)
    eps[~usable] = 0.0
    skipped = int((~usable).sum())
    if skipped:
        log.debug("%d frames had no spline-covered object; residual set to 0", skipped)
    for k, i in index.items():
        out[k] = float(eps[i])
    return out


def shift_annotations(
    obs: Mapping[Hashable, Sequence[WeightedObservation]],
    splines: Mapping[Hashable, TrajectorySpline],
    max_shift_px: float,
) -> tuple[dict[Hashable, list[WeightedObservation]], np.ndarray]:
    """Pull each observation toward its spline, at most ``max_shift_px`` per axis.

    Observation times are taken as already corrected. Returns the shifted
    observations and the per-observation shift magnitude in pixels (x and y
    combined). Objects without a spline pass through unchanged.
    """
    if not max_shift_px > 0:
        raise ValidationError("max_shift_px must be positive")
    out: dict[Hashable, list[WeightedObservation]] = {}
    shifts = []
    for obj, items in obs.items():
        s = splines.get(obj)
        if s is None:
            out[obj] = list(items)
            shifts.extend([0.0] * len(items))
            continue
        moved = []
        for o in items:
            if o.t < s.t_min or o.t > s.t_max:
                moved.append(o)
                shifts.append(0.0)
                continue
            dx_px = (float(s.x(o.t)) - o.x) * o.weight
            dy_px = (float(s.y(o.t)) - o.y) * o.wy
            sx = math.copysign(min(abs(dx_px), max_shift_px), dx_px)
            sy = math.copysign(min(abs(dy_px), max_shift_px), dy_px)
            moved.append(replace(o, x=o.x + sx / o.weight, y=o.y + sy / o.wy))
            shifts.append(math.hypot(sx, sy))
        out[obj] = moved
    return out, np.asarray(shifts)


class TrajectorySplineRegressor(BaseEstimator):
    """``fit(t, xy, sample_weight)`` then ``predict(t)`` returning (n, 2) positions."""

    def __init__(self, knot_budget: int | None = None):
        self.knot_budget = knot_budget

    def fit(self, X, y, sample_weight=None):
        t = np.asarray(X, dtype=float).reshape(-1)
        xy = np.asarray(y, dtype=float).reshape(len(t), 2)
        w = np.ones(len(t)) if sample_weight is None else np.broadcast_to(np.asarray(sample_weight, float), len(t))
        obs = [WeightedObservation(a, b, c, d) for a, (b, c), d in zip(t, xy, w)]
        self.spline_ = fit_spline(obs, self.knot_budget)
        self.knot_count_ = self.spline_.knot_count
        return self

    def predict(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "spline_")
        return self.spline_(np.asarray(X, dtype=float).reshape(-1))


class ClockSynchronizer(BaseEstimator):
    """Offset chaining followed by per-frame residual estimation.

    ``fit`` takes a mapping of object id to observations (each carrying its
    camera, frame index and reported time). After fitting, ``offsets_`` maps
    camera to offset and ``residuals_`` maps (camera, frame) to residual;
    ``transform`` turns :class:`FrameStamp` records into corrected ones.
    """

    def __init__(self, samples_per_object: int = 10, residuals: bool = True, bound: float = RESIDUAL_BOUND,
                 tol: float = RESIDUAL_TOL, camera_order: Sequence[str] | None = None, min_speed: float = 5.0):
        self.samples_per_object = samples_per_object
        self.min_speed = min_speed
        self.residuals = residuals
        self.bound = bound
        self.tol = tol
        self.camera_order = camera_order

    def fit(self, X: Mapping[Hashable, Sequence[WeightedObservation]], y=None):
        tracks: dict[str, dict[Hashable, list]] = defaultdict(lambda: defaultdict(list))
        xs: dict[str, list[float]] = defaultdict(list)
        for obj, items in X.items():
            for o in items:
                tracks[o.camera][obj].append(o)
                xs[o.camera].append(o.x)
        order = list(self.camera_order) if self.camera_order is not None else sorted(
            xs, key=lambda c: (float(np.median(xs[c])), c)
        )
        self.camera_order_ = order
        self.offsets_ = estimate_offsets(tracks, order, self.samples_per_object, self.min_speed) if order else {}
        shifted = {
            obj: [replace(o, t=o.t + self.offsets_.get(o.camera, 0.0)) for o in items] for obj, items in X.items()
        }
        self.splines_ = {}
        for obj, items in shifted.items():
            if len(items) >= MIN_SPLINE_OBS:
                try:
                    self.splines_[obj] = fit_spline(items)
                except (TooFewObservations, ZeroDuration):
                    continue
        self.residuals_ = {}
        if self.residuals:
            frame_obs: dict[tuple[str, int], list] = defaultdict(list)
            for obj, items in shifted.items():
                for o in items:
                    frame_obs[(o.camera, o.frame_index)].append((obj, o))
            self.residuals_ = estimate_residuals(self.splines_, frame_obs, self.bound, self.tol)
        return self

    def transform(self, stamps: Iterable[FrameStamp]) -> list[FrameStamp]:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "offsets_")
        return [
            replace(
                s,
                offset=self.offsets_.get(s.camera, 0.0),
                residual=self.residuals_.get((s.camera, s.frame_index), 0.0),
            )
            for s in stamps
        ]
