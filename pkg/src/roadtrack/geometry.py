"""Camera-to-roadway geometry.

Each camera view and direction of travel owns three fitted objects:

* a road-plane :class:`Homography` mapping pixels ``(u, v)`` (column, row) to
  roadway ``(x, y)`` on the plane ``z = 0``;
* a 3x4 :class:`CameraProjection` mapping roadway ``(x, y, z)`` to pixels, whose
  columns 1, 2 and 4 are the inverse homography and whose third column points
  at the vertical vanishing point;
* a quadratic :class:`CurveOffset` that removes lateral road curvature from
  ``y`` after the planar mapping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .boxes import Box3D
from .exceptions import (
    AtInfinity,
    DegenerateConfiguration,
    DegenerateX,
    NoAbovePlaneSamples,
    ParallelLines,
    TooFewPoints,
    ValidationError,
)

# 1-D search settings for the vertical scale of the projection matrix.
P33_BRACKET = (1e-6, 1e6)
P33_GRID = 241
P33_RTOL = 1e-10
REFINE_THRESHOLD = 1e-6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ImagePoint(NamedTuple):
    u: float
    v: float


class RoadPoint(NamedTuple):
    x: float
    y: float
    z: float = 0.0


class Correspondence(NamedTuple):
    image: ImagePoint
    road: RoadPoint


def _frozen(a, shape) -> np.ndarray:
    a = np.array(a, dtype=float).reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map with ``h33 = 1`` whenever possible."""

    matrix: np.ndarray
    rmse: float = float("nan")

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float).reshape(3, 3)
        if abs(m[2, 2]) > 1e-12 * np.abs(m).max():
            m = m / m[2, 2]
        if not np.all(np.isfinite(m)) or np.linalg.cond(m) > 1e15:
            raise DegenerateConfiguration("homography is singular")
        object.__setattr__(self, "matrix", _frozen(m, (3, 3)))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def transform(self, points) -> np.ndarray:
        return apply_homography(self.matrix, points)


def apply_homography(matrix: np.ndarray, points) -> np.ndarray:
    """Map an (n, 2) array through a 3x3 matrix with the homogeneous divide."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    terms = matrix[2, 0] * pts[:, 0], matrix[2, 1] * pts[:, 1], np.full(len(pts), matrix[2, 2])
    w = terms[0] + terms[1] + terms[2]
    scale = np.abs(terms[0]) + np.abs(terms[1]) + np.abs(terms[2])
    if np.any(np.abs(w) <= 1e-12 * np.maximum(scale, 1e-300)):
        raise AtInfinity("point lies on the horizon line of the homography")
    x = (matrix[0, 0] * pts[:, 0] + matrix[0, 1] * pts[:, 1] + matrix[0, 2]) / w
    y = (matrix[1, 0] * pts[:, 0] + matrix[1, 1] * pts[:, 1] + matrix[1, 2]) / w
    return np.column_stack([x, y])


def _normalizer(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    spread = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    if not spread > 0:
        raise DegenerateConfiguration("all points coincide")
    s = math.sqrt(2.0) / spread
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _reprojection_residuals(h8, src, dst):
    m = np.append(h8, 1.0).reshape(3, 3)
    w = m[2, 0] * src[:, 0] + m[2, 1] * src[:, 1] + m[2, 2]
    x = (m[0, 0] * src[:, 0] + m[0, 1] * src[:, 1] + m[0, 2]) / w
    y = (m[1, 0] * src[:, 0] + m[1, 1] * src[:, 1] + m[1, 2]) / w
    return np.concatenate([x - dst[:, 0], y - dst[:, 1]])


def _rmse(matrix, src, dst) -> float:
    try:
        proj = apply_homography(matrix, src)
    except AtInfinity:
        return float("inf")
    return float(np.sqrt(np.mean(np.sum((proj - dst) ** 2, axis=1))))


def fit_homography(src, dst, refine_threshold: float = REFINE_THRESHOLD) -> Homography:
    """Least-squares homography taking ``src`` points to ``dst`` points.

    Normalised DLT, followed by Levenberg-Marquardt on the ``dst``-space
    reprojection error when the DLT residual exceeds ``refine_threshold``.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValidationError("src and dst must have the same number of points")
    if len(src) < 4:
        raise TooFewPoints(f"need at least 4 correspondences, got {len(src)}")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValidationError("correspondences must be finite")

    t_src, t_dst = _normalizer(src), _normalizer(dst)
    a = apply_homography(t_src, src)
    b = apply_homography(t_dst, dst)
    n = len(a)
    design = np.zeros((2 * n, 9))
    design[0::2, 0:2] = -a
    design[0::2, 2] = -1.0
    design[0::2, 6:8] = a * b[:, [0]]
    design[0::2, 8] = b[:, 0]
    design[1::2, 3:5] = -a
    design[1::2, 5] = -1.0
    design[1::2, 6:8] = a * b[:, [1]]
    design[1::2, 8] = b[:, 1]
    _, sv, vt = np.linalg.svd(design)
    if sv[-2] <= 1e-9 * sv[0]:
        raise DegenerateConfiguration("design matrix is rank deficient (collinear points?)")
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(m[2, 2]) < 1e-12 * np.abs(m).max():
        raise DegenerateConfiguration("fitted homography has a vanishing h33")
    m = m / m[2, 2]
    err = _rmse(m, src, dst)

    if err > refine_threshold:
        sol = least_squares(_reprojection_residuals, m.ravel()[:8], args=(src, dst), method="lm")
        cand = np.append(sol.x, 1.0).reshape(3, 3)
        cand_err = _rmse(cand, src, dst)
        if cand_err < err:
            m, err = cand, cand_err
    return Homography(m, rmse=err)


def fit_road_homography(correspondences: Sequence[Correspondence]) -> Homography:
    """Image-to-road homography from road-plane correspondences."""
    if len(correspondences) < 4:
        raise TooFewPoints(f"need at least 4 correspondences, got {len(correspondences)}")
    image = np.array([[c.image[0], c.image[1]] for c in correspondences], dtype=float)
    road = np.array([[c.road[0], c.road[1]] for c in correspondences], dtype=float)
    return fit_homography(image, road)


def image_to_road(h: Homography, p: ImagePoint) -> RoadPoint:
    x, y = h.transform([[p[0], p[1]]])[0]
    return RoadPoint(float(x), float(y), 0.0)


def intersect_vertical_lines(lines) -> ImagePoint:
    """Point minimising the summed squared perpendicular distance to each line.

    ``lines`` is any sequence of segments ``((u1, v1), (u2, v2))``.
    """
    seg = np.asarray(lines, dtype=float).reshape(-1, 4)
    if len(seg) < 2:
        raise ValidationError("need at least 2 lines")
    d = seg[:, 2:] - seg[:, :2]
    length = np.hypot(d[:, 0], d[:, 1])
    if np.any(length == 0):
        raise ValidationError("zero-length line segment")
    normal = np.column_stack([-d[:, 1], d[:, 0]]) / length[:, None]
    offset = np.sum(normal * seg[:, :2], axis=1)
    a = normal.T @ normal
    eig = np.linalg.eigvalsh(a)
    if eig[0] <= 1e-14 * eig[-1]:
        raise ParallelLines("lines are parallel; no finite intersection")
    u, v = np.linalg.solve(a, normal.T @ offset)
    return ImagePoint(float(u), float(v))


@dataclass(frozen=True, eq=False)
class CameraProjection:
    """3x4 projective map from roadway ``(x, y, z)`` to pixels."""

    matrix: np.ndarray
    vanishing_point_z: ImagePoint = field(default=ImagePoint(float("nan"), float("nan")))

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, (3, 4)))
        p = self.matrix
        if abs(p[2, 2]) > 0 and math.isnan(self.vanishing_point_z[0]):
            object.__setattr__(
                self, "vanishing_point_z", ImagePoint(p[0, 2] / p[2, 2], p[1, 2] / p[2, 2])
            )

    @property
    def scale_p33(self) -> float:
        return float(self.matrix[2, 2])

    @property
    def plane_homography(self) -> np.ndarray:
        """Road-to-image homography (columns 1, 2, 4)."""
        return np.array(self.matrix[:, [0, 1, 3]])

    def project(self, points) -> np.ndarray:
        """Project an (n, 3) array of road points; raises on a vanishing denominator."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] == 2:
            pts = np.column_stack([pts, np.zeros(len(pts))])
        hom = np.column_stack([pts, np.ones(len(pts))]) @ self.matrix.T
        w = hom[:, 2]
        scale = np.abs(pts) @ np.abs(self.matrix[2, :3]) + abs(self.matrix[2, 3])
        if np.any(np.abs(w) <= 1e-12 * np.maximum(scale, 1e-300)):
            raise AtInfinity("point projects to infinity")
        return hom[:, :2] / w[:, None]


def _p33_objective(base: np.ndarray, vp: np.ndarray, road: np.ndarray, image: np.ndarray, p33):
    """Summed squared pixel error for each candidate p33 (vectorised over p33)."""
    p33 = np.atleast_1d(np.asarray(p33, dtype=float))
    x, y, z = road[:, 0], road[:, 1], road[:, 2]
    num_u = base[0, 0] * x + base[0, 1] * y + base[0, 2]
    num_v = base[1, 0] * x + base[1, 1] * y + base[1, 2]
    den = base[2, 0] * x + base[2, 1] * y + base[2, 2]
    zs = p33[:, None] * z[None, :]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = den[None, :] + zs
        u = (num_u[None, :] + vp[0] * zs) / w
        v = (num_v[None, :] + vp[1] * zs) / w
        err = np.sum((u - image[:, 0]) ** 2 + (v - image[:, 1]) ** 2, axis=1)
    err[~np.isfinite(err)] = np.inf
    return err


def _golden_section(f, lo: float, hi: float, tol: float, max_iter: int = 500) -> float:
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = f(d)
    return (lo + hi) / 2.0


def fit_projection(h_inv: Homography, vp_z: ImagePoint, samples) -> CameraProjection:
    """Complete the 3x4 projection from the inverse homography and vertical vanishing point.

    ``samples`` are ``(RoadPoint, ImagePoint)`` pairs; only points above the road
    plane inform the scale, which is found by a log-spaced scan of both signs
    followed by golden-section refinement.
    """
    if not (np.isfinite(vp_z[0]) and np.isfinite(vp_z[1])):
        raise ValidationError("vanishing point must be finite")
    above = [(r, i) for r, i in samples if len(r) > 2 and r[2] > 0]
    if not above:
        raise NoAbovePlaneSamples("need at least one sample with z > 0")
    road = np.array([[r[0], r[1], r[2]] for r, _ in above], dtype=float)
    image = np.array([[i[0], i[1]] for _, i in above], dtype=float)
    base = np.array(h_inv.matrix, dtype=float)
    vp = np.array([vp_z[0], vp_z[1]], dtype=float)

    log_lo, log_hi = math.log(P33_BRACKET[0]), math.log(P33_BRACKET[1])
    grid = np.linspace(log_lo, log_hi, P33_GRID)
    best = None
    for sign in (1.0, -1.0):
        err = _p33_objective(base, vp, road, image, sign * np.exp(grid))
        i = int(np.argmin(err))
        if best is None or err[i] < best[0]:
            best = (err[i], sign, i)
    _, sign, i = best
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]

    def f(log_p):
        return float(_p33_objective(base, vp, road, image, sign * math.exp(log_p))[0])

    p33 = sign * math.exp(_golden_section(f, lo, hi, P33_RTOL))
    p = np.zeros((3, 4))
    p[:, [0, 1, 3]] = base
    p[:, 2] = p33 * np.array([vp[0], vp[1], 1.0])
    return CameraProjection(p, ImagePoint(float(vp[0]), float(vp[1])))


@dataclass(frozen=True)
class CurveOffset:
    """Lateral offset polynomial ``f(x) = c2 x^2 + c1 x + c0``."""

    c0: float = 0.0
    c1: float = 0.0
    c2: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (self.c2 * x + self.c1) * x + self.c0

    @property
    def coefficients(self) -> tuple[float, float, float]:
        """Highest degree first, the order used on disk."""
        return (self.c2, self.c1, self.c0)


def fit_curve_offset(lane_line, reference_y: float = 0.0) -> CurveOffset:
    """Quadratic least-squares fit of ``y - reference_y`` against ``x`` along a lane line."""
    pts = np.asarray([[p[0], p[1]] for p in lane_line], dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise TooFewPoints(f"need at least 3 lane-line points, got {len(pts)}")
    if len(np.unique(pts[:, 0])) < 3:
        raise DegenerateX("need at least 3 distinct x values")
    poly = np.polynomial.Polynomial.fit(pts[:, 0], pts[:, 1] - reference_y, 2).convert()
    coef = np.zeros(3)
    coef[: len(poly.coef)] = poly.coef
    return CurveOffset(float(coef[0]), float(coef[1]), float(coef[2]))


def apply_curvature(c: CurveOffset, p: RoadPoint, inverse: bool = False) -> RoadPoint:
    """Remove (forward) or restore (inverse) the lateral curvature offset of a point."""
    off = float(c(p[0]))
    z = p[2] if len(p) > 2 else 0.0
    return RoadPoint(p[0], p[1] + off if inverse else p[1] - off, z)


@dataclass(frozen=True, eq=False)
class CameraTransform:
    """Everything needed to move between one camera's pixels and the roadway for one direction."""

    camera: str
    direction: str
    homography: Homography
    projection: CameraProjection
    curve: CurveOffset = CurveOffset()

    def image_to_road(self, uv, use_curve: bool = True) -> np.ndarray:
        xy = self.homography.transform(uv)
        if use_curve:
            xy = xy.copy()
            xy[:, 1] -= self.curve(xy[:, 0])
        return xy

    def road_to_image(self, xyz, use_curve: bool = True) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(xyz, dtype=float))
        if pts.shape[1] == 2:
            pts = np.column_stack([pts, np.zeros(len(pts))])
        if use_curve:
            pts = pts.copy()
            pts[:, 1] += self.curve(pts[:, 0])
        return self.projection.project(pts)

    def box_corners(self, box: Box3D, use_curve: bool = True) -> np.ndarray:
        return road_to_image(self.projection, box, self.curve if use_curve else None)

    def pixels_per_foot(self, xy, axis: int = 0, use_curve: bool = True) -> np.ndarray:
        """Pixel displacement caused by a one-foot move along ``axis`` at each point."""
        pts = np.atleast_2d(np.asarray(xy, dtype=float))[:, :2]
        moved = pts.copy()
        moved[:, axis] += 1.0
        a = self.road_to_image(pts, use_curve)
        b = self.road_to_image(moved, use_curve)
        return np.hypot(*(b - a).T)


def road_to_image(proj: CameraProjection, box: Box3D, curve: CurveOffset | None = None) -> np.ndarray:
    """Pixel coordinates of the 8 box corners, shape (8, 2), in :meth:`Box3D.corners` order."""
    corners = box.corners()
    if curve is not None:
        corners[:, 1] += curve(corners[:, 0])
    hom = np.column_stack([corners, np.ones(8)]) @ proj.matrix.T
    w = hom[:, 2]
    scale = np.abs(corners) @ np.abs(proj.matrix[2, :3]) + abs(proj.matrix[2, 3])
    if np.any(np.abs(w) <= 1e-12 * scale) or (np.any(w > 0) and np.any(w < 0)):
        raise AtInfinity("box crosses the camera plane")
    return hom[:, :2] / w[:, None]


class RoadHomography(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(image_points, road_points)`` then ``transform`` pixels to road."""

    def __init__(self, refine_threshold: float = REFINE_THRESHOLD):
        self.refine_threshold = refine_threshold

    def fit(self, X, y):
        X = check_array(X, ensure_min_samples=1)
        y = check_array(y, ensure_min_samples=1)
        self.homography_ = fit_homography(X[:, :2], y[:, :2], self.refine_threshold)
        self.rmse_ = self.homography_.rmse
        return self

    def transform(self, X):
        check_is_fitted(self, "homography_")
        return self.homography_.transform(check_array(X))

    def inverse_transform(self, X):
        check_is_fitted(self, "homography_")
        return apply_homography(np.linalg.inv(self.homography_.matrix), check_array(X)[:, :2])


class CurveCorrection(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_curve_offset`; transforms (n, 2) road points."""

    def __init__(self, reference_y: float = 0.0):
        self.reference_y = reference_y

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=1)
        self.curve_ = fit_curve_offset(X[:, :2], self.reference_y)
        return self

    def transform(self, X):
        check_is_fitted(self, "curve_")
        X = np.array(check_array(X), dtype=float)
        X[:, 1] -= self.curve_(X[:, 0])
        return X

    def inverse_transform(self, X):
        check_is_fitted(self, "curve_")
        X = np.array(check_array(X), dtype=float)
        X[:, 1] += self.curve_(X[:, 0])
        return X


def fit_camera_transform(
    camera: str,
    direction: str,
    ticks: Sequence[Correspondence],
    vertical_lines,
    above,
    lane_pixels,
    lane_y: float = 0.0,
) -> CameraTransform:
    """Full calibration of one camera direction from its point sets.

    Homography from lane ticks, curve from the solid lane line mapped through
    it, vertical vanishing point from the post segments, then the projection
    scale from above-plane ``(RoadPoint, ImagePoint)`` pairs expressed in the
    homography frame (curve offset added back).
    """
    h = fit_road_homography(ticks)
    lane_road = h.transform(np.asarray([[p[0], p[1]] for p in lane_pixels], dtype=float).reshape(-1, 2))
    curve = fit_curve_offset([RoadPoint(x, y) for x, y in lane_road], reference_y=lane_y)
    vp = intersect_vertical_lines(vertical_lines)
    plane_frame = [(RoadPoint(r[0], r[1] + float(curve(r[0])), r[2]), p) for r, p in above]
    proj = fit_projection(h.inverse(), vp, plane_frame)
    return CameraTransform(camera, direction, h, proj, curve)
