import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roadtrack.boxes import Box3D
from roadtrack.exceptions import (
    AtInfinity,
    DegenerateConfiguration,
    DegenerateX,
    NoAbovePlaneSamples,
    ParallelLines,
    TooFewPoints,
)
from roadtrack.geometry import (
    CameraProjection,
    Correspondence,
    CurveCorrection,
    CurveOffset,
    Homography,
    ImagePoint,
    RoadHomography,
    RoadPoint,
    apply_curvature,
    fit_curve_offset,
    fit_homography,
    fit_projection,
    fit_road_homography,
    image_to_road,
    intersect_vertical_lines,
    road_to_image,
)

from conftest import lane_ticks, look_at_camera, project


def _correspondences(p, road):
    img = project(p, road)
    return [Correspondence(ImagePoint(*i), RoadPoint(*r)) for i, r in zip(img, road)]


def _vp_z(p):
    return ImagePoint(p[0, 2] / p[2, 2], p[1, 2] / p[2, 2])


def test_identity_square():
    pts = [(0, 0), (1, 0), (1, 1), (0, 1)]
    corr = [Correspondence(ImagePoint(*q), RoadPoint(*q)) for q in pts]
    h = fit_road_homography(corr)
    np.testing.assert_allclose(h.matrix, np.eye(3), atol=1e-12)


def test_too_few_points():
    corr = [Correspondence(ImagePoint(i, i * i), RoadPoint(i, 0)) for i in range(3)]
    with pytest.raises(TooFewPoints):
        fit_road_homography(corr)


def test_collinear_points_degenerate():
    corr = [Correspondence(ImagePoint(i, 2 * i), RoadPoint(i, i)) for i in range(6)]
    with pytest.raises(DegenerateConfiguration):
        fit_road_homography(corr)


def test_lane_tick_recovery(synthetic_camera):
    road = lane_ticks()
    h = fit_road_homography(_correspondences(synthetic_camera, road))
    assert h.rmse < 1e-9
    # the image-to-road map is the inverse of the plane columns of P
    truth = np.linalg.inv(synthetic_camera[:, [0, 1, 3]])
    truth /= truth[2, 2]
    np.testing.assert_allclose(h.matrix, truth, rtol=1e-7, atol=1e-10)
    img = project(synthetic_camera, road)
    for (u, v), r in zip(img, road):
        x, y, z = image_to_road(h, ImagePoint(u, v))
        assert abs(x - r[0]) < 1e-9 and abs(y - r[1]) < 1e-9 and z == 0.0


def test_image_to_road_identity():
    assert image_to_road(Homography(np.eye(3)), ImagePoint(5, 7)) == RoadPoint(5, 7, 0)


def test_horizon_point_at_infinity():
    m = np.array([[1.0, 0, 0], [0, 1.0, 0], [0.01, 0.002, 1.0]])
    h = Homography(m)
    u = 100.0
    v = -(1.0 + 0.01 * u) / 0.002
    with pytest.raises(AtInfinity):
        image_to_road(h, ImagePoint(u, v))


def test_two_lines_cross():
    lines = [((0, 0), (200, 100)), ((100, 0), (100, 200))]
    u, v = intersect_vertical_lines(lines)
    assert u == pytest.approx(100) and v == pytest.approx(50)


def test_parallel_lines():
    with pytest.raises(ParallelLines):
        intersect_vertical_lines([((0, 0), (0, 10)), ((5, 0), (5, 10))])


def test_noisy_lines_monte_carlo():
    rng = np.random.default_rng(7)
    vp = np.array([1920.0, -4000.0])
    lines = []
    for u in np.linspace(300, 3500, 10):
        a = np.array([u, 2000.0])
        d = (vp - a) / np.linalg.norm(vp - a)
        b = a + 800 * d
        lines.append((a + rng.normal(0, 0.5, 2), b + rng.normal(0, 0.5, 2)))
    u, v = intersect_vertical_lines(lines)
    assert np.hypot(u - vp[0], v - vp[1]) < 50


def test_fit_projection_recovers_p33(synthetic_camera):
    p_true = synthetic_camera
    h = fit_road_homography(_correspondences(p_true, lane_ticks()))
    box = Box3D(20, 6, 15, 6, 6)
    corners = box.corners()
    samples = [(RoadPoint(*c), ImagePoint(*i)) for c, i in zip(corners, project(p_true, corners))]
    proj = fit_projection(h.inverse(), _vp_z(p_true), samples)
    got = road_to_image(proj, box)
    assert np.sqrt(np.mean(np.sum((got - project(p_true, corners)) ** 2, axis=1))) < 1e-6
    np.testing.assert_allclose(proj.matrix[:, [0, 1, 3]], h.inverse().matrix)
    top = np.array([[35.0, 12.0, 6.0]])
    np.testing.assert_allclose(proj.project(top), project(p_true, top), atol=1e-6)


def test_fit_projection_needs_above_plane(synthetic_camera):
    h = Homography(np.eye(3))
    with pytest.raises(NoAbovePlaneSamples):
        fit_projection(h, ImagePoint(0, 0), [(RoadPoint(1, 1, 0), ImagePoint(1, 1))])


def test_orthographic_box_corners():
    p = np.array([[1.0, 0, 0, 0], [0, 1.0, 1.0, 0], [0, 0, 0, 1.0]])
    box = Box3D(0, 0, 1, 1, 1)
    got = road_to_image(CameraProjection(p), box)
    c = box.corners()
    np.testing.assert_allclose(got, np.column_stack([c[:, 0], c[:, 1] + c[:, 2]]))


def test_box_matches_direct_multiply(synthetic_camera):
    proj = CameraProjection(synthetic_camera)
    box = Box3D(80, -18, 40, 8.5, 13, direction="WB", cls="semi")
    c = box.corners()
    hom = np.column_stack([c, np.ones(8)]) @ synthetic_camera.T
    np.testing.assert_allclose(road_to_image(proj, box), hom[:, :2] / hom[:, 2:], atol=1e-9)


def test_box_behind_camera():
    # camera plane x = 0: w = x
    p = np.array([[0, 1.0, 0, 0], [0, 0, 1.0, 0], [1.0, 0, 0, 0]])
    with pytest.raises(AtInfinity):
        road_to_image(CameraProjection(p), Box3D(-5, 0, 10, 2, 2))


def test_curve_fit_cases():
    flat = fit_curve_offset([RoadPoint(x, 2.0) for x in range(5)])
    assert (flat.c0, flat.c1, flat.c2) == pytest.approx((2, 0, 0), abs=1e-12)
    xs = np.linspace(0, 200, 9)
    c = fit_curve_offset([RoadPoint(x, 0.001 * x * x + 0.1 * x + 3) for x in xs])
    np.testing.assert_allclose((c.c2, c.c1, c.c0), (0.001, 0.1, 3), atol=1e-9)
    with pytest.raises(TooFewPoints):
        fit_curve_offset([RoadPoint(0, 0), RoadPoint(1, 1)])
    with pytest.raises(DegenerateX):
        fit_curve_offset([RoadPoint(1, y) for y in range(4)])


def test_apply_curvature_example():
    c = CurveOffset(3, 0.1, 0.001)
    assert apply_curvature(c, RoadPoint(10, 5, 0)).y == pytest.approx(0.9, abs=1e-12)
    assert apply_curvature(CurveOffset(), RoadPoint(10, 5, 0)) == RoadPoint(10, 5, 0)


@given(
    st.floats(-1e3, 1e3), st.floats(-50, 50),
    st.floats(-10, 10), st.floats(-1, 1), st.floats(-1e-3, 1e-3),
)
def test_curvature_round_trip(x, y, c0, c1, c2):
    c = CurveOffset(c0, c1, c2)
    back = apply_curvature(c, apply_curvature(c, RoadPoint(x, y)), inverse=True)
    # y - f + f is exact unless the subtraction rounds; the error is one ulp of the larger term
    assert back.x == x
    assert abs(back.y - y) <= 2 * np.spacing(max(abs(y), abs(float(c(x))), 1e-300))


def test_round_trip_image_road(synthetic_camera):
    proj = CameraProjection(synthetic_camera)
    h = fit_road_homography(_correspondences(synthetic_camera, lane_ticks()))
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.uniform(0, 80, 50), rng.uniform(0, 36, 50), np.zeros(50)])
    back = h.transform(proj.project(pts))
    np.testing.assert_allclose(back, pts[:, :2], atol=1e-6)


def test_projection_shares_homography_on_plane(synthetic_camera):
    h = fit_road_homography(_correspondences(synthetic_camera, lane_ticks()))
    box = Box3D(20, 6, 15, 6, 6)
    c = box.corners()
    samples = [(RoadPoint(*a), ImagePoint(*b)) for a, b in zip(c, project(synthetic_camera, c))]
    proj = fit_projection(h.inverse(), _vp_z(synthetic_camera), samples)
    road = lane_ticks()
    np.testing.assert_allclose(proj.project(road), h.inverse().transform(road[:, :2]), rtol=0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_pixel_rescaling_equivariance(seed, scale):
    rng = np.random.default_rng(seed)
    cam = look_at_camera(
        [rng.uniform(0, 100), -rng.uniform(60, 150), rng.uniform(60, 140)],
        [rng.uniform(20, 80), rng.uniform(0, 40), 0.0],
    )
    road = lane_ticks()
    img = project(cam, road)
    h = fit_homography(img, road[:, :2]).matrix
    hs = fit_homography(img * scale, road[:, :2]).matrix
    s = np.diag([scale, scale, 1.0])
    np.testing.assert_allclose(hs @ s, h, rtol=1e-6, atol=1e-9)


def test_estimators(synthetic_camera):
    road = lane_ticks()
    img = project(synthetic_camera, road)
    est = RoadHomography().fit(img, road[:, :2])
    assert est.rmse_ < 1e-9
    np.testing.assert_allclose(est.transform(img), road[:, :2], atol=1e-9)
    np.testing.assert_allclose(est.inverse_transform(road[:, :2]), img, atol=1e-6)
    assert est.get_params() == {"refine_threshold": 1e-6}
    xs = np.linspace(0, 100, 6)
    lane = np.column_stack([xs, 12 + 1e-3 * xs ** 2])
    cc = CurveCorrection(reference_y=12.0).fit(lane)
    np.testing.assert_allclose(cc.transform(lane)[:, 1], 12.0, atol=1e-9)
