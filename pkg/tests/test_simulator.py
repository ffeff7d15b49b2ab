import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roadtrack.exceptions import InfeasibleDensity, ValidationError
from roadtrack.simulator import (
    EPOCH,
    NO_NOISE,
    NoiseConfig,
    Occlusion,
    RoadShape,
    SceneConfig,
    build_camera_layout,
    build_scene,
    corrupt_detections,
    frame_timing,
    generate_scene,
    preset,
    quantize,
    render_camera,
)
from roadtrack.timesync import WeightedObservation, ClockSynchronizer


def _truth_state(truth, t):
    return np.array([[v.x(t), v.y, v.l, v.w, v.h] for v in truth.vehicles])


def test_scene_is_deterministic():
    cfg = SceneConfig(seed=11, duration=20, profile="congested", vehicle_count=30)
    a, b = generate_scene(cfg), generate_scene(cfg)
    ts = np.linspace(0, 20, 41)
    assert [v.cls for v in a.vehicles] == [v.cls for v in b.vehicles]
    assert np.array_equal(_truth_state(a, ts[3]), _truth_state(b, ts[3]))
    assert all(np.array_equal(va.progress.c, vb.progress.c) for va, vb in zip(a.vehicles, b.vehicles))


def test_free_flow_speeds_stay_in_band():
    cfg = SceneConfig(seed=4, duration=60, profile="free-flow", vehicle_count=10)
    truth = generate_scene(cfg)
    ts = np.linspace(0, 60, 1201)
    lo, hi = cfg.speed_band
    for v in truth.vehicles:
        s = v.speed(ts)
        assert s.min() >= lo - 1e-9 and s.max() <= hi + 1e-9


def test_congested_profile_stops_and_goes():
    truth = generate_scene(preset("congested", seed=2, duration=60))
    ts = np.linspace(0, 60, 1201)
    speeds = np.array([v.speed(ts) for v in truth.vehicles])
    assert (speeds.min(axis=1) < 1e-6).any()
    assert speeds.max() <= truth.config.congested_max_speed + 1e-9
    assert speeds.min() >= -1e-9


def test_vehicle_count_beyond_capacity_is_infeasible():
    cfg = SceneConfig(seed=0, vehicle_count=400, lanes_per_direction=1, placement=(-500.0, 2000.0))
    with pytest.raises(InfeasibleDensity):
        generate_scene(cfg)


def test_invalid_config_rejected():
    with pytest.raises(ValidationError):
        SceneConfig(duration=0)
    with pytest.raises(ValidationError):
        SceneConfig(vehicle_count=0)
    with pytest.raises(ValidationError):
        SceneConfig(profile="gridlock")


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), profile=st.sampled_from(["free-flow", "slow", "congested"]))
def test_collision_free_with_one_second_headway(seed, profile):
    truth = generate_scene(preset(profile, seed=seed, duration=30, vehicle_count=40))
    ts = np.linspace(0, 30, 301)
    lanes = {}
    for v in truth.vehicles:
        lanes.setdefault((v.direction, v.lane), []).append(v)
    for vs in lanes.values():
        for lead, follow in zip(vs, vs[1:]):
            # progress of the follower's front stays behind the leader's rear
            gap = lead.progress(ts) - (follow.progress(ts) + follow.l)
            assert gap.min() > 0
            # the follower reaches any point at least 1 s after the leader
            assert np.all(follow.progress(ts + 1.0) + follow.l <= lead.progress(ts) + 1e-6)


def test_default_layout_covers_the_roadway():
    cfg = SceneConfig()
    cams = build_camera_layout(cfg)
    assert len(cams) == 16
    xs = np.linspace(0, cfg.roadway_length, 4001)
    covered = np.zeros_like(xs, dtype=bool)
    for a, b in zip(cams, cams[1:]):
        assert b.fov[0] < a.fov[1]
    for c in cams:
        covered |= (xs >= c.fov[0]) & (xs <= c.fov[1])
    assert covered.all()


def test_fov_corners_project_inside_the_image():
    cfg = SceneConfig()
    road = RoadShape(x_ref=cfg.roadway_length / 2)
    for cam in build_camera_layout(cfg, road=road):
        pts = [[x, y, 0.0] for x in cam.fov for y in (-48.0, 48.0)]
        uv = cam.project_world(road.to_world(pts))
        assert cam.in_frame(uv).all()


def _single_cam(**kw):
    cfg = SceneConfig(seed=1)
    cam = build_camera_layout(cfg, n_cameras=1)[0]
    from dataclasses import replace

    return replace(cam, **kw)


def test_zero_corruption_stamps_are_floored_true_times():
    cam = _single_cam()
    tm = frame_timing(cam, 0.0, 10.0, seed=0)
    assert np.array_equal(tm.raw, quantize(EPOCH + tm.content_time, 0.01))
    assert np.allclose(np.diff(tm.content_time), 1 / 30)
    assert np.all(EPOCH + tm.content_time - tm.raw >= -1e-6)
    assert np.all(EPOCH + tm.content_time - tm.raw < 0.01 + 1e-6)


def test_scripted_double_repeats_frame_and_stamp():
    cam = _single_cam(double_frames=frozenset({30}))
    tm = frame_timing(cam, 0.0, 5.0, seed=0)
    assert tm.doubled[30] and not tm.doubled[29]
    assert tm.raw[30] == tm.raw[29]
    assert tm.content_time[30] == tm.content_time[29]
    assert tm.content_time[31] - tm.content_time[29] == pytest.approx(2 / 30)


def test_scripted_skip_leaves_a_gap_in_capture_only():
    cam = _single_cam(skip_frames=frozenset({30}))
    tm = frame_timing(cam, 0.0, 5.0, seed=0)
    assert tm.content_time[30] - tm.content_time[29] == pytest.approx(2 / 30)
    assert tm.residual[30] == pytest.approx(1 / 30)
    assert tm.residual[31] == 0


def test_event_rates_follow_probabilities():
    cam = _single_cam(p_skip=0.05, p_double=0.05)
    tm = frame_timing(cam, 0.0, 600.0, seed=3)
    assert tm.doubled.mean() == pytest.approx(0.05, abs=0.01)
    assert (np.abs(tm.residual) > 0).mean() == pytest.approx(0.10, abs=0.015)


@pytest.mark.parametrize("offset", [0.1, -0.23])
def test_offset_is_inverted_and_recoverable(offset):
    cam = _single_cam(clock_offset=offset)
    tm = frame_timing(cam, 0.0, 10.0, seed=0)
    assert np.array_equal(tm.raw, quantize(EPOCH + tm.content_time - offset, 0.01))
    # invertibility before quantisation: true - raw = offset + eps
    pre = EPOCH + tm.content_time - offset - tm.residual
    assert np.all((pre - tm.raw >= -1e-6) & (pre - tm.raw < 0.01 + 1e-6))


def test_offsets_recovered_by_sync_round_trip():
    cfg = SceneConfig(seed=5, duration=20, profile="constant", vehicle_count=24)
    sc = build_scene(cfg, n_cameras=4, calib_noise_px=0.0, offset_range=0.3)
    obs = {}
    for a in sc.annotations:
        obs.setdefault(a.vid, []).append(
            WeightedObservation(a.t_raw - sc.epoch, a.box.x, a.box.y, a.weight, a.camera, a.frame_index, a.weight_y)
        )
    sync = ClockSynchronizer(residuals=False).fit(obs)
    for cam in sc.cameras:
        assert sync.offsets_[cam.id] == pytest.approx(cam.clock_offset, abs=0.02)


def test_render_includes_only_vehicles_meeting_fov():
    cfg = SceneConfig(seed=8, duration=5, vehicle_count=30)
    sc = build_scene(cfg, n_cameras=4)
    cam = sc.cameras[1]
    frames = render_camera(sc.truth, cam, sc.timings[cam.id])
    for fr in frames[::10]:
        ids = {vid for vid, _ in fr.boxes}
        for v in sc.truth.vehicles:
            b = v.box(fr.content_time)
            xs = sorted([b.x, b.x + (b.l if v.direction == "EB" else -b.l)])
            assert (v.vid in ids) == (xs[1] > cam.fov[0] and xs[0] < cam.fov[1])


@pytest.fixture(scope="module")
def busy_scene():
    cfg = SceneConfig(seed=21, duration=30, vehicle_count=80)
    return build_scene(cfg, n_cameras=4, calib_noise_px=0.0)


def test_zero_noise_detections_equal_truth(busy_scene):
    dets = busy_scene.detections(NO_NOISE)
    for cam in busy_scene.cameras:
        for fr, df in zip(busy_scene.annotated_frames[cam.id], dets[cam.id]):
            assert [d.box for d in df.detections] == [b for _, b in fr.boxes]
            assert all(d.confidence == 1.0 for d in df.detections)


def test_uniform_drop_rate(busy_scene):
    noise = NoiseConfig(p_fn=0.5, nms=False)
    dets = busy_scene.detections(noise, seed=0)
    n_true = sum(len(f.boxes) for frames in busy_scene.annotated_frames.values() for f in frames)
    n_kept = sum(len(f.detections) for frames in dets.values() for f in frames)
    assert n_true >= 10_000
    assert 1 - n_kept / n_true == pytest.approx(0.5, abs=0.02)


def test_scripted_occlusion_window(busy_scene):
    cam = busy_scene.cameras[2].id
    frames = busy_scene.annotated_frames[cam]
    counts = {}
    for f in frames:
        for vid, _ in f.boxes:
            counts[vid] = counts.get(vid, 0) + 1
    vid = max(counts, key=counts.get)
    first = next(f.index for f in frames if any(v == vid for v, _ in f.boxes))
    start = first + 5
    noise = NoiseConfig(occlusions=(Occlusion(cam, vid, start, 150),), nms=False)
    dets = corrupt_detections(frames, noise, seed=0)
    for f, df in zip(frames, dets):
        present = any(v == vid for v, _ in f.boxes)
        detected = any(d.source == vid for d in df.detections)
        assert detected == (present and not start <= f.index < start + 150)


def test_far_lanes_lose_more_and_fps_score_lower(busy_scene):
    noise = NoiseConfig(p_fn_far=0.4, fp_rate=0.5, nms=False)
    cam = busy_scene.cameras[1]
    dets = busy_scene.detections(noise, seed=1)[cam.id]
    rank = busy_scene.lane_rank(cam)
    kept_near = kept_far = tot_near = tot_far = 0
    for f, df in zip(busy_scene.annotated_frames[cam.id], dets):
        got = {d.source for d in df.detections}
        for vid, b in f.boxes:
            far = rank(b) > 0.5
            if far:
                tot_far += 1
                kept_far += vid in got
            else:
                tot_near += 1
                kept_near += vid in got
    assert kept_far / tot_far < kept_near / tot_near
    conf_t = [d.confidence for df in dets for d in df.detections if d.source is not None]
    conf_f = [d.confidence for df in dets for d in df.detections if d.source is None]
    assert len(conf_f) > 50 and np.median(conf_t) > np.median(conf_f)


def test_corruption_is_deterministic(busy_scene):
    noise = NoiseConfig(pos_sigma=(0.5, 0.2), dim_sigma=0.3, p_fn=0.1, fp_rate=0.2)
    a = busy_scene.detections(noise, seed=9)
    b = busy_scene.detections(noise, seed=9)
    for cam in a:
        assert [(d.box, d.confidence) for f in a[cam] for d in f.detections] == [
            (d.box, d.confidence) for f in b[cam] for d in f.detections
        ]


def test_nms_leaves_no_overlapping_same_direction_pairs(busy_scene):
    from roadtrack.boxes import boxes_to_array, iou_matrix

    noise = NoiseConfig(pos_sigma=(0.5, 0.2), fp_rate=1.0)
    dets = busy_scene.detections(noise, seed=2)
    for frames in dets.values():
        for f in frames[::15]:
            for direction in ("EB", "WB"):
                bs = [d.box for d in f.detections if d.box.direction == direction]
                if len(bs) > 1:
                    iou = iou_matrix(boxes_to_array(bs), boxes_to_array(bs)) - np.eye(len(bs))
                    assert iou.max() <= 0.01 + 1e-12
